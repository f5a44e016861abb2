use serde::{Deserialize, Serialize};

use super::{check_len, StatsError};

/// How pairs with equal predicted hazard are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieRule {
    /// Tied hazards earn nothing (strict inequality).
    #[default]
    Strict,
    /// Tied hazards earn half a concordant pair.
    Half,
}

/// Harrell's concordance index. A pair `(i, j)` is usable when `δ_j = 1` and
/// `T_j < T_i`; it is concordant when `η_j > η_i`.
pub fn c_index(times: &[f64], events: &[bool], hazards: &[f64], ties: TieRule) -> Result<f64, StatsError> {
    let n = times.len();
    check_len("events", n, events.len())?;
    check_len("hazards", n, hazards.len())?;
    if hazards.iter().chain(times).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite("c-index input"));
    }
    // sort by time so each event only scans strictly later subjects
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut usable = 0u64;
    let mut score = 0u64; // in half-pair units
    for (pos, &j) in order.iter().enumerate() {
        if !events[j] {
            continue;
        }
        for &i in &order[pos + 1..] {
            if times[i] <= times[j] {
                continue;
            }
            usable += 1;
            if hazards[j] > hazards[i] {
                score += 2;
            } else if hazards[j] == hazards[i] && ties == TieRule::Half {
                score += 1;
            }
        }
    }
    if usable == 0 {
        return Err(StatsError::NoUsablePairs);
    }
    Ok(score as f64 / (2 * usable) as f64)
}
