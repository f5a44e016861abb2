use serde::{Deserialize, Serialize};

use super::{check_len, StatsError};

/// Product-limit survival estimate on the grid of distinct observed times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    /// S(t) just after each grid time.
    pub survival: Vec<f64>,
    /// Number still at risk at each grid time (T ≥ t).
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl SurvivalCurve {
    /// Right-continuous step function; 1 before the first time.
    pub fn eval(&self, t: f64) -> f64 {
        match self.times.partition_point(|&x| x <= t) {
            0 => 1.0,
            k => self.survival[k - 1],
        }
    }
}

pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<SurvivalCurve, StatsError> {
    check_len("events", times.len(), events.len())?;
    if times.is_empty() {
        return Err(StatsError::Empty("kaplan-meier input"));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(StatsError::NonFinite("times"));
    }
    let mut idx: Vec<usize> = (0..times.len()).collect();
    idx.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut curve = SurvivalCurve { times: vec![], survival: vec![], at_risk: vec![], events: vec![] };
    let mut s = 1.0;
    let mut k = 0;
    while k < idx.len() {
        let t = times[idx[k]];
        let at_risk = idx.len() - k;
        let mut d = 0;
        while k < idx.len() && times[idx[k]] == t {
            d += events[idx[k]] as usize;
            k += 1;
        }
        if d > 0 {
            s *= 1.0 - d as f64 / at_risk as f64;
        }
        curve.times.push(t);
        curve.survival.push(s);
        curve.at_risk.push(at_risk);
        curve.events.push(d);
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRank {
    pub chi2: f64,
    pub p: f64,
    pub observed_a: f64,
    pub expected_a: f64,
    pub variance: f64,
}

/// Two-group log-rank test with hypergeometric variance; tied event times
/// are handled together.
pub fn log_rank(
    times_a: &[f64],
    events_a: &[bool],
    times_b: &[f64],
    events_b: &[bool],
) -> Result<LogRank, StatsError> {
    check_len("group A events", times_a.len(), events_a.len())?;
    check_len("group B events", times_b.len(), events_b.len())?;
    if times_a.is_empty() || times_b.is_empty() {
        return Err(StatsError::Empty("log-rank group"));
    }
    let mut all: Vec<(f64, bool, bool)> = times_a
        .iter()
        .zip(events_a)
        .map(|(&t, &e)| (t, e, true))
        .chain(times_b.iter().zip(events_b).map(|(&t, &e)| (t, e, false)))
        .collect();
    if all.iter().any(|r| !r.0.is_finite()) {
        return Err(StatsError::NonFinite("times"));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut n_a, mut n) = (times_a.len() as f64, all.len() as f64);
    let (mut o, mut e, mut v) = (0.0, 0.0, 0.0);
    let mut k = 0;
    while k < all.len() {
        let t = all[k].0;
        let (mut d, mut d_a, mut leave, mut leave_a) = (0.0, 0.0, 0.0, 0.0);
        while k < all.len() && all[k].0 == t {
            let (_, ev, in_a) = all[k];
            d += ev as u8 as f64;
            d_a += (ev && in_a) as u8 as f64;
            leave += 1.0;
            leave_a += in_a as u8 as f64;
            k += 1;
        }
        if d > 0.0 {
            o += d_a;
            e += d * n_a / n;
            if n > 1.0 {
                v += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1.0);
            }
        }
        n -= leave;
        n_a -= leave_a;
    }
    let chi2 = if v > 0.0 { (o - e).powi(2) / v } else { 0.0 };
    let p = statrs::function::erf::erfc((chi2 / 2.0).sqrt()).clamp(0.0, 1.0);
    Ok(LogRank { chi2, p, observed_a: o, expected_a: e, variance: v })
}
