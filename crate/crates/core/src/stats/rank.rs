use super::{two_sided_p, StatsError};

/// Pooled sample size at or below which the p-value is computed by full
/// enumeration of rank assignments.
const EXACT_MAX_N: usize = 12;

fn midranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut j = k;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[k]] {
            j += 1;
        }
        let r = (k + j) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=j] {
            ranks[i] = r;
        }
        k = j + 1;
    }
    ranks
}

// visit every size-m subset sum of `ranks`
fn subset_sums(ranks: &[f64], m: usize, start: usize, acc: f64, out: &mut impl FnMut(f64)) {
    if m == 0 {
        out(acc);
        return;
    }
    for i in start..=ranks.len() - m {
        subset_sums(ranks, m - 1, i + 1, acc + ranks[i], out);
    }
}

/// Two-sided Wilcoxon rank-sum p-value with midranks for ties. Exact by
/// enumeration for `nA + nB ≤ 12`, otherwise the tie-corrected normal
/// approximation with continuity correction.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty("rank-sum sample"));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite("rank-sum sample"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = pooled.len();
    let ranks = midranks(&pooled);
    let w: f64 = ranks[..a.len()].iter().sum();
    let expected = na * (n as f64 + 1.0) / 2.0;
    let dev = (w - expected).abs();

    if n <= EXACT_MAX_N {
        let (mut hits, mut total) = (0u64, 0u64);
        subset_sums(&ranks, a.len(), 0, 0.0, &mut |s| {
            total += 1;
            if (s - expected).abs() >= dev - 1e-9 {
                hits += 1;
            }
        });
        return Ok((hits as f64 / total as f64).min(1.0));
    }

    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut k = 0;
    while k < n {
        let j = sorted[k..].iter().take_while(|&&v| v == sorted[k]).count();
        tie_term += (j * j * j - j) as f64;
        k += j;
    }
    let nf = n as f64;
    let var = na * nb / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return Ok(1.0);
    }
    let z = ((dev - 0.5).max(0.0)) / var.sqrt();
    Ok(two_sided_p(z).min(1.0))
}
