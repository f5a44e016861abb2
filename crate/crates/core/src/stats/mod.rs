//! Evaluation metrics and statistical tests.

mod concordance;
mod cox;
mod detection;
mod km;
mod rank;
mod resample;

use thiserror::Error;

use crate::volume::VolumeError;

pub use concordance::{c_index, TieRule};
pub use cox::{cox_fit, partial_log_likelihood, CoxFit};
pub use detection::{dice, match_detections, DetectionMatch, DetectionReport, MATCH_DICE};
pub use km::{kaplan_meier, log_rank, LogRank, SurvivalCurve};
pub use rank::wilcoxon_rank_sum;
pub use resample::{bootstrap_hr, randomization_test, stratify, BootstrapHr, RandomizationResult, RiskGroup};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("no usable pairs for the concordance index")]
    NoUsablePairs,
    #[error("no events")]
    NoEvents,
    #[error("covariate {0} is constant")]
    ConstantCovariate(usize),
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("need at least {min} replicates, got {got}")]
    TooFewReplicates { min: usize, got: usize },
    #[error("{failed} of {total} bootstrap replicates failed")]
    ReplicatesFailed { failed: usize, total: usize },
    #[error("replicate runner failed: {0}")]
    Runner(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

impl StatsError {
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            StatsError::SingularInformation | StatsError::NonFinite(_) | StatsError::ReplicatesFailed { .. }
        )
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), StatsError> {
    if expected == got {
        Ok(())
    } else {
        Err(StatsError::LengthMismatch { what, expected, got })
    }
}

/// Median with the even-count midpoint convention. `values` must be
/// non-empty; it is sorted in place.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Percentile `q` in `[0, 100]` of sorted data, interpolating linearly
/// between order statistics at rank `q/100 · (n − 1)`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let pos = (q.clamp(0.0, 100.0) / 100.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Standard deviation with `n − ddof` in the denominator.
pub fn std_dev(x: &[f64], ddof: usize) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - ddof) as f64).sqrt()
}

/// Two-sided normal p-value `2·(1 − Φ(|z|))`.
pub fn two_sided_p(z: f64) -> f64 {
    statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile_sorted(&x, 0.0), 1.0);
        assert_eq!(percentile_sorted(&x, 100.0), 4.0);
        assert_eq!(percentile_sorted(&x, 50.0), 2.5);
        assert!((percentile_sorted(&x, 10.0) - 1.3).abs() < 1e-12);
        assert_eq!(percentile_sorted(&[7.0], 33.0), 7.0);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn p_values() {
        assert_eq!(two_sided_p(0.0), 1.0);
        let p = two_sided_p(1.959963984540054);
        // statrs erfc is good to a few 1e-12 here
        assert!((p - 0.05).abs() < 1e-9, "{p}");
        assert_eq!(two_sided_p(-1.959963984540054), p);
    }
}
