use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_len, cox_fit, mean, median, percentile_sorted, std_dev, two_sided_p, StatsError};
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapHr {
    /// Mean of the bootstrapped hazard ratios.
    pub hr_mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub z: f64,
    pub p: f64,
    /// Set when the log-HR spread is zero and the Wald statistic is undefined.
    pub degenerate: bool,
    pub failed: usize,
    /// Hazard ratios of the successful replicates, in replicate order.
    pub hazard_ratios: Vec<f64>,
}

/// Bootstrap the univariate Cox hazard ratio of a risk score.
///
/// The score is z-scored once over the full sample (sample SD). Replicate
/// `r` resamples patients with replacement from a generator seeded with
/// `seed + r` and refits; replicates whose fit fails or does not converge
/// are counted as failures. The Wald statistic is
/// `ln(mean HR) / SD(ln HR)` with the sample SD.
pub fn bootstrap_hr(
    hazards: &[f64],
    times: &[f64],
    events: &[bool],
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<BootstrapHr, StatsError> {
    let n = hazards.len();
    check_len("times", n, times.len())?;
    check_len("events", n, events.len())?;
    if replicates < 2 {
        return Err(StatsError::TooFewReplicates { min: 2, got: replicates });
    }
    if n < 2 {
        return Err(StatsError::Empty("bootstrap sample"));
    }
    let (m, sd) = (mean(hazards), std_dev(hazards, 1));
    // also rejects NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(sd > 0.0) {
        return Err(StatsError::ConstantCovariate(0));
    }
    let z: Vec<f64> = hazards.iter().map(|h| (h - m) / sd).collect();

    let results = par::map_range(exec, replicates, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let zs: Vec<Vec<f64>> = idx.iter().map(|&i| vec![z[i]]).collect();
        let ts: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
        let ds: Vec<bool> = idx.iter().map(|&i| events[i]).collect();
        match cox_fit(&zs, &ts, &ds) {
            Ok(f) if f.converged => Some(f.hazard_ratio[0]),
            _ => None,
        }
    });
    let hrs: Vec<f64> = results.into_iter().flatten().collect();
    let failed = replicates - hrs.len();
    if 2 * failed > replicates || hrs.len() < 2 {
        return Err(StatsError::ReplicatesFailed { failed, total: replicates });
    }
    let logs: Vec<f64> = hrs.iter().map(|h| h.ln()).collect();
    let hr_mean = mean(&hrs);
    let log_sd = std_dev(&logs, 1);
    let centre = hr_mean.ln();
    let (z, p, degenerate) = if log_sd > 0.0 {
        let z = centre / log_sd;
        (z, two_sided_p(z), false)
    } else if centre == 0.0 {
        (0.0, 1.0, true)
    } else {
        (f64::INFINITY.copysign(centre), 0.0, true)
    };
    let mut sorted = hrs.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapHr {
        hr_mean,
        ci_low: percentile_sorted(&sorted, 2.5),
        ci_high: percentile_sorted(&sorted, 97.5),
        z,
        p,
        degenerate,
        failed,
        hazard_ratios: hrs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationResult {
    pub observed: f64,
    pub null: Vec<f64>,
    /// Fraction of null scores `>=` the observed score; `None` when no
    /// replicates were run.
    pub p: Option<f64>,
}

/// Label-shuffling randomization test. `runner(times, events, replicate)`
/// must be deterministic; it is called once on the original labels with
/// `replicate = None`, then once per shuffled copy. Replicate `r` shuffles
/// `(T, δ)` pairs jointly with a generator seeded by `seed + r`.
pub fn randomization_test<F, E>(
    runner: F,
    times: &[f64],
    events: &[bool],
    replicates: usize,
    seed: u64,
    exec: Execution,
) -> Result<RandomizationResult, StatsError>
where
    F: Fn(&[f64], &[bool], Option<usize>) -> Result<f64, E> + Sync + Send,
    E: std::fmt::Display,
{
    check_len("events", times.len(), events.len())?;
    let run = |t: &[f64], d: &[bool], r: Option<usize>| runner(t, d, r).map_err(|e| StatsError::Runner(e.to_string()));
    let observed = run(times, events, None)?;
    let null = par::map_range(exec, replicates, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
        let mut perm: Vec<usize> = (0..times.len()).collect();
        perm.shuffle(&mut rng);
        let t: Vec<f64> = perm.iter().map(|&i| times[i]).collect();
        let d: Vec<bool> = perm.iter().map(|&i| events[i]).collect();
        run(&t, &d, Some(r))
    })
    .into_iter()
    .collect::<Result<Vec<f64>, _>>()?;
    let p = (!null.is_empty()).then(|| null.iter().filter(|&&s| s >= observed).count() as f64 / null.len() as f64);
    Ok(RandomizationResult { observed, null, p })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskGroup {
    Low,
    High,
}

/// Median dichotomization: hazard above the median is high risk.
pub fn stratify(hazards: &[f64]) -> Result<Vec<RiskGroup>, StatsError> {
    if hazards.len() < 2 {
        return Err(StatsError::Empty("stratification input"));
    }
    let med = median(&mut hazards.to_vec());
    Ok(hazards.iter().map(|&h| if h > med { RiskGroup::High } else { RiskGroup::Low }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{c_index, TieRule};

    fn planted(n: usize, beta: f64, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let t: Vec<f64> = x.iter().map(|v| -rng.gen_range(1e-12..1.0f64).ln() / (beta * v).exp()).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..4.0)).collect();
        let d = t.iter().zip(&c).map(|(a, b)| a <= b).collect();
        let obs = t.iter().zip(&c).map(|(a, b)| a.min(*b)).collect();
        (x, obs, d)
    }

    #[test]
    fn strong_effect_excludes_one() {
        let (x, t, d) = planted(150, 1.2, 7);
        let r = bootstrap_hr(&x, &t, &d, 300, 42, Execution::Parallel).unwrap();
        assert!(r.ci_low > 1.0);
        assert!(r.p < 0.01);
        assert!(r.ci_low <= r.hr_mean && r.hr_mean <= r.ci_high);
        let s = bootstrap_hr(&x, &t, &d, 300, 42, Execution::Sequential).unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn bootstrap_errors() {
        assert!(matches!(
            bootstrap_hr(&[1.0, 2.0], &[1.0, 2.0], &[true, true], 1, 0, Execution::Sequential),
            Err(StatsError::TooFewReplicates { .. })
        ));
        assert!(matches!(
            bootstrap_hr(&[1.0, 1.0], &[1.0, 2.0], &[true, true], 10, 0, Execution::Sequential),
            Err(StatsError::ConstantCovariate(0))
        ));
        // no events at all: every refit fails
        let e = bootstrap_hr(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &[false; 3], 10, 0, Execution::Sequential).unwrap_err();
        assert!(e.is_numerical());
    }

    #[test]
    fn randomization_zero_replicates() {
        let r = randomization_test(|_, _, _| Ok::<_, String>(0.7), &[1.0, 2.0], &[true, true], 0, 1, Execution::Sequential)
            .unwrap();
        assert!(r.null.is_empty());
        assert_eq!(r.p, None);
    }

    #[test]
    fn randomization_planted_signal() {
        let (x, t, d) = planted(120, 1.5, 3);
        let score = |t: &[f64], d: &[bool], _: Option<usize>| c_index(t, d, &x, TieRule::Strict);
        let r = randomization_test(score, &t, &d, 200, 9, Execution::Parallel).unwrap();
        assert!(r.p.unwrap() <= 1.0 / 200.0);
        let m = mean(&r.null);
        assert!((0.45..=0.55).contains(&m), "{m}");
        let s = randomization_test(score, &t, &d, 200, 9, Execution::Sequential).unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn stratify_examples() {
        use RiskGroup::*;
        assert_eq!(stratify(&[4.0, 1.0, 3.0, 2.0]).unwrap(), vec![High, Low, High, Low]);
        assert_eq!(stratify(&[2.0; 5]).unwrap(), vec![Low; 5]);
        assert_eq!(stratify(&[1.0, 2.0, 3.0]).unwrap(), vec![Low, Low, High]);
        assert!(stratify(&[1.0]).is_err());
    }
}
