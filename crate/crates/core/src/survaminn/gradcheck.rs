use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{batch_objective, stack_instances, DropoutMasks, Network, PatientBag, Pooling, SurvError};
use crate::SeedStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub pooling: Pooling,
    pub alpha: f64,
    pub h: f64,
    /// Number of parameters probed; capped at the parameter count.
    pub n_coords: usize,
    /// Dropout rate for the fixed masks used on both sides of the difference.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { pooling: Pooling::Lse, alpha: 0.5, h: 1e-5, n_coords: 200, dropout: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// max |a − n| / max(|a|, |n|, 1e-6) over the checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±h probe crossed a ReLU or max-pooling kink.
    pub skipped: usize,
}

// ReLU activity plus the argmax of every bag, for detecting non-smooth probes
fn kink_signature(net: &Network, bags: &[&PatientBag], masks: &DropoutMasks) -> Vec<usize> {
    let (x, offsets) = stack_instances(bags);
    let tape = net.forward_tape(&x, *offsets.last().unwrap(), masks);
    let eta = tape.hazards();
    let mut sig: Vec<usize> = tape.active_pattern(net).into_iter().map(usize::from).collect();
    for w in offsets.windows(2) {
        let seg = &eta[w[0]..w[1]];
        sig.push((0..seg.len()).fold(0, |b, i| if seg[i] > seg[b] { i } else { b }));
    }
    sig
}

/// Compare the analytic gradient of `(1 − α)·MSE + α·Cox` with central
/// differences on a random subset of parameters. Dropout masks, when
/// enabled, are sampled once and held fixed.
pub fn gradient_check(net: &Network, bags: &[PatientBag], config: &GradCheckConfig) -> Result<GradCheckReport, SurvError> {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(config.h > 0.0) {
        return Err(SurvError::BadConfig("h must be positive".into()));
    }
    let batch: Vec<&PatientBag> = bags.iter().collect();
    let seeds = SeedStream::new(config.seed);
    let n_inst = batch.iter().map(|b| b.instances.len()).sum();
    let masks = DropoutMasks::sample(net, n_inst, config.dropout, &mut seeds.rng("gradcheck/masks", 0, 0));
    let (_, grad) = batch_objective(net, &batch, config.pooling, config.alpha, &masks, true)?;
    let grad = grad.expect("gradient requested");

    let k = config.n_coords.min(net.n_params());
    let mut coords = index::sample(&mut seeds.rng("gradcheck/coords", 0, 0), net.n_params(), k).into_vec();
    coords.sort_unstable();

    let base_sig = kink_signature(net, &batch, &masks);
    let mut probe = net.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, checked: 0, skipped: 0 };
    for c in coords {
        let theta = net.params()[c];
        let mut eval = |v: f64| -> Result<(f64, Vec<usize>), SurvError> {
            probe.params_mut()[c] = v;
            let (parts, _) = batch_objective(&probe, &batch, config.pooling, config.alpha, &masks, false)?;
            Ok((parts.total, kink_signature(&probe, &batch, &masks)))
        };
        let (fp, sp) = eval(theta + config.h)?;
        let (fm, sm) = eval(theta - config.h)?;
        probe.params_mut()[c] = theta;
        if sp != base_sig || sm != base_sig {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * config.h);
        let a = grad[c];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survaminn::Architecture;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Network, Vec<PatientBag>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture { input_dim: 5, encoder: vec![8, 6, 4], regressor: vec![3] };
        let mut net = Network::init(arch, &mut rng).unwrap();
        // small random biases keep most units active
        for l in net.layers().to_vec() {
            for b in &mut net.params_mut()[l.offset + l.fan_in * l.fan_out..l.offset + l.n_params()] {
                *b = rng.gen_range(0.05..0.3);
            }
        }
        let bags = (0..6)
            .map(|i| PatientBag {
                patient_id: format!("p{i}"),
                instances: (0..rng.gen_range(1..4)).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
                time: rng.gen_range(1.0..10.0),
                event: i % 3 != 2,
                largest: Some(0),
            })
            .collect();
        (net, bags)
    }

    #[test]
    fn empty_subset_is_zero() {
        let (net, bags) = setup(0);
        let r = gradient_check(&net, &bags, &GradCheckConfig { n_coords: 0, ..Default::default() }).unwrap();
        assert_eq!((r.max_rel_error, r.checked), (0.0, 0));
    }

    #[test]
    fn all_losses_and_poolings() {
        let (net, bags) = setup(1);
        for alpha in [0.0, 0.5, 1.0] {
            for pooling in Pooling::ALL {
                let cfg = GradCheckConfig { pooling, alpha, n_coords: usize::MAX, ..Default::default() };
                let r = gradient_check(&net, &bags, &cfg).unwrap();
                assert!(r.max_rel_error < 1e-4, "{pooling} alpha={alpha}: {r:?}");
                assert!(r.checked > net.n_params() / 2, "{r:?}");
            }
        }
    }

    #[test]
    fn with_fixed_dropout() {
        let (net, bags) = setup(2);
        let cfg = GradCheckConfig { dropout: 0.2, n_coords: usize::MAX, seed: 3, ..Default::default() };
        let r = gradient_check(&net, &bags, &cfg).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
