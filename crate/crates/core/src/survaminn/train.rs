use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{batch_objective, Architecture, DropoutMasks, Network, PatientBag, Pooling, SurvError};
use crate::SeedStream;

/// Decoupled weight decay Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64) -> Self {
        Self { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *p -= self.lr * self.weight_decay * *p;
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub pooling: Pooling,
    pub seed: u64,
    /// Optimizer steps per epoch, each on a fresh balanced sample.
    pub steps_per_epoch: usize,
    pub encoder: Vec<usize>,
    pub regressor: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 250,
            learning_rate: 4e-4,
            weight_decay: 1e-3,
            dropout: 0.2,
            pooling: Pooling::Lse,
            seed: 0,
            steps_per_epoch: 1,
            encoder: vec![64, 32, 16],
            regressor: vec![8],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SurvError> {
        let bad = |m: &str| Err(SurvError::BadConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.steps_per_epoch == 0 {
            return bad("steps_per_epoch must be at least 1");
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture { input_dim, encoder: self.encoder.clone(), regressor: self.regressor.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub alpha: f64,
    pub mse: f64,
    pub cox: Option<f64>,
    pub total: f64,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub network: Network,
    pub log: Vec<EpochLog>,
}

/// Equal-sized draws without replacement from the censored and uncensored
/// groups (size = the smaller group). If one group is empty the other is
/// used whole. Returned indices are sorted.
pub fn balanced_sample<R: Rng>(events: &[bool], rng: &mut R) -> Vec<usize> {
    let unc: Vec<usize> = (0..events.len()).filter(|&i| events[i]).collect();
    let cen: Vec<usize> = (0..events.len()).filter(|&i| !events[i]).collect();
    if unc.is_empty() || cen.is_empty() {
        return (0..events.len()).collect();
    }
    let k = unc.len().min(cen.len());
    let mut out: Vec<usize> = index::sample(rng, unc.len(), k)
        .into_iter()
        .map(|i| unc[i])
        .chain(index::sample(rng, cen.len(), k).into_iter().map(|i| cen[i]))
        .collect();
    out.sort_unstable();
    out
}

/// Train a fresh network on `bags`. Epoch `e` (0-based) uses `α = e / E`.
pub fn train(bags: &[PatientBag], config: &TrainConfig) -> Result<TrainedModel, SurvError> {
    config.validate()?;
    let first = bags.first().ok_or(SurvError::TooFewUncensored(0))?;
    let dim = first.instances.first().map_or(0, Vec::len);
    for b in bags {
        b.validate(dim)?;
    }
    let n_events = bags.iter().filter(|b| b.event).count();
    if n_events < 2 {
        return Err(SurvError::TooFewUncensored(n_events));
    }
    let seeds = SeedStream::new(config.seed);
    let mut network = Network::init(config.architecture(dim), &mut seeds.rng("survaminn/init", 0, 0))?;
    let mut rng = seeds.rng("survaminn/epochs", 0, 0);
    let mut opt = AdamW::new(network.n_params(), config.learning_rate, config.weight_decay);
    let events: Vec<bool> = bags.iter().map(|b| b.event).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let alpha = epoch as f64 / config.epochs as f64;
        for step in 0..config.steps_per_epoch {
            let pick = balanced_sample(&events, &mut rng);
            let batch: Vec<&PatientBag> = pick.iter().map(|&i| &bags[i]).collect();
            let n_inst: usize = batch.iter().map(|b| b.instances.len()).sum();
            let masks = DropoutMasks::sample(&network, n_inst, config.dropout, &mut rng);
            let (parts, grad) = batch_objective(&network, &batch, config.pooling, alpha, &masks, true)?;
            let grad = grad.expect("gradient requested");
            if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(SurvError::Diverged(epoch));
            }
            opt.step(network.params_mut(), &grad);
            if step + 1 == config.steps_per_epoch {
                log.push(EpochLog { epoch, alpha, mse: parts.mse, cox: parts.cox, total: parts.total, batch: batch.len() });
            }
        }
    }
    Ok(TrainedModel { network, log })
}

/// Mean of the available phase hazards per patient, in `patients` order.
pub fn late_fusion(phases: &[&BTreeMap<String, f64>], patients: &[String]) -> Result<Vec<f64>, SurvError> {
    patients
        .iter()
        .map(|p| {
            let vals: Vec<f64> = phases.iter().filter_map(|m| m.get(p).copied()).collect();
            if vals.is_empty() {
                Err(SurvError::MissingPatient(p.clone()))
            } else {
                Ok(vals.iter().sum::<f64>() / vals.len() as f64)
            }
        })
        .collect()
}
