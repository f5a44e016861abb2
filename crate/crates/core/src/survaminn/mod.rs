//! Multiple-instance survival network: an autoencoder over tumor feature
//! vectors with a hazard regressor on the bottleneck, pooled to one hazard
//! per patient and trained on a scheduled mix of reconstruction and Cox
//! partial-likelihood loss.

mod gradcheck;
mod network;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
pub use network::{Architecture, Branch, DropoutMasks, LayerSpec, Network};
pub use train::{balanced_sample, late_fusion, train, AdamW, EpochLog, TrainConfig, TrainedModel};

#[derive(Debug, Error)]
pub enum SurvError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("patient {0} has no instances")]
    EmptyBag(String),
    #[error("patient {0} has no largest-tumor index")]
    MissingLargest(String),
    #[error("patient {patient}: largest index {index} out of range")]
    LargestOutOfRange { patient: String, index: usize },
    #[error("patient {0}: survival time must be finite and positive")]
    BadTime(String),
    #[error("no uncensored patient in batch")]
    NoUncensored,
    #[error("training needs at least 2 uncensored patients, got {0}")]
    TooFewUncensored(usize),
    #[error("patient {0} missing from every phase")]
    MissingPatient(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("loss became non-finite at epoch {0}")]
    Diverged(usize),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SurvError {
    pub fn is_numerical(&self) -> bool {
        matches!(self, SurvError::NonFinite(_) | SurvError::Diverged(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Largest,
    Max,
    #[default]
    Lse,
}

impl Pooling {
    pub const ALL: [Pooling; 4] = [Pooling::Mean, Pooling::Largest, Pooling::Max, Pooling::Lse];

    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Mean => "mean",
            Pooling::Largest => "largest",
            Pooling::Max => "max",
            Pooling::Lse => "lse",
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pooling::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown pooling `{s}` (mean|largest|max|lse)"))
    }
}

/// One patient: tumor feature vectors plus the survival record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientBag {
    pub patient_id: String,
    pub instances: Vec<Vec<f64>>,
    pub time: f64,
    pub event: bool,
    /// Index of the largest tumor by volume.
    pub largest: Option<usize>,
}

impl PatientBag {
    pub fn validate(&self, dim: usize) -> Result<(), SurvError> {
        if self.instances.is_empty() {
            return Err(SurvError::EmptyBag(self.patient_id.clone()));
        }
        for inst in &self.instances {
            if inst.len() != dim {
                return Err(SurvError::DimensionMismatch { expected: dim, got: inst.len() });
            }
            if inst.iter().any(|v| !v.is_finite()) {
                return Err(SurvError::NonFinite("instance features"));
            }
        }
        if !(self.time.is_finite() && self.time > 0.0) {
            return Err(SurvError::BadTime(self.patient_id.clone()));
        }
        if let Some(k) = self.largest {
            if k >= self.instances.len() {
                return Err(SurvError::LargestOutOfRange { patient: self.patient_id.clone(), index: k });
            }
        }
        Ok(())
    }
}

/// Tumor-level hazards and their pooled patient hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardSet {
    pub instance: Vec<f64>,
    pub pooled: f64,
    pub mode: Pooling,
}

/// Pool tumor hazards into one patient hazard. `lse` uses the max-shifted
/// form `m + ln Σ exp(η − m)`.
pub fn pool(hazards: &[f64], mode: Pooling, largest: Option<usize>) -> Result<f64, SurvError> {
    if hazards.is_empty() {
        return Err(SurvError::EmptyBag(String::new()));
    }
    let max = hazards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(match mode {
        Pooling::Mean => hazards.iter().sum::<f64>() / hazards.len() as f64,
        Pooling::Max => max,
        Pooling::Largest => {
            let k = largest.ok_or_else(|| SurvError::MissingLargest(String::new()))?;
            *hazards.get(k).ok_or(SurvError::LargestOutOfRange { patient: String::new(), index: k })?
        }
        Pooling::Lse => {
            // ln_1p over all but one maximal term keeps precision when the rest are small
            let k = hazards.iter().position(|&h| h == max).expect("max is an element");
            let rest: f64 = hazards.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, h)| (h - max).exp()).sum();
            max + rest.ln_1p()
        }
    })
}

/// d pooled / d η_i.
fn pool_weights(hazards: &[f64], mode: Pooling, largest: Option<usize>) -> Vec<f64> {
    let n = hazards.len();
    let mut w = vec![0.0; n];
    match mode {
        Pooling::Mean => w.iter_mut().for_each(|v| *v = 1.0 / n as f64),
        Pooling::Max => {
            let k = (0..n).fold(0, |b, i| if hazards[i] > hazards[b] { i } else { b });
            w[k] = 1.0;
        }
        Pooling::Largest => w[largest.expect("validated")] = 1.0,
        Pooling::Lse => {
            let max = hazards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = hazards.iter().map(|h| (h - max).exp()).collect();
            let s: f64 = e.iter().sum();
            w.iter_mut().zip(&e).for_each(|(a, b)| *a = b / s);
        }
    }
    w
}

/// Mean over instances of the squared Euclidean reconstruction error.
pub fn loss_mse(x: &[Vec<f64>], x_hat: &[Vec<f64>]) -> Result<f64, SurvError> {
    if x.len() != x_hat.len() {
        return Err(SurvError::DimensionMismatch { expected: x.len(), got: x_hat.len() });
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (a, b) in x.iter().zip(x_hat) {
        if a.len() != b.len() {
            return Err(SurvError::DimensionMismatch { expected: a.len(), got: b.len() });
        }
        total += a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
    }
    Ok(total / x.len() as f64)
}

/// Negative Breslow partial log-likelihood, summed over events, with risk
/// sets `T_j ≥ T_i`.
pub fn loss_cox(hazards: &[f64], times: &[f64], events: &[bool]) -> Result<f64, SurvError> {
    Ok(cox_loss_grad(hazards, times, events, false)?.0)
}

fn cox_loss_grad(eta: &[f64], times: &[f64], events: &[bool], want_grad: bool) -> Result<(f64, Vec<f64>), SurvError> {
    let n = eta.len();
    if times.len() != n || events.len() != n {
        return Err(SurvError::DimensionMismatch { expected: n, got: times.len().min(events.len()) });
    }
    if !events.iter().any(|&e| e) {
        return Err(SurvError::NoUncensored);
    }
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; if want_grad { n } else { 0 }];
    for i in (0..n).filter(|&i| events[i]) {
        let s: f64 = (0..n).filter(|&j| times[j] >= times[i]).map(|j| w[j]).sum();
        loss -= eta[i] - shift - s.ln();
        if want_grad {
            grad[i] -= 1.0;
            for j in (0..n).filter(|&j| times[j] >= times[i]) {
                grad[j] += w[j] / s;
            }
        }
    }
    Ok((loss, grad))
}

/// Loss components of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub mse: f64,
    /// `None` when the batch holds no event.
    pub cox: Option<f64>,
    pub total: f64,
}

pub(crate) fn stack_instances(bags: &[&PatientBag]) -> (Vec<f64>, Vec<usize>) {
    let mut x = Vec::new();
    let mut offsets = vec![0];
    for b in bags {
        for inst in &b.instances {
            x.extend_from_slice(inst);
        }
        offsets.push(offsets.last().unwrap() + b.instances.len());
    }
    (x, offsets)
}

/// Combined loss `(1 − α)·MSE + α·Cox` of a batch and, optionally, its
/// gradient. The Cox term is dropped when the batch has no event.
pub(crate) fn batch_objective(
    net: &Network,
    bags: &[&PatientBag],
    mode: Pooling,
    alpha: f64,
    masks: &DropoutMasks,
    want_grad: bool,
) -> Result<(LossParts, Option<Vec<f64>>), SurvError> {
    let d = net.input_dim();
    for b in bags {
        b.validate(d)?;
        if mode == Pooling::Largest && b.largest.is_none() {
            return Err(SurvError::MissingLargest(b.patient_id.clone()));
        }
    }
    let (x, offsets) = stack_instances(bags);
    let n_inst = *offsets.last().unwrap();
    let tape = net.forward_tape(&x, n_inst, masks);
    let recon = tape.reconstruction(net);
    let eta = tape.hazards();

    let mse = x.iter().zip(recon).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n_inst as f64;
    let pooled: Vec<f64> = bags
        .iter()
        .enumerate()
        .map(|(p, b)| pool(&eta[offsets[p]..offsets[p + 1]], mode, b.largest))
        .collect::<Result<_, _>>()?;
    let times: Vec<f64> = bags.iter().map(|b| b.time).collect();
    let events: Vec<bool> = bags.iter().map(|b| b.event).collect();
    let cox = match cox_loss_grad(&pooled, &times, &events, want_grad) {
        Ok(v) => Some(v),
        Err(SurvError::NoUncensored) => None,
        Err(e) => return Err(e),
    };
    let total = (1.0 - alpha) * mse + alpha * cox.as_ref().map_or(0.0, |c| c.0);
    let parts = LossParts { mse, cox: cox.as_ref().map(|c| c.0), total };
    if !want_grad {
        return Ok((parts, None));
    }
    let scale = (1.0 - alpha) * 2.0 / n_inst as f64;
    let d_recon: Vec<f64> = x.iter().zip(recon).map(|(a, b)| scale * (b - a)).collect();
    let mut d_eta = vec![0.0; n_inst];
    if let Some((_, g)) = &cox {
        for (p, b) in bags.iter().enumerate() {
            let seg = offsets[p]..offsets[p + 1];
            let w = pool_weights(&eta[seg.clone()], mode, b.largest);
            for (k, wk) in seg.zip(w) {
                d_eta[k] = alpha * g[p] * wk;
            }
        }
    }
    Ok((parts, Some(net.backward(&tape, masks, &d_recon, &d_eta))))
}

/// Inference without dropout: per-instance reconstructions and hazards.
pub fn forward(net: &Network, bag: &PatientBag, mode: Pooling) -> Result<(Vec<Vec<f64>>, HazardSet), SurvError> {
    bag.validate(net.input_dim())?;
    let (x, _) = stack_instances(&[bag]);
    let n = bag.instances.len();
    let tape = net.forward_tape(&x, n, &DropoutMasks::none(net));
    let recon = tape.reconstruction(net).chunks(net.input_dim()).map(<[f64]>::to_vec).collect();
    let instance = tape.hazards().to_vec();
    let pooled = pool(&instance, mode, bag.largest).map_err(|e| match e {
        SurvError::MissingLargest(_) => SurvError::MissingLargest(bag.patient_id.clone()),
        other => other,
    })?;
    Ok((recon, HazardSet { instance, pooled, mode }))
}

/// Pooled hazard per bag.
pub fn predict(net: &Network, bags: &[PatientBag], mode: Pooling) -> Result<Vec<f64>, SurvError> {
    bags.iter().map(|b| forward(net, b, mode).map(|(_, h)| h.pooled)).collect()
}
