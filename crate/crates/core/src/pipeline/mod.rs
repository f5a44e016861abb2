//! End-to-end orchestration: repeated cross-validation of the survival
//! model, segmentation post-processing, persisted models and result files.

mod cv;
mod emit;
mod model;
mod segment;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureError;
use crate::par::Execution;
use crate::samonai::{CriterionWeights, SamonaiError};
use crate::stats::{StatsError, TieRule};
use crate::survaminn::{Pooling, SurvError, TrainConfig};
use crate::volume::VolumeError;

pub use cv::{
    assign_folds, evaluate, run_cv, run_pipeline, CvData, Evaluation, ExcludedPatient, RepeatResult, RunManifest,
};
pub use emit::{emit_results, km_table, read_hazards, write_hazards, write_km, KmRow};
pub use model::{predict_model, train_model, PhaseModel, SurvModel};
pub use segment::{run_segmentation, run_segmentation_with, SegmentationOutput, SegmentationReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{events} uncensored patients cannot fill {folds} folds")]
    TooFewEvents { events: usize, folds: usize },
    #[error("repeat {repeat}, fold {fold}, phase {phase}: {events} uncensored training patients, need at least 2")]
    InsufficientEvents { repeat: usize, fold: usize, phase: String, events: usize },
    #[error("no patient has both tumors and a survival record")]
    NoPatients,
    #[error("model expects features {expected:?}, table has {got:?}")]
    FeatureSchema { expected: Vec<String>, got: Vec<String> },
    #[error("label map has no `{0}` label")]
    MissingLabel(&'static str),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Surv(#[from] SurvError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Samonai(#[from] SamonaiError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl PipelineError {
    pub fn is_numerical(&self) -> bool {
        match self {
            PipelineError::Surv(e) => e.is_numerical(),
            PipelineError::Stats(e) => e.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| PipelineError::Io { path, source }
    }
}

/// Input and output locations. Every entry is optional so a config can be
/// shared between commands that read different inputs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub features: Option<PathBuf>,
    pub survival: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub seeds: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Every knob of a run. Absent JSON keys take the defaults below, and the
/// full resolved config is written into the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub folds: usize,
    pub repeats: usize,
    /// Deal censored and uncensored patients into folds separately.
    pub stratified_folds: bool,
    pub pooling: Pooling,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub steps_per_epoch: usize,
    pub encoder: Vec<usize>,
    pub regressor: Vec<usize>,
    pub samonai_weights: CriterionWeights,
    /// Intensity tolerance of the region-growing stand-in segmenter.
    pub oracle_tolerance: f64,
    pub min_tumor_volume_mm3: f64,
    pub diameter_percentile: f64,
    pub tie_rule: TieRule,
    pub bootstrap_replicates: usize,
    pub randomization_replicates: usize,
    pub execution: Execution,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            seed: 0,
            folds: 3,
            repeats: 15,
            stratified_folds: false,
            pooling: t.pooling,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            dropout: t.dropout,
            steps_per_epoch: t.steps_per_epoch,
            encoder: t.encoder,
            regressor: t.regressor,
            samonai_weights: CriterionWeights::default(),
            oracle_tolerance: 0.0,
            min_tumor_volume_mm3: 100.0,
            diameter_percentile: 1.0,
            tie_rule: TieRule::Strict,
            bootstrap_replicates: 1000,
            randomization_replicates: 0,
            execution: Execution::Parallel,
            paths: Paths::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if self.repeats < 1 {
            return bad("repeats must be at least 1");
        }
        if self.epochs < 1 {
            return bad("epochs must be positive");
        }
        if self.encoder.is_empty() || self.encoder.iter().chain(&self.regressor).any(|&w| w == 0) {
            return bad("layer widths must be positive and the encoder non-empty");
        }
        if !(self.min_tumor_volume_mm3 >= 0.0 && self.min_tumor_volume_mm3.is_finite()) {
            return bad("min_tumor_volume_mm3 must be non-negative");
        }
        if !(0.0..=100.0).contains(&self.diameter_percentile) {
            return bad("diameter_percentile must be in [0, 100]");
        }
        if !(self.oracle_tolerance >= 0.0 && self.oracle_tolerance.is_finite()) {
            return bad("oracle_tolerance must be non-negative");
        }
        self.samonai_weights.validate()?;
        self.train_config(self.seed).validate()?;
        Ok(())
    }

    /// Training settings with a job-specific seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            dropout: self.dropout,
            pooling: self.pooling,
            seed,
            steps_per_epoch: self.steps_per_epoch,
            encoder: self.encoder.clone(),
            regressor: self.regressor.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let path = path.into();
        let text = std::fs::read_to_string(&path).map_err(PipelineError::io(&path))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
