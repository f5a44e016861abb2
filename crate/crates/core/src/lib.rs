//! # livsurv
//!
//! Desk-scale tooling for liver MRI outcome studies:
//!
//! - [`samonai`]: zero-shot 3D propagation of a single point prompt through a
//!   pluggable 2D promptable segmenter, across three views.
//! - [`features`]: first-order region features, log + z-score feature
//!   normalization and small-prediction filtering.
//! - [`survaminn`]: an autoencoder with a multiple-instance hazard head,
//!   trained on a scheduled mix of reconstruction and Cox partial-likelihood
//!   loss, with mean / largest / max / log-sum-exp tumor pooling.
//! - [`stats`]: dice, detection matching, concordance index, Cox regression,
//!   Kaplan–Meier, log-rank, Wilcoxon rank-sum, bootstrap hazard ratios and
//!   randomization tests.
//! - [`pipeline`]: cross-validation orchestration, segmentation
//!   post-processing and result emission.
//!
//! Data-parallel loops go through [`par`], which falls back to sequential
//! execution when the `parallel` feature is disabled.

pub mod features;
pub mod par;
pub mod pipeline;
pub mod samonai;
pub mod stats;
pub mod survaminn;
pub mod synthetic;
pub mod volume;

mod seed;

pub use par::Execution;
pub use seed::SeedStream;

use thiserror::Error;

/// Crate-level error, one variant per subsystem.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Volume(#[from] volume::VolumeError),
    #[error(transparent)]
    Nrrd(#[from] volume::nrrd::NrrdError),
    #[error(transparent)]
    Samonai(#[from] samonai::SamonaiError),
    #[error(transparent)]
    Features(#[from] features::FeatureError),
    #[error(transparent)]
    Surv(#[from] survaminn::SurvError),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
    #[error(transparent)]
    Pipeline(#[from] pipeline::PipelineError),
}

impl Error {
    /// True for failures of a numerical procedure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Stats(e) => e.is_numerical(),
            Error::Surv(e) => e.is_numerical(),
            Error::Pipeline(e) => e.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
