use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cv::group_tumors;
use super::{PipelineConfig, PipelineError};
use crate::features::io::SurvivalRecord;
use crate::features::{fit_normalizer, FeatureMatrix, FeatureTable, NormalizerState, Phase};
use crate::survaminn::{late_fusion, predict, train, EpochLog, Network, Pooling};
use crate::SeedStream;

/// The network and normalization fitted for one contrast phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseModel {
    pub phase: Phase,
    pub normalizer: NormalizerState,
    pub network: Network,
    pub log: Vec<EpochLog>,
}

/// A trained model file: one network per phase, fused by the mean hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvModel {
    pub tool_version: String,
    pub feature_names: Vec<String>,
    pub pooling: Pooling,
    pub seed: u64,
    pub phases: Vec<PhaseModel>,
}

impl SurvModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(PipelineError::io(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(PipelineError::io(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Fit one network per phase on every patient with a survival record.
pub fn train_model(config: &PipelineConfig, table: &FeatureTable, survival: &[SurvivalRecord]) -> Result<SurvModel, PipelineError> {
    config.validate()?;
    let surv: BTreeMap<&str, &SurvivalRecord> = survival.iter().map(|s| (s.patient_id.as_str(), s)).collect();
    let seeds = SeedStream::new(config.seed);
    let mut phases = Vec::new();
    for (pi, phase) in table.phases().into_iter().enumerate() {
        let tumors: Vec<_> = group_tumors(table, phase).into_iter().filter(|(p, _)| surv.contains_key(p.as_str())).collect();
        if tumors.is_empty() {
            continue;
        }
        let rows: Vec<Vec<f64>> = tumors.iter().flat_map(|(_, t)| t.rows.iter().cloned()).collect();
        let normalizer = fit_normalizer(&FeatureMatrix::new(table.names.clone(), rows)?)?;
        let bags = tumors
            .iter()
            .map(|(p, t)| {
                let s = surv[p.as_str()];
                t.bag(&normalizer, &table.names, p, s.time_months, s.event)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let trained = train(&bags, &config.train_config(seeds.derive("pipeline/final", pi as u64, 0)))?;
        phases.push(PhaseModel { phase, normalizer, network: trained.network, log: trained.log });
    }
    if phases.is_empty() {
        return Err(PipelineError::NoPatients);
    }
    Ok(SurvModel {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        feature_names: table.names.clone(),
        pooling: config.pooling,
        seed: config.seed,
        phases,
    })
}

/// Fused hazard per patient (id order) for every patient with tumors in a
/// phase the model knows.
pub fn predict_model(model: &SurvModel, table: &FeatureTable) -> Result<Vec<(String, f64)>, PipelineError> {
    if table.names != model.feature_names {
        return Err(PipelineError::FeatureSchema { expected: model.feature_names.clone(), got: table.names.clone() });
    }
    let mut maps = Vec::new();
    for pm in &model.phases {
        let tumors = group_tumors(table, pm.phase);
        // survival is unknown at prediction time; bags only need a valid placeholder
        let bags = tumors
            .iter()
            .map(|(p, t)| t.bag(&pm.normalizer, &table.names, p, 1.0, false))
            .collect::<Result<Vec<_>, _>>()?;
        let pred = predict(&pm.network, &bags, model.pooling)?;
        maps.push(tumors.into_keys().zip(pred).collect::<BTreeMap<String, f64>>());
    }
    let mut ids: Vec<String> = maps.iter().flat_map(|m| m.keys().cloned()).collect();
    ids.sort();
    ids.dedup();
    let refs: Vec<&BTreeMap<String, f64>> = maps.iter().collect();
    let fused = late_fusion(&refs, &ids)?;
    Ok(ids.into_iter().zip(fused).collect())
}
