//! Tumor-level features: first-order region statistics, the shift-log-z-score
//! normalizer and filtering of implausibly small predictions.

mod first_order;
pub mod io;
mod normalize;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Execution};
use crate::stats::percentile_sorted;
use crate::volume::{connected_components, longest_diameter, Connectivity, Mask3D, Volume3D, VolumeError};

pub use first_order::{
    extract_first_order, feature_names, ExtractionSettings, FirstOrderStats, FIRST_ORDER_NAMES, SHAPE_DIAMETER,
    SHAPE_VOLUME,
};
pub use normalize::{apply_normalizer, fit_normalizer, ColumnNormalizer, FeatureMatrix, NormalizerState, LOG_EPSILON};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("region is empty")]
    EmptyRegion,
    #[error("component geometry does not match the volume")]
    GeometryMismatch,
    #[error("region emptied by outlier exclusion")]
    EmptiedByOutlierExclusion,
    #[error("row {row} has {got} values, expected {expected}")]
    RowWidth { row: usize, expected: usize, got: usize },
    #[error("row {row} contains a non-finite value")]
    NonFinite { row: usize },
    #[error("normalizer needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("column mismatch: expected {expected:?}, got {got:?}")]
    ColumnMismatch { expected: Vec<String>, got: Vec<String> },
    #[error("duplicate record {patient}/{tumor}/{phase}")]
    DuplicateRecord { patient: String, tumor: String, phase: Phase },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pre,
    Post,
}

impl Phase {
    pub const ALL: [Phase; 2] = [Phase::Pre, Phase::Post];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pre => "pre",
            Phase::Post => "post",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pre" => Ok(Phase::Pre),
            "post" => Ok(Phase::Post),
            other => Err(format!("unknown phase `{other}`")),
        }
    }
}

/// One tumor of one patient in one contrast phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TumorRecord {
    pub patient_id: String,
    pub tumor_id: String,
    pub phase: Phase,
    /// Longest diameter of the source component, when known.
    pub diameter_mm: Option<f64>,
    pub volume_mm3: Option<f64>,
    pub features: Vec<f64>,
}

/// Tumor records sharing one column schema.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub records: Vec<TumorRecord>,
}

impl FeatureTable {
    pub fn new(names: Vec<String>, records: Vec<TumorRecord>) -> Result<Self, FeatureError> {
        let mut seen = BTreeSet::new();
        for (i, r) in records.iter().enumerate() {
            if r.features.len() != names.len() {
                return Err(FeatureError::RowWidth { row: i, expected: names.len(), got: r.features.len() });
            }
            if r.features.iter().any(|v| !v.is_finite()) {
                return Err(FeatureError::NonFinite { row: i });
            }
            if !seen.insert((r.patient_id.as_str(), r.tumor_id.as_str(), r.phase)) {
                return Err(FeatureError::DuplicateRecord {
                    patient: r.patient_id.clone(),
                    tumor: r.tumor_id.clone(),
                    phase: r.phase,
                });
            }
        }
        let mut t = Self { names, records };
        t.fill_shape_from_columns();
        Ok(t)
    }

    // records read from CSV carry shape only as feature columns
    fn fill_shape_from_columns(&mut self) {
        let d = self.names.iter().position(|n| n == SHAPE_DIAMETER);
        let v = self.names.iter().position(|n| n == SHAPE_VOLUME);
        for r in &mut self.records {
            if r.diameter_mm.is_none() {
                r.diameter_mm = d.map(|j| r.features[j]);
            }
            if r.volume_mm3.is_none() {
                r.volume_mm3 = v.map(|j| r.features[j]);
            }
        }
    }

    pub fn phase(&self, phase: Phase) -> FeatureTable {
        FeatureTable {
            names: self.names.clone(),
            records: self.records.iter().filter(|r| r.phase == phase).cloned().collect(),
        }
    }

    pub fn phases(&self) -> Vec<Phase> {
        let set: BTreeSet<Phase> = self.records.iter().map(|r| r.phase).collect();
        set.into_iter().collect()
    }

    pub fn patients(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.patient_id.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn matrix(&self) -> Result<FeatureMatrix, FeatureError> {
        FeatureMatrix::new(self.names.clone(), self.records.iter().map(|r| r.features.clone()).collect())
    }

    /// Same records with features replaced row by row.
    pub fn with_matrix(&self, m: &FeatureMatrix) -> Result<FeatureTable, FeatureError> {
        if m.n_rows() != self.records.len() {
            return Err(FeatureError::TooFewRows(m.n_rows()));
        }
        let records = self
            .records
            .iter()
            .zip(m.rows())
            .map(|(r, row)| TumorRecord { features: row.to_vec(), ..r.clone() })
            .collect();
        Ok(FeatureTable { names: m.names().to_vec(), records })
    }
}

/// Diameter cut-off: the `percentile`-th (linear interpolation) of training
/// ground-truth diameters. `None` for an empty input.
pub fn diameter_threshold(gt_diameters_mm: &[f64], percentile: f64) -> Option<f64> {
    if gt_diameters_mm.is_empty() {
        return None;
    }
    let mut d = gt_diameters_mm.to_vec();
    d.sort_by(f64::total_cmp);
    Some(percentile_sorted(&d, percentile))
}

/// Drop tumors whose longest diameter is `<=` the threshold. Records without
/// a known diameter are kept.
pub fn filter_small_predictions(records: &[TumorRecord], threshold_mm: f64) -> Vec<TumorRecord> {
    records
        .iter()
        .filter(|r| r.diameter_mm.is_none_or(|d| d > threshold_mm))
        .cloned()
        .collect()
}

/// A component that could not be turned into a feature row.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedTumor {
    pub tumor_id: String,
    pub reason: String,
}

/// Extract one record per connected component of `label`. Tumor ids are
/// `t<k>` in component order (ascending minimum voxel index).
pub fn extract_tumors(
    vol: &Volume3D,
    mask: &Mask3D,
    label: u8,
    patient_id: &str,
    phase: Phase,
    settings: &ExtractionSettings,
    exec: Execution,
) -> Result<(Vec<TumorRecord>, Vec<DroppedTumor>), FeatureError> {
    mask.ensure_matches(vol)?;
    let comps = connected_components(mask, label, Connectivity::TwentySix)?;
    let items: Vec<_> = comps.iter().enumerate().collect();
    let results = par::map(exec, &items, |(k, c)| {
        let id = format!("t{k}");
        extract_first_order(vol, c, settings).map(|f| (id.clone(), f, longest_diameter(c).ok(), c.volume_mm3())).map_err(|e| DroppedTumor { tumor_id: id, reason: e.to_string() })
    });
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for r in results {
        match r {
            Ok((tumor_id, features, diameter_mm, volume)) => kept.push(TumorRecord {
                patient_id: patient_id.to_string(),
                tumor_id,
                phase,
                diameter_mm,
                volume_mm3: Some(volume),
                features,
            }),
            Err(d) => dropped.push(d),
        }
    }
    Ok((kept, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::LabelMap;

    fn rec(p: &str, t: &str, d: f64) -> TumorRecord {
        TumorRecord {
            patient_id: p.into(),
            tumor_id: t.into(),
            phase: Phase::Post,
            diameter_mm: Some(d),
            volume_mm3: None,
            features: vec![d],
        }
    }

    #[test]
    fn threshold_zero_drops_single_voxels_only() {
        let r = vec![rec("a", "0", 0.0), rec("a", "1", 0.5), rec("b", "0", 3.0)];
        let out = filter_small_predictions(&r, 0.0);
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|t| t.diameter_mm.unwrap() > 0.0));
    }

    #[test]
    fn first_percentile_of_one_to_hundred() {
        let d: Vec<f64> = (1..=100).map(f64::from).collect();
        let thr = diameter_threshold(&d, 1.0).unwrap();
        assert!((thr - 1.99).abs() < 1e-12);
        let recs: Vec<_> = d.iter().map(|&x| rec("p", &x.to_string(), x)).collect();
        let out = filter_small_predictions(&recs, thr);
        assert_eq!(out.len(), 99);
        assert_eq!(out[0].diameter_mm, Some(2.0));
        assert_eq!(filter_small_predictions(&out, thr), out);
        assert_eq!(diameter_threshold(&[], 1.0), None);
    }

    #[test]
    fn all_above_is_identity() {
        let r = vec![rec("a", "0", 5.0), rec("a", "1", 7.0)];
        assert_eq!(filter_small_predictions(&r, 2.0), r);
    }

    #[test]
    fn duplicate_keys_rejected() {
        let r = vec![rec("a", "0", 5.0), rec("a", "0", 7.0)];
        assert!(matches!(FeatureTable::new(vec!["x".into()], r), Err(FeatureError::DuplicateRecord { .. })));
    }

    #[test]
    fn shape_columns_fill_geometry() {
        let mut r = rec("a", "0", 0.0);
        r.diameter_mm = None;
        r.features = vec![1.0, 12.5];
        let t = FeatureTable::new(vec!["f".into(), SHAPE_DIAMETER.into()], vec![r]).unwrap();
        assert_eq!(t.records[0].diameter_mm, Some(12.5));
    }

    #[test]
    fn extracts_per_component() {
        let dims = [8, 8, 8];
        let mut data = vec![0u8; 512];
        let mut img = vec![0.0; 512];
        for (k, &(x0, n)) in [(0usize, 2usize), (4, 3)].iter().enumerate() {
            for z in 0..n {
                for y in 0..n {
                    for x in 0..n {
                        let i = (x0 + x) + 8 * (y + 8 * z);
                        data[i] = 2;
                        img[i] = (k * 10 + x) as f64;
                    }
                }
            }
        }
        let mask = Mask3D::new(dims, [1.0; 3], data, LabelMap::liver_tumor_spleen()).unwrap();
        let vol = Volume3D::new(dims, [1.0; 3], img).unwrap();
        let s = ExtractionSettings::default();
        let (a, dropped) = extract_tumors(&vol, &mask, 2, "p1", Phase::Pre, &s, Execution::Parallel).unwrap();
        let (b, _) = extract_tumors(&vol, &mask, 2, "p1", Phase::Pre, &s, Execution::Sequential).unwrap();
        assert!(dropped.is_empty());
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].volume_mm3, Some(8.0));
        assert_eq!(a[1].volume_mm3, Some(27.0));
        assert_eq!(a[1].tumor_id, "t1");
    }
}
