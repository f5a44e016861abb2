use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::stats::percentile_sorted;
use crate::volume::{longest_diameter, Component, Volume3D};

/// Names of the first-order features, in output order.
pub const FIRST_ORDER_NAMES: [&str; 18] = [
    "firstorder_energy",
    "firstorder_total_energy",
    "firstorder_entropy",
    "firstorder_minimum",
    "firstorder_p10",
    "firstorder_p90",
    "firstorder_maximum",
    "firstorder_mean",
    "firstorder_median",
    "firstorder_interquartile_range",
    "firstorder_range",
    "firstorder_mean_absolute_deviation",
    "firstorder_root_mean_squared",
    "firstorder_variance",
    "firstorder_standard_deviation",
    "firstorder_skewness",
    "firstorder_kurtosis",
    "firstorder_uniformity",
];

pub const SHAPE_VOLUME: &str = "shape_volume_mm3";
pub const SHAPE_DIAMETER: &str = "shape_longest_diameter_mm";

/// All 20 columns produced by [`extract_first_order`].
pub fn feature_names() -> Vec<String> {
    FIRST_ORDER_NAMES
        .iter()
        .chain([SHAPE_VOLUME, SHAPE_DIAMETER].iter())
        .map(|s| s.to_string())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSettings {
    /// Multiplier applied after region z-scoring.
    pub scale: f64,
    /// Fixed bin width for the histogram features.
    pub bin_width: f64,
    /// Voxels outside mean ± k·std of the region are excluded.
    pub outlier_sigma: f64,
}

impl Default for ExtractionSettings {
    fn default() -> Self {
        Self { scale: 100.0, bin_width: 5.0, outlier_sigma: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderStats {
    pub energy: f64,
    pub total_energy: f64,
    pub entropy: f64,
    pub minimum: f64,
    pub p10: f64,
    pub p90: f64,
    pub maximum: f64,
    pub mean: f64,
    pub median: f64,
    pub interquartile_range: f64,
    pub range: f64,
    pub mean_absolute_deviation: f64,
    pub root_mean_squared: f64,
    pub variance: f64,
    pub standard_deviation: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub uniformity: f64,
}

impl FirstOrderStats {
    /// Statistics of `values` as given (no normalization). Values are sorted
    /// first so the result does not depend on enumeration order.
    pub fn compute(values: &[f64], voxel_volume: f64, bin_width: f64) -> Result<Self, FeatureError> {
        if values.is_empty() {
            return Err(FeatureError::EmptyRegion);
        }
        let mut x = values.to_vec();
        x.sort_by(f64::total_cmp);
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let energy = x.iter().map(|v| v * v).sum::<f64>();
        let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
        let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        let (skewness, kurtosis) = if m2 > 0.0 { (m3 / m2.powf(1.5), m4 / (m2 * m2)) } else { (0.0, 0.0) };

        let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
        for v in &x {
            *bins.entry((v / bin_width).floor() as i64).or_default() += 1;
        }
        let (mut entropy, mut uniformity) = (0.0, 0.0);
        for &c in bins.values() {
            let p = c as f64 / n;
            entropy -= p * p.log2();
            uniformity += p * p;
        }

        let p10 = percentile_sorted(&x, 10.0);
        let p90 = percentile_sorted(&x, 90.0);
        let minimum = x[0];
        let maximum = x[x.len() - 1];
        Ok(Self {
            energy,
            total_energy: energy * voxel_volume,
            entropy: entropy.max(0.0),
            minimum,
            p10,
            p90,
            maximum,
            mean,
            median: percentile_sorted(&x, 50.0),
            interquartile_range: percentile_sorted(&x, 75.0) - percentile_sorted(&x, 25.0),
            range: maximum - minimum,
            mean_absolute_deviation: x.iter().map(|v| (v - mean).abs()).sum::<f64>() / n,
            root_mean_squared: (energy / n).sqrt(),
            variance: m2,
            standard_deviation: m2.sqrt(),
            skewness,
            kurtosis,
            uniformity,
        })
    }

    /// Values in [`FIRST_ORDER_NAMES`] order.
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.energy,
            self.total_energy,
            self.entropy,
            self.minimum,
            self.p10,
            self.p90,
            self.maximum,
            self.mean,
            self.median,
            self.interquartile_range,
            self.range,
            self.mean_absolute_deviation,
            self.root_mean_squared,
            self.variance,
            self.standard_deviation,
            self.skewness,
            self.kurtosis,
            self.uniformity,
        ]
    }
}

/// Region-normalized first-order statistics plus shape features of one
/// component: 18 first-order values followed by volume (mm³) and longest
/// diameter (mm).
///
/// Intensities are z-scored within the region (all zeros when the region is
/// constant), multiplied by `scale`, and voxels beyond `outlier_sigma`
/// standard deviations are dropped before computing statistics.
pub fn extract_first_order(
    vol: &Volume3D,
    component: &Component,
    settings: &ExtractionSettings,
) -> Result<Vec<f64>, FeatureError> {
    if component.is_empty() {
        return Err(FeatureError::EmptyRegion);
    }
    if component.geometry() != vol.geometry() {
        return Err(FeatureError::GeometryMismatch);
    }
    let mut raw: Vec<f64> = component.voxels().iter().map(|&i| vol.data()[i]).collect();
    raw.sort_by(f64::total_cmp);
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let std = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let limit = settings.outlier_sigma * settings.scale;
    let kept: Vec<f64> = raw
        .iter()
        .map(|v| if std > 0.0 { (v - mean) / std * settings.scale } else { 0.0 })
        .filter(|z| z.abs() <= limit)
        .collect();
    if kept.is_empty() {
        return Err(FeatureError::EmptiedByOutlierExclusion);
    }
    let stats = FirstOrderStats::compute(&kept, vol.geometry().voxel_volume(), settings.bin_width)?;
    let mut out = stats.to_vec();
    out.push(component.volume_mm3());
    out.push(longest_diameter(component).map_err(|_| FeatureError::EmptyRegion)?);
    Ok(out)
}
