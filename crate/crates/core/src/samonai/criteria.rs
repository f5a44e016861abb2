//! Prompt-quality criteria and argmin selection over a candidate pool.

use serde::{Deserialize, Serialize};

use super::{Point2, SamonaiError};
use crate::stats::median;
use crate::volume::Grid2;

/// Side length of the square window used by the homogeneity criterion.
pub const HOMOGENEITY_WINDOW: usize = 11;

/// Weights of the location, intensity and homogeneity terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for CriterionWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, gamma: 2.0 }
    }
}

impl CriterionWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, SamonaiError> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), SamonaiError> {
        let all = [self.alpha, self.beta, self.gamma];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) || all.iter().all(|&w| w == 0.0) {
            return Err(SamonaiError::BadWeights(all));
        }
        Ok(())
    }
}

fn centroid(points: &[Point2]) -> (f64, f64) {
    let n = points.len() as f64;
    let (su, sv) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.u as f64, b + p.v as f64));
    (su / n, sv / n)
}

/// Euclidean distance (voxel units) from `p` to the centroid of `candidates`.
pub fn criterion_location(p: Point2, candidates: &[Point2]) -> Result<f64, SamonaiError> {
    if candidates.is_empty() {
        return Err(SamonaiError::EmptyCandidates);
    }
    let (cu, cv) = centroid(candidates);
    Ok(((p.u as f64 - cu).powi(2) + (p.v as f64 - cv).powi(2)).sqrt())
}

/// |I(p) − median of I over the candidates|.
pub fn criterion_intensity(p: Point2, candidates: &[Point2], slice: &Grid2<f64>) -> Result<f64, SamonaiError> {
    if candidates.is_empty() {
        return Err(SamonaiError::EmptyCandidates);
    }
    let mut vals: Vec<f64> = candidates.iter().map(|q| slice.get(q.u, q.v)).collect();
    Ok((slice.get(p.u, p.v) - median(&mut vals)).abs())
}

/// Population standard deviation over the 11×11 window centred on `p`,
/// clipped at the slice border.
pub fn criterion_homogeneity(p: Point2, slice: &Grid2<f64>) -> f64 {
    let r = HOMOGENEITY_WINDOW / 2;
    let u0 = p.u.saturating_sub(r);
    let u1 = (p.u + r).min(slice.width - 1);
    let v0 = p.v.saturating_sub(r);
    let v1 = (p.v + r).min(slice.height - 1);
    let n = ((u1 - u0 + 1) * (v1 - v0 + 1)) as f64;
    let mut sum = 0.0;
    for v in v0..=v1 {
        for u in u0..=u1 {
            sum += slice.get(u, v);
        }
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for v in v0..=v1 {
        for u in u0..=u1 {
            ss += (slice.get(u, v) - mean).powi(2);
        }
    }
    (ss / n).sqrt()
}

fn min_max_normalize(values: &mut [f64]) {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    for v in values.iter_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
}

/// Per-candidate total cost `α·Ĉl + β·Ĉi + γ·Ĉh`, in candidate order.
pub fn total_costs(candidates: &[Point2], slice: &Grid2<f64>, weights: &CriterionWeights) -> Result<Vec<f64>, SamonaiError> {
    if candidates.is_empty() {
        return Err(SamonaiError::EmptyCandidates);
    }
    let (cu, cv) = centroid(candidates);
    let mut vals: Vec<f64> = candidates.iter().map(|q| slice.get(q.u, q.v)).collect();
    let med = median(&mut vals);

    let mut loc: Vec<f64> = candidates
        .iter()
        .map(|p| ((p.u as f64 - cu).powi(2) + (p.v as f64 - cv).powi(2)).sqrt())
        .collect();
    let mut int: Vec<f64> = candidates.iter().map(|p| (slice.get(p.u, p.v) - med).abs()).collect();
    let mut hom: Vec<f64> = candidates.iter().map(|&p| criterion_homogeneity(p, slice)).collect();
    min_max_normalize(&mut loc);
    min_max_normalize(&mut int);
    min_max_normalize(&mut hom);
    Ok((0..candidates.len())
        .map(|k| weights.alpha * loc[k] + weights.beta * int[k] + weights.gamma * hom[k])
        .collect())
}

/// The candidate minimising the total cost; ties go to the smallest in-slice
/// linear index (which matches the smallest voxel index).
pub fn select_prompt(candidates: &[Point2], slice: &Grid2<f64>, weights: &CriterionWeights) -> Result<Point2, SamonaiError> {
    let costs = total_costs(candidates, slice, weights)?;
    let best = (0..candidates.len())
        .min_by(|&a, &b| {
            costs[a]
                .total_cmp(&costs[b])
                .then_with(|| candidates[a].linear(slice.width).cmp(&candidates[b].linear(slice.width)))
        })
        .expect("non-empty");
    Ok(candidates[best])
}

/// `min(I) + 0.1·(max(I) − min(I))`: negatives darker than this are not used.
pub fn negative_threshold(intensities: &[f64]) -> f64 {
    let (lo, hi) = intensities
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    lo + 0.1 * (hi - lo)
}
