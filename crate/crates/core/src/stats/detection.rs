use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::volume::{Component, ComponentSet, Mask3D};

/// Minimum dice for a predicted tumor to count as a detection.
pub const MATCH_DICE: f64 = 0.1;

/// Dice of class `class` between two label masks; 1 when both are empty.
pub fn dice(pred: &Mask3D, gt: &Mask3D, class: u8) -> Result<f64, StatsError> {
    pred.ensure_same_geometry(gt)?;
    let (mut p, mut g, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        let (ia, ib) = (a == class, b == class);
        p += ia as usize;
        g += ib as usize;
        both += (ia && ib) as usize;
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (p + g) as f64)
}

fn component_dice(a: &Component, b: &Component) -> f64 {
    if !a.bbox_intersects(b) {
        return 0.0;
    }
    2.0 * a.overlap(b) as f64 / (a.len() + b.len()) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMatch {
    pub gt: usize,
    pub pred: usize,
    pub dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matches: Vec<DetectionMatch>,
}

impl DetectionReport {
    /// Rates from raw counts. Undefined ratios (0/0) are reported as 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { tp, fp, fn_, precision, recall, f1, matches: Vec::new() }
    }
}

/// One-to-one detection matching. Ground-truth tumors are visited in
/// descending order of their best dice; each claims its highest-dice
/// unmatched prediction with dice ≥ [`MATCH_DICE`].
pub fn match_detections(pred: &ComponentSet, gt: &ComponentSet) -> DetectionReport {
    let scores: Vec<Vec<f64>> = gt.iter().map(|g| pred.iter().map(|p| component_dice(g, p)).collect()).collect();
    let best = |row: &[f64]| row.iter().copied().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..gt.len()).collect();
    order.sort_by(|&a, &b| best(&scores[b]).total_cmp(&best(&scores[a])).then(a.cmp(&b)));

    let mut taken = vec![false; pred.len()];
    let mut matches = Vec::new();
    for g in order {
        let mut pick: Option<(usize, f64)> = None;
        for (p, &d) in scores[g].iter().enumerate() {
            if !taken[p] && d >= MATCH_DICE && pick.is_none_or(|(_, bd)| d > bd) {
                pick = Some((p, d));
            }
        }
        if let Some((p, d)) = pick {
            taken[p] = true;
            matches.push(DetectionMatch { gt: g, pred: p, dice: d });
        }
    }
    matches.sort_by_key(|m| m.gt);
    let tp = matches.len();
    let mut r = DetectionReport::from_counts(tp, pred.len() - tp, gt.len() - tp);
    r.matches = matches;
    r
}
