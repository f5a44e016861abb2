use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{PipelineConfig, PipelineError};
use crate::samonai::{propagate, ObjectSeeds, OracleSegmenter, PromptSegmenter, SamonaiConfig};
use crate::stats::{dice, match_detections, DetectionReport};
use crate::volume::{
    connected_components, fill_holes, mask_outside, remove_small_objects, Connectivity, LabelMap, Mask3D, Volume3D,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    /// Dice per ground-truth class name.
    pub dice: BTreeMap<String, f64>,
    pub detection: DetectionReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationOutput {
    pub mask: Mask3D,
    /// One message per object whose propagation failed.
    pub failures: Vec<String>,
    /// Tumor voxels cleared for lying outside the (hole-filled) liver.
    pub extra_hepatic_voxels: usize,
    /// Tumor components dropped by the volume filter.
    pub small_components: usize,
    pub report: Option<SegmentationReport>,
}

/// Propagate every seeded object, merge them into one label mask, clear
/// tumor voxels outside the liver, drop tumors under the volume limit and,
/// with a ground truth, score dice and detection.
///
/// Where objects overlap, the voxel goes to the object whose logit clears its
/// own threshold by the widest margin. The liver is hole-filled before it
/// gates the tumors, since tumors punch holes in an intensity-based liver.
pub fn run_segmentation(
    config: &PipelineConfig,
    image: &Volume3D,
    seeds: &[ObjectSeeds],
    labels: &LabelMap,
    ground_truth: Option<&Mask3D>,
) -> Result<SegmentationOutput, PipelineError> {
    run_segmentation_with(config, image, seeds, labels, ground_truth, &OracleSegmenter::new(config.oracle_tolerance))
}

/// [`run_segmentation`] with a caller-supplied 2D segmenter.
pub fn run_segmentation_with(
    config: &PipelineConfig,
    image: &Volume3D,
    seeds: &[ObjectSeeds],
    labels: &LabelMap,
    ground_truth: Option<&Mask3D>,
    segmenter: &dyn PromptSegmenter,
) -> Result<SegmentationOutput, PipelineError> {
    let liver = labels.find("liver").ok_or(PipelineError::MissingLabel("liver"))?;
    let tumor = labels.find("tumor").ok_or(PipelineError::MissingLabel("tumor"))?;
    for s in seeds {
        if !labels.contains(s.label) {
            return Err(PipelineError::Volume(crate::volume::VolumeError::UnknownLabel(s.label)));
        }
    }
    let sam = SamonaiConfig { weights: config.samonai_weights, execution: config.execution, ..Default::default() };
    let outcomes = propagate(image, seeds, segmenter, &sam)?;

    let geom = image.geometry();
    let mut best = vec![(0u8, f64::NEG_INFINITY); geom.len()];
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(seg) => {
                let l = &seg.logits;
                for (i, (&m, &x)) in seg.mask.data().iter().zip(l.logits.data()).enumerate() {
                    let margin = x - l.threshold;
                    if m != 0 && margin > best[i].1 {
                        best[i] = (seg.label, margin);
                    }
                }
            }
            Err(f) => failures.push(f.to_string()),
        }
    }
    let merged = Mask3D::new(geom.dims, geom.spacing, best.iter().map(|b| b.0).collect(), labels.clone())?;

    let liver_only = Mask3D::new(
        geom.dims,
        geom.spacing,
        merged.data().iter().map(|&v| if v == liver { liver } else { 0 }).collect(),
        labels.clone(),
    )?;
    let liver_filled = if liver_only.count(liver) > 0 { fill_holes(&liver_only, liver)? } else { liver_only };
    let tumors = merged.select(tumor);
    let inside = mask_outside(&tumors, &liver_filled)?;
    let extra_hepatic_voxels = tumors.count(1) - inside.count(1);
    let kept = remove_small_objects(&inside, 1, config.min_tumor_volume_mm3)?;
    let small_components = connected_components(&inside, 1, Connectivity::default())?.len()
        - connected_components(&kept, 1, Connectivity::default())?.len();

    let data: Vec<u8> = (0..geom.len())
        .map(|i| {
            if kept.data()[i] != 0 {
                tumor
            } else if liver_filled.data()[i] != 0 {
                liver
            } else if merged.data()[i] == tumor {
                0
            } else {
                merged.data()[i]
            }
        })
        .collect();
    let mask = Mask3D::new(geom.dims, geom.spacing, data, labels.clone())?;

    let report = match ground_truth {
        None => None,
        Some(gt) => {
            mask.ensure_same_geometry(gt)?;
            let mut scores = BTreeMap::new();
            for (&l, name) in &gt.labels().0 {
                if let Some(pl) = labels.find(name) {
                    let pred = mask.select(pl);
                    scores.insert(name.clone(), dice(&pred, &gt.select(l), 1)?);
                }
            }
            let gt_tumor = gt.labels().find("tumor").ok_or(PipelineError::MissingLabel("tumor"))?;
            let pred_c = connected_components(&mask.select(tumor), 1, Connectivity::default())?;
            let gt_c = connected_components(&gt.select(gt_tumor), 1, Connectivity::default())?;
            Some(SegmentationReport { dice: scores, detection: match_detections(&pred_c, &gt_c) })
        }
    };
    Ok(SegmentationOutput { mask, failures, extra_hepatic_voxels, small_components, report })
}
