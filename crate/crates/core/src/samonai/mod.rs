//! Zero-shot 3D prompt propagation.
//!
//! One positive point per object is turned into a 3D mask by driving a 2D
//! promptable segmenter through three steps:
//!
//! 1. segment the seed slice in the seed's view with the user prompts;
//! 2. in each of the two other views, segment the slice crossing the step-1
//!    mask with the most positive points, prompting with a point chosen by
//!    [`select_prompt`];
//! 3. fit a box around the three segmented planes and segment every third
//!    slice of it in all three views, interpolating the skipped slices.
//!
//! The three reconstructed logit volumes are averaged and binarised with the
//! adaptive threshold `mean + 2·std` of the averaged logits.

mod criteria;
mod oracle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Execution};
use crate::volume::{Geometry, Grid2, LabelMap, Mask3D, View, Volume3D, VolumeError};

pub use criteria::{
    criterion_homogeneity, criterion_intensity, criterion_location, negative_threshold, select_prompt, total_costs,
    CriterionWeights, HOMOGENEITY_WINDOW,
};
pub use oracle::OracleSegmenter;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamonaiError {
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("criterion weights must be non-negative with at least one positive, got {0:?}")]
    BadWeights([f64; 3]),
    #[error("object {object}: no positive seed")]
    NoPositiveSeed { object: usize },
    #[error("object {object}: seed {point:?} outside volume {dims:?}")]
    SeedOutOfBounds { object: usize, point: [usize; 3], dims: [usize; 3] },
    #[error("object {object}: positive seeds are not on one {view:?} slice")]
    SeedsNotCoplanar { object: usize, view: View },
    #[error("segmenter returned a {got:?} grid for a {expected:?} slice")]
    SegmenterShape { expected: (usize, usize), got: (usize, usize) },
    #[error("segmenter returned non-finite logits")]
    SegmenterNonFinite,
    #[error("object label {0} is 0 or duplicated with a different name")]
    BadLabel(u8),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// In-slice pixel coordinates (`u` fastest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Point2 {
    pub u: usize,
    pub v: usize,
}

impl Point2 {
    pub fn new(u: usize, v: usize) -> Self {
        Self { u, v }
    }

    #[inline]
    pub fn linear(&self, width: usize) -> usize {
        self.u + width * self.v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// A voxel-space point prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointPrompt {
    pub coords: [usize; 3],
    pub polarity: Polarity,
}

/// A 2D promptable segmenter: `(slice, positives, negatives) -> logits`.
///
/// Output must have the slice's shape, be finite, and be deterministic for
/// fixed inputs; higher logits mean "more object".
pub trait PromptSegmenter: Sync {
    fn segment(&self, slice: &Grid2<f64>, positives: &[Point2], negatives: &[Point2]) -> Grid2<f64>;

    /// Implementations that cannot serve concurrent calls return `false`;
    /// the engine then dispatches slice jobs one at a time.
    fn is_concurrent(&self) -> bool {
        true
    }
}

/// User prompts for one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSeeds {
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub positive: Vec<[usize; 3]>,
    #[serde(default)]
    pub negative: Vec<[usize; 3]>,
    pub view: View,
}

impl ObjectSeeds {
    pub fn single(label: u8, view: View, positive: [usize; 3]) -> Self {
        Self { label, name: None, positive: vec![positive], negative: Vec::new(), view }
    }

    /// All seeds are checked up front so the run fails before any segmentation.
    fn validate(&self, object: usize, dims: [usize; 3]) -> Result<(), SamonaiError> {
        if self.label == 0 {
            return Err(SamonaiError::BadLabel(0));
        }
        let first = *self.positive.first().ok_or(SamonaiError::NoPositiveSeed { object })?;
        for &p in self.positive.iter().chain(&self.negative) {
            if !p.iter().zip(dims).all(|(&c, d)| c < d) {
                return Err(SamonaiError::SeedOutOfBounds { object, point: p, dims });
            }
        }
        let axis = self.view.fixed_axis();
        if self.positive.iter().chain(&self.negative).any(|p| p[axis] != first[axis]) {
            return Err(SamonaiError::SeedsNotCoplanar { object, view: self.view });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamonaiConfig {
    pub weights: CriterionWeights,
    /// Per-slice masks in steps 1–2 are `logit > slice_threshold`.
    pub slice_threshold: f64,
    /// Step-3 sampling stride along each view axis.
    pub stride: usize,
    /// Clearance (voxels) between negative prompts and the positive run or box.
    pub negative_margin: usize,
    pub execution: Execution,
}

impl Default for SamonaiConfig {
    fn default() -> Self {
        Self {
            weights: CriterionWeights::default(),
            slice_threshold: 0.0,
            stride: 3,
            negative_margin: 3,
            execution: Execution::Parallel,
        }
    }
}

/// Averaged logits of one object with their adaptive threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectLogits {
    pub logits: Volume3D,
    pub mean: f64,
    pub std: f64,
    pub threshold: f64,
}

impl ObjectLogits {
    /// Population mean/std over the whole volume; threshold `mean + 2·std`.
    pub fn new(logits: Volume3D) -> Self {
        let data = logits.data();
        let (lo, hi) = logits.min_max();
        if lo == hi {
            // summation rounding must not push a constant field above its own mean
            return Self { threshold: lo, logits, mean: lo, std: 0.0 };
        }
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let std = (data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self { threshold: mean + 2.0 * std, logits, mean, std }
    }
}

/// Voxels with logits strictly above the adaptive threshold, as label 1.
pub fn binarize(logits: &ObjectLogits) -> Mask3D {
    let g = logits.logits.geometry();
    let data = logits.logits.data().iter().map(|&l| u8::from(l > logits.threshold)).collect();
    Mask3D::new(g.dims, g.spacing, data, LabelMap::binary("object")).expect("binary labels")
}

/// The prompts sent to the segmenter for one slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceJob {
    pub step: u8,
    pub view: View,
    pub slice: usize,
    pub positive: Vec<Point2>,
    pub negative: Vec<Point2>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSegmentation {
    pub label: u8,
    pub logits: ObjectLogits,
    pub mask: Mask3D,
    /// Inclusive voxel box fitted around the three step-1/2 planes.
    pub bbox: ([usize; 3], [usize; 3]),
    pub jobs: Vec<SliceJob>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObjectFailure {
    #[error("object {object} (label {label}): seed slice segmentation is empty")]
    EmptySeedMask { object: usize, label: u8 },
}

pub type ObjectOutcome = Result<ObjectSegmentation, ObjectFailure>;

fn run_segmenter(
    seg: &dyn PromptSegmenter,
    slice: &Grid2<f64>,
    pos: &[Point2],
    neg: &[Point2],
) -> Result<Grid2<f64>, SamonaiError> {
    let out = seg.segment(slice, pos, neg);
    if out.shape() != slice.shape() || out.data.len() != slice.data.len() {
        return Err(SamonaiError::SegmenterShape { expected: slice.shape(), got: out.shape() });
    }
    if out.data.iter().any(|v| !v.is_finite()) {
        return Err(SamonaiError::SegmenterNonFinite);
    }
    Ok(out)
}

/// Step-2 negative: a point on the positive line, at least `margin` voxels
/// from every positive point, bright enough (≥ `t_n`), nearest to the run.
fn line_negative(
    slice: &Grid2<f64>,
    positives: &[Point2],
    along_u: bool,
    margin: usize,
    t_n: f64,
) -> Option<Point2> {
    let fixed = if along_u { positives[0].v } else { positives[0].u };
    let ts: Vec<usize> = positives.iter().map(|p| if along_u { p.u } else { p.v }).collect();
    let len = if along_u { slice.width } else { slice.height };
    (0..len)
        .filter_map(|t| {
            let d = ts.iter().map(|&s| s.abs_diff(t)).min().expect("non-empty");
            let p = if along_u { Point2::new(t, fixed) } else { Point2::new(fixed, t) };
            (d >= margin && slice.get(p.u, p.v) >= t_n).then_some((d, p))
        })
        // candidates come in increasing linear order, so min_by_key keeps the first tie
        .min_by_key(|&(d, _)| d)
        .map(|(_, p)| p)
}

/// Step-3 negative: outside the in-plane box grown by `margin`, bright
/// enough, nearest to the box centre.
fn box_negative(
    slice: &Grid2<f64>,
    lo: (usize, usize),
    hi: (usize, usize),
    margin: usize,
    t_n: f64,
) -> Option<Point2> {
    let (lu, lv) = (lo.0 as i64 - margin as i64, lo.1 as i64 - margin as i64);
    let (hu, hv) = (hi.0 as i64 + margin as i64, hi.1 as i64 + margin as i64);
    let cu = 0.5 * (lo.0 + hi.0) as f64;
    let cv = 0.5 * (lo.1 + hi.1) as f64;
    let mut best: Option<(f64, Point2)> = None;
    for v in 0..slice.height {
        for u in 0..slice.width {
            let (ui, vi) = (u as i64, v as i64);
            let inside = ui >= lu && ui <= hu && vi >= lv && vi <= hv;
            if inside || slice.get(u, v) < t_n {
                continue;
            }
            let d = (u as f64 - cu).powi(2) + (v as f64 - cv).powi(2);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, Point2::new(u, v)));
            }
        }
    }
    best.map(|(_, p)| p)
}

/// Sampled slice positions `start, start+stride, …` always ending at `end`.
fn sampled_positions(start: usize, end: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (start..=end).step_by(stride.max(1)).collect();
    if *out.last().expect("start <= end") != end {
        out.push(end);
    }
    out
}

struct Step3Task {
    view: View,
    slice: usize,
    positive: Option<Point2>,
    negative: Option<Point2>,
}

/// Propagate every object's seeds to a 3D mask.
///
/// Invalid seeds abort the whole call; an empty step-1 segmentation is
/// reported per object.
pub fn propagate(
    vol: &Volume3D,
    seeds: &[ObjectSeeds],
    segmenter: &dyn PromptSegmenter,
    config: &SamonaiConfig,
) -> Result<Vec<ObjectOutcome>, SamonaiError> {
    config.weights.validate()?;
    for (i, s) in seeds.iter().enumerate() {
        s.validate(i, vol.dims())?;
    }
    let t_n = negative_threshold(vol.data());
    seeds
        .iter()
        .enumerate()
        .map(|(i, s)| propagate_object(vol, i, s, segmenter, config, t_n))
        .collect()
}

fn propagate_object(
    vol: &Volume3D,
    object: usize,
    seeds: &ObjectSeeds,
    segmenter: &dyn PromptSegmenter,
    cfg: &SamonaiConfig,
    t_n: f64,
) -> Result<ObjectOutcome, SamonaiError> {
    let geom = vol.geometry();
    let mut jobs = Vec::new();

    // step 1
    let view1 = seeds.view;
    let k1 = seeds.positive[0][view1.fixed_axis()];
    let slice1 = vol.slice(view1, k1)?;
    let to2d = |view: View, p: [usize; 3]| {
        let (_, u, v) = view.from_voxel(p);
        Point2::new(u, v)
    };
    let pos1: Vec<Point2> = seeds.positive.iter().map(|&p| to2d(view1, p)).collect();
    let neg1: Vec<Point2> = seeds.negative.iter().map(|&p| to2d(view1, p)).collect();
    let logits1 = run_segmenter(segmenter, &slice1, &pos1, &neg1)?;
    jobs.push(SliceJob { step: 1, view: view1, slice: k1, positive: pos1, negative: neg1 });

    let mut known = vec![false; geom.len()];
    let plane_voxels = |view: View, k: usize, logits: &Grid2<f64>, known: &mut Vec<bool>| -> Vec<[usize; 3]> {
        let mut out = Vec::new();
        for v in 0..logits.height {
            for u in 0..logits.width {
                if logits.get(u, v) > cfg.slice_threshold {
                    let p = view.to_voxel(k, u, v);
                    known[geom.index(p)] = true;
                    out.push(p);
                }
            }
        }
        out
    };
    let mask1 = plane_voxels(view1, k1, &logits1, &mut known);
    if mask1.is_empty() {
        return Ok(Err(ObjectFailure::EmptySeedMask { object, label: seeds.label }));
    }

    // step 2
    for view in view1.others() {
        let axis = view.fixed_axis();
        let mut counts = vec![0usize; view.extent(geom.dims)];
        for p in &mask1 {
            counts[p[axis]] += 1;
        }
        let best = counts.iter().copied().max().expect("non-empty extent");
        let j = counts.iter().position(|&c| c == best).expect("max exists");
        let mut pool: Vec<Point2> = mask1.iter().filter(|p| p[axis] == j).map(|&p| to2d(view, p)).collect();
        let slice = vol.slice(view, j)?;
        pool.sort_by_key(|p| p.linear(slice.width));
        let positive = select_prompt(&pool, &slice, &cfg.weights)?;
        // The pool lies on the line where view1's axis equals k1; it runs along
        // whichever in-plane axis is not view1's fixed axis.
        let along_u = view.plane_axes().0 != view1.fixed_axis();
        let negative: Vec<Point2> = line_negative(&slice, &pool, along_u, cfg.negative_margin, t_n).into_iter().collect();
        let logits = run_segmenter(segmenter, &slice, &[positive], &negative)?;
        plane_voxels(view, j, &logits, &mut known);
        jobs.push(SliceJob { step: 2, view, slice: j, positive: vec![positive], negative });
    }

    // step 3
    let known_list: Vec<[usize; 3]> =
        known.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| geom.coords(i)).collect();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for p in &known_list {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }

    let mut tasks = Vec::new();
    for view in View::ALL {
        let axis = view.fixed_axis();
        let (au, av) = view.plane_axes();
        for j in sampled_positions(lo[axis], hi[axis], cfg.stride) {
            let slice_pts: Vec<Point2> = known_list.iter().filter(|p| p[axis] == j).map(|&p| to2d(view, p)).collect();
            let (positive, negative) = if slice_pts.is_empty() {
                (None, None)
            } else {
                let slice = vol.slice(view, j)?;
                let pos = select_prompt(&slice_pts, &slice, &cfg.weights)?;
                let neg = box_negative(&slice, (lo[au], lo[av]), (hi[au], hi[av]), cfg.negative_margin, t_n);
                (Some(pos), neg)
            };
            tasks.push(Step3Task { view, slice: j, positive, negative });
        }
    }

    let exec = if segmenter.is_concurrent() { cfg.execution } else { Execution::Sequential };
    let outputs: Vec<Result<Option<Grid2<f64>>, SamonaiError>> = par::map(exec, &tasks, |t| {
        let Some(pos) = t.positive else { return Ok(None) };
        let slice = vol.slice(t.view, t.slice)?;
        let neg: Vec<Point2> = t.negative.into_iter().collect();
        run_segmenter(segmenter, &slice, &[pos], &neg).map(Some)
    });
    let mut sampled: Vec<(View, usize, Option<Grid2<f64>>)> = Vec::with_capacity(tasks.len());
    for (t, out) in tasks.iter().zip(outputs) {
        sampled.push((t.view, t.slice, out?));
        jobs.push(SliceJob {
            step: 3,
            view: t.view,
            slice: t.slice,
            positive: t.positive.into_iter().collect(),
            negative: t.negative.into_iter().collect(),
        });
    }

    let mut sum = vec![0.0f64; geom.len()];
    for view in View::ALL {
        let per_view = reconstruct_view(geom, view, &sampled);
        for (s, l) in sum.iter_mut().zip(per_view) {
            *s += l;
        }
    }
    let avg: Vec<f64> = sum.into_iter().map(|s| s / 3.0).collect();
    let logits = ObjectLogits::new(Volume3D::new(geom.dims, geom.spacing, avg)?);
    let mut mask = binarize(&logits);
    let name = seeds.name.clone().unwrap_or_else(|| format!("label{}", seeds.label));
    let data: Vec<u8> = mask.data().iter().map(|&m| if m == 1 { seeds.label } else { 0 }).collect();
    mask = Mask3D::new(geom.dims, geom.spacing, data, LabelMap::new([(seeds.label, name)]))?;
    Ok(Ok(ObjectSegmentation { label: seeds.label, logits, mask, bbox: (lo, hi), jobs }))
}

/// Logit volume of one view: sampled slices as segmented, gaps linearly
/// interpolated, zero outside the sampled range.
fn reconstruct_view(geom: Geometry, view: View, sampled: &[(View, usize, Option<Grid2<f64>>)]) -> Vec<f64> {
    let mut out = vec![0.0; geom.len()];
    let (w, h) = view.plane_shape(geom.dims);
    let zero = Grid2::filled(w, h, 0.0);
    let anchors: Vec<(usize, &Grid2<f64>)> = sampled
        .iter()
        .filter(|(v, _, _)| *v == view)
        .map(|(_, j, g)| (*j, g.as_ref().unwrap_or(&zero)))
        .collect();
    let mut write = |j: usize, value: &dyn Fn(usize, usize) -> f64| {
        for v in 0..h {
            for u in 0..w {
                out[geom.index(view.to_voxel(j, u, v))] = value(u, v);
            }
        }
    };
    for pair in anchors.windows(2) {
        let (j0, g0) = pair[0];
        let (j1, g1) = pair[1];
        write(j0, &|u, v| g0.get(u, v));
        for j in j0 + 1..j1 {
            let t = (j - j0) as f64 / (j1 - j0) as f64;
            write(j, &|u, v| (1.0 - t) * g0.get(u, v) + t * g1.get(u, v));
        }
    }
    if let Some(&(j, g)) = anchors.last() {
        write(j, &|u, v| g.get(u, v));
    }
    out
}
