use std::collections::VecDeque;

use super::{Point2, PromptSegmenter};
use crate::volume::Grid2;

/// Region-growing stand-in for a promptable segmenter.
///
/// Each positive point floods 4-connected pixels whose intensity is within
/// `tolerance` of the seed pixel; regions flooded from negative points under
/// the same rule are removed. Logits are 1 inside and 0 outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSegmenter {
    pub tolerance: f64,
}

impl OracleSegmenter {
    pub fn new(tolerance: f64) -> Self {
        Self { tolerance }
    }

    fn flood(&self, slice: &Grid2<f64>, seed: Point2, out: &mut [bool]) {
        let (w, h) = slice.shape();
        let ref_value = slice.get(seed.u, seed.v);
        let start = slice.index(seed.u, seed.v);
        if out[start] {
            return;
        }
        out[start] = true;
        let mut queue = VecDeque::from([(seed.u, seed.v)]);
        while let Some((u, v)) = queue.pop_front() {
            let mut visit = |nu: usize, nv: usize| {
                let i = slice.index(nu, nv);
                if !out[i] && (slice.get(nu, nv) - ref_value).abs() <= self.tolerance {
                    out[i] = true;
                    queue.push_back((nu, nv));
                }
            };
            if u > 0 {
                visit(u - 1, v);
            }
            if u + 1 < w {
                visit(u + 1, v);
            }
            if v > 0 {
                visit(u, v - 1);
            }
            if v + 1 < h {
                visit(u, v + 1);
            }
        }
    }
}

impl PromptSegmenter for OracleSegmenter {
    fn segment(&self, slice: &Grid2<f64>, positives: &[Point2], negatives: &[Point2]) -> Grid2<f64> {
        let n = slice.data.len();
        let mut inside = vec![false; n];
        for &p in positives {
            // separate buffers per seed so one flood cannot block another's tolerance test
            let mut region = vec![false; n];
            self.flood(slice, p, &mut region);
            inside.iter_mut().zip(region).for_each(|(a, b)| *a |= b);
        }
        let mut suppressed = vec![false; n];
        for &q in negatives {
            let mut region = vec![false; n];
            self.flood(slice, q, &mut region);
            suppressed.iter_mut().zip(region).for_each(|(a, b)| *a |= b);
        }
        Grid2 {
            width: slice.width,
            height: slice.height,
            data: inside
                .iter()
                .zip(&suppressed)
                .map(|(&i, &s)| if i && !s { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(u: usize, v: usize) -> Point2 {
        Point2 { u, v }
    }

    #[test]
    fn constant_slice_is_fully_segmented() {
        let g = Grid2::filled(6, 4, 2.0);
        let out = OracleSegmenter::new(0.0).segment(&g, &[pt(1, 1)], &[]);
        assert!(out.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn two_region_slice() {
        let mut g = Grid2::filled(6, 4, 0.0);
        for v in 0..4 {
            for u in 3..6 {
                g.set(u, v, 9.0);
            }
        }
        let out = OracleSegmenter::new(0.5).segment(&g, &[pt(4, 2)], &[]);
        for v in 0..4 {
            for u in 0..6 {
                assert_eq!(out.get(u, v), if u >= 3 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn negative_in_same_region_suppresses() {
        let g = Grid2::filled(5, 5, 1.0);
        let out = OracleSegmenter::new(0.0).segment(&g, &[pt(0, 0)], &[pt(4, 4)]);
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tolerance_is_relative_to_seed() {
        let g = Grid2 { width: 4, height: 1, data: vec![0.0, 1.0, 2.0, 3.0] };
        let out = OracleSegmenter::new(1.0).segment(&g, &[pt(0, 0)], &[]);
        assert_eq!(out.data, vec![1.0, 1.0, 0.0, 0.0]);
    }
}
