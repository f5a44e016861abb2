//! Deterministic phantoms and survival cohorts with known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::features::io::SurvivalRecord;
use crate::features::{FeatureTable, Phase, TumorRecord};
use crate::samonai::ObjectSeeds;
use crate::volume::{Geometry, LabelMap, Mask3D, View, Volume3D};

/// Image plus ground-truth mask.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub image: Volume3D,
    pub truth: Mask3D,
    pub seeds: Vec<ObjectSeeds>,
}

fn paint(geom: Geometry, img: &mut [f64], mask: &mut [u8], value: f64, label: u8, inside: impl Fn([usize; 3]) -> bool) {
    for (i, (v, m)) in img.iter_mut().zip(mask.iter_mut()).enumerate() {
        if inside(geom.coords(i)) {
            *v = value;
            *m = label;
        }
    }
}

fn sphere(center: [usize; 3], radius: f64) -> impl Fn([usize; 3]) -> bool {
    move |p| {
        let d2: f64 = p.iter().zip(center).map(|(&a, c)| (a as f64 - c as f64).powi(2)).sum();
        d2 <= radius * radius
    }
}

fn cube(lo: [usize; 3], side: usize) -> impl Fn([usize; 3]) -> bool {
    move |p| p.iter().zip(lo).all(|(&a, l)| a >= l && a < l + side)
}

/// Constant cube of side `side` centred in an `n³` grid on zero background,
/// seeded at its centre in the axial view.
pub fn cube_phantom(n: usize, side: usize, value: f64) -> Phantom {
    let geom = Geometry::new([n; 3], [1.0; 3]).expect("positive dims");
    let lo = (n - side) / 2;
    let mut img = vec![0.0; geom.len()];
    let mut mask = vec![0u8; geom.len()];
    paint(geom, &mut img, &mut mask, value, 1, cube([lo; 3], side));
    let c = lo + side / 2;
    Phantom {
        image: Volume3D::new(geom.dims, geom.spacing, img).expect("finite"),
        truth: Mask3D::new(geom.dims, geom.spacing, mask, LabelMap::binary("object")).expect("labels"),
        seeds: vec![ObjectSeeds::single(1, View::Axial, [c; 3])],
    }
}

/// Ball of `radius` voxels centred in an `n³` grid.
pub fn sphere_phantom(n: usize, radius: f64, value: f64) -> Phantom {
    let geom = Geometry::new([n; 3], [1.0; 3]).expect("positive dims");
    let c = n / 2;
    let mut img = vec![0.0; geom.len()];
    let mut mask = vec![0u8; geom.len()];
    paint(geom, &mut img, &mut mask, value, 1, sphere([c; 3], radius));
    Phantom {
        image: Volume3D::new(geom.dims, geom.spacing, img).expect("finite"),
        truth: Mask3D::new(geom.dims, geom.spacing, mask, LabelMap::binary("object")).expect("labels"),
        seeds: vec![ObjectSeeds::single(1, View::Axial, [c; 3])],
    }
}

/// Liver cube (label 1) holding a spherical tumor and a 4³ (64 mm³) tumor
/// (label 2), plus a tumor-like decoy blob outside the liver. Seeds: liver,
/// the two tumors, and the decoy (as a tumor).
pub fn liver_phantom() -> Phantom {
    let geom = Geometry::new([48, 48, 48], [1.0; 3]).expect("positive dims");
    let mut img = vec![0.0; geom.len()];
    let mut truth = vec![0u8; geom.len()];
    paint(geom, &mut img, &mut truth, 60.0, 1, cube([6, 6, 6], 22));
    paint(geom, &mut img, &mut truth, 150.0, 2, sphere([14, 15, 16], 4.0));
    paint(geom, &mut img, &mut truth, 150.0, 2, cube([20, 20, 20], 4));
    // decoy: bright blob outside the liver, not part of the truth
    let mut scratch = vec![0u8; geom.len()];
    paint(geom, &mut img, &mut scratch, 150.0, 2, sphere([38, 38, 38], 4.0));
    let seeds = vec![
        ObjectSeeds { name: Some("liver".into()), ..ObjectSeeds::single(1, View::Axial, [9, 9, 24]) },
        ObjectSeeds { name: Some("tumor".into()), ..ObjectSeeds::single(2, View::Axial, [14, 15, 16]) },
        ObjectSeeds { name: Some("small".into()), ..ObjectSeeds::single(2, View::Axial, [21, 21, 21]) },
        ObjectSeeds { name: Some("decoy".into()), ..ObjectSeeds::single(2, View::Axial, [38, 38, 38]) },
    ];
    Phantom {
        image: Volume3D::new(geom.dims, geom.spacing, img).expect("finite"),
        truth: Mask3D::new(geom.dims, geom.spacing, truth, LabelMap::liver_tumor_spleen()).expect("labels"),
        seeds,
    }
}

/// A feature table with matching survival records.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub features: FeatureTable,
    pub survival: Vec<SurvivalRecord>,
    /// True log-hazard per patient, in `survival` order.
    pub log_hazard: Vec<f64>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Exponential event times with rate `exp(log_hazard)`, right-censored by
/// independent exponential times whose rate is tuned (by bisection on the
/// drawn sample) to censor `censor_frac` of patients.
fn survival_times(log_hazard: &[f64], censor_frac: f64, rng: &mut ChaCha8Rng) -> Vec<(f64, bool)> {
    let t: Vec<f64> = log_hazard.iter().map(|h| -rng.gen_range(f64::EPSILON..1.0f64).ln() / h.exp()).collect();
    let e: Vec<f64> = log_hazard.iter().map(|_| -rng.gen_range(f64::EPSILON..1.0f64).ln()).collect();
    let censored = |rate: f64| t.iter().zip(&e).filter(|(ti, ei)| **ei / rate < **ti).count() as f64 / t.len() as f64;
    let (mut lo, mut hi) = (1e-6f64, 1e6f64);
    if censor_frac <= 0.0 {
        return t.iter().map(|&x| (x, true)).collect();
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if censored(mid) < censor_frac {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    t.iter().zip(&e).map(|(&ti, &ei)| {
        let c = ei / hi;
        if c < ti { (c, false) } else { (ti, true) }
    })
    .collect()
}

fn feature_names(dim: usize) -> Vec<String> {
    (0..dim).map(|j| format!("f{j:02}")).collect()
}

/// One tumor per patient; log-hazard is `beta · f00`, the remaining
/// `dim − 1` features are noise. Features are positive (log-normal).
pub fn planted_cohort(n: usize, dim: usize, beta: f64, censor_frac: f64, seed: u64) -> Cohort {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    let mut log_hazard = Vec::with_capacity(n);
    for i in 0..n {
        let z: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
        log_hazard.push(beta * z[0]);
        records.push(TumorRecord {
            patient_id: format!("P{i:04}"),
            tumor_id: "t0".into(),
            phase: Phase::Post,
            diameter_mm: None,
            volume_mm3: None,
            features: z.iter().map(|v| (0.5 * v).exp() * 10.0).collect(),
        });
    }
    let times = survival_times(&log_hazard, censor_frac, &mut rng);
    let survival = records
        .iter()
        .zip(times)
        .map(|(r, (t, event))| SurvivalRecord { patient_id: r.patient_id.clone(), time_months: t, event })
        .collect();
    Cohort { features: FeatureTable::new(feature_names(dim), records).expect("valid records"), survival, log_hazard }
}

/// Multifocal patients with 1..=`max_tumors` tumors. Each tumor's risk is
/// `beta · f00`; the patient log-hazard is the log-sum-exp of its tumor
/// risks, so outcome follows the worst tumors and their number. Column
/// `f01` is a tumor volume unrelated to risk.
pub fn multifocal_cohort(n: usize, dim: usize, max_tumors: usize, beta: f64, censor_frac: f64, seed: u64) -> Cohort {
    assert!(dim >= 2 && max_tumors >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut log_hazard = Vec::with_capacity(n);
    for i in 0..n {
        let k = rng.gen_range(1..=max_tumors);
        let mut risks = Vec::with_capacity(k);
        for t in 0..k {
            let z: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
            risks.push(beta * z[0]);
            let mut features: Vec<f64> = z.iter().map(|v| (0.5 * v).exp() * 10.0).collect();
            features[1] = rng.gen_range(100.0..5000.0);
            records.push(TumorRecord {
                patient_id: format!("P{i:04}"),
                tumor_id: format!("t{t}"),
                phase: Phase::Post,
                diameter_mm: None,
                volume_mm3: Some(features[1]),
                features,
            });
        }
        let m = risks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        log_hazard.push(m + risks.iter().map(|r| (r - m).exp()).sum::<f64>().ln());
    }
    let times = survival_times(&log_hazard, censor_frac, &mut rng);
    let survival = (0..n)
        .zip(times)
        .map(|(i, (t, event))| SurvivalRecord { patient_id: format!("P{i:04}"), time_months: t, event })
        .collect();
    Cohort { features: FeatureTable::new(feature_names(dim), records).expect("valid records"), survival, log_hazard }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{c_index, TieRule};

    #[test]
    fn phantom_sizes() {
        let c = cube_phantom(40, 20, 100.0);
        assert_eq!(c.truth.count(1), 8000);
        let s = sphere_phantom(32, 8.0, 100.0);
        let frac = s.truth.count(1) as f64 / 32f64.powi(3);
        assert!(frac > 0.05 && frac < 0.2);
        let l = liver_phantom();
        let ball = (0..9usize * 9 * 9).filter(|&i| sphere([4; 3], 4.0)([i % 9, i / 9 % 9, i / 81])).count();
        assert_eq!(l.truth.count(2), ball + 64);
        assert!(l.truth.count(1) > 8000);
        assert_eq!(l.image.get([38, 38, 38]), 150.0);
        assert_eq!(l.truth.get([38, 38, 38]), 0);
    }

    #[test]
    fn planted_cohort_properties() {
        let c = planted_cohort(400, 6, 1.5, 0.4, 1);
        assert_eq!(c.features.records.len(), 400);
        let cens = c.survival.iter().filter(|s| !s.event).count() as f64 / 400.0;
        assert!((cens - 0.4).abs() < 0.01, "{cens}");
        let t: Vec<f64> = c.survival.iter().map(|s| s.time_months).collect();
        let d: Vec<bool> = c.survival.iter().map(|s| s.event).collect();
        let oracle = c_index(&t, &d, &c.log_hazard, TieRule::Strict).unwrap();
        assert!(oracle > 0.75, "{oracle}");
        let again = planted_cohort(400, 6, 1.5, 0.4, 1);
        assert_eq!(again.survival, c.survival);
    }

    #[test]
    fn multifocal_cohort_properties() {
        let c = multifocal_cohort(100, 4, 5, 1.0, 0.3, 2);
        assert_eq!(c.features.patients().len(), 100);
        assert!(c.features.records.len() > 150);
        assert!(c.features.records.iter().all(|r| r.volume_mm3.is_some()));
    }
}
