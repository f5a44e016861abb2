use std::fs;

use livsurv::features::io::{read_features, read_survival, write_features, write_survival};
use livsurv::features::{extract_tumors, ExtractionSettings, FeatureTable, Phase};
use livsurv::pipeline::{emit_results, run_pipeline, run_segmentation, PipelineConfig, RunManifest};
use livsurv::synthetic::{liver_phantom, multifocal_cohort, planted_cohort};
use livsurv::volume::nrrd::{read_mask, read_volume, write_mask, write_volume};
use livsurv::volume::LabelMap;
use livsurv::Execution;

fn quick() -> PipelineConfig {
    PipelineConfig {
        folds: 2,
        repeats: 2,
        epochs: 8,
        encoder: vec![6, 3],
        regressor: vec![2],
        bootstrap_replicates: 30,
        randomization_replicates: 3,
        ..Default::default()
    }
}

fn normalized(mut m: RunManifest) -> RunManifest {
    m.wall_clock_seconds = 0.0;
    m.config.execution = Execution::Sequential;
    m
}

#[test]
fn thread_count_does_not_change_results() {
    let c = multifocal_cohort(40, 4, 3, 1.5, 0.3, 5);
    let seq = run_pipeline(&PipelineConfig { execution: Execution::Sequential, ..quick() }, &c.features, &c.survival).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let par = pool
        .install(|| run_pipeline(&PipelineConfig { execution: Execution::Parallel, ..quick() }, &c.features, &c.survival))
        .unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_results(&seq, a.path()).unwrap();
    emit_results(&par, b.path()).unwrap();
    for f in ["hazards.csv", "km.csv", "null.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_eq!(normalized(seq), normalized(par));
}

#[test]
fn rerun_is_bit_identical_and_seed_matters() {
    let c = planted_cohort(30, 3, 1.0, 0.3, 8);
    let cfg = PipelineConfig { randomization_replicates: 0, ..quick() };
    let a = run_pipeline(&cfg, &c.features, &c.survival).unwrap();
    let b = run_pipeline(&cfg, &c.features, &c.survival).unwrap();
    assert_eq!(normalized(a.clone()), normalized(b));
    let other = run_pipeline(&PipelineConfig { seed: 1, ..cfg }, &c.features, &c.survival).unwrap();
    assert_ne!(a.hazards, other.hazards);
}

#[test]
fn manifest_folds_are_patient_level_partitions() {
    let c = multifocal_cohort(30, 3, 4, 1.0, 0.3, 2);
    let m = run_pipeline(&PipelineConfig { randomization_replicates: 0, ..quick() }, &c.features, &c.survival).unwrap();
    for r in &m.repeats {
        assert_eq!(r.folds.len(), m.patients.len());
        let mut sizes = vec![0; m.config.folds];
        r.folds.iter().for_each(|&f| sizes[f] += 1);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "{sizes:?}");
        assert!(r.hazards.iter().all(|h| h.is_finite()));
    }
    let ev = m.evaluation.as_ref().unwrap();
    assert_eq!(ev.groups.len(), m.patients.len());
    assert!(ev.bootstrap.as_ref().unwrap().ci_low <= ev.bootstrap.as_ref().unwrap().ci_high);
}

#[test]
fn segmentation_through_files_to_features() {
    let dir = tempfile::tempdir().unwrap();
    let p = liver_phantom();
    let labels = LabelMap::liver_tumor_spleen();
    write_volume(dir.path().join("image.nrrd"), &p.image).unwrap();
    let image = read_volume(dir.path().join("image.nrrd")).unwrap();
    assert_eq!(image, p.image);

    let out = run_segmentation(&PipelineConfig::default(), &image, &p.seeds, &labels, Some(&p.truth)).unwrap();
    write_mask(dir.path().join("mask.nrrd"), &out.mask).unwrap();
    let mask = read_mask(dir.path().join("mask.nrrd"), Some(labels)).unwrap();
    assert_eq!(mask, out.mask);

    let (records, dropped) =
        extract_tumors(&image, &mask, 2, "P1", Phase::Post, &ExtractionSettings::default(), Execution::Sequential).unwrap();
    assert!(dropped.is_empty());
    // the decoy and the 64 mm³ tumor are gone; one tumor remains
    assert_eq!(records.len(), 1);
    let r = &records[0];
    assert!(r.volume_mm3.unwrap() >= 100.0);
    assert!(r.diameter_mm.unwrap() > 6.0 && r.diameter_mm.unwrap() < 10.0);

    let table = FeatureTable::new(livsurv::features::feature_names(), records).unwrap();
    write_features(dir.path().join("features.csv"), &table).unwrap();
    let back = read_features(dir.path().join("features.csv")).unwrap();
    assert_eq!(back.names, table.names);
    assert_eq!(back.records[0].features, table.records[0].features);
}

#[test]
fn survival_csv_round_trip() {
    let c = planted_cohort(12, 2, 1.0, 0.5, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("survival.csv");
    write_survival(&path, &c.survival).unwrap();
    assert_eq!(read_survival(&path).unwrap(), c.survival);
}
