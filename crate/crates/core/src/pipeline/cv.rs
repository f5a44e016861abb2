use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PipelineConfig, PipelineError};
use crate::features::io::SurvivalRecord;
use crate::features::{apply_normalizer, fit_normalizer, FeatureMatrix, FeatureTable, NormalizerState, Phase};
use crate::par;
use crate::stats::{
    bootstrap_hr, c_index, log_rank, mean, randomization_test, std_dev, stratify, BootstrapHr, LogRank,
    RandomizationResult, RiskGroup, StatsError,
};
use crate::survaminn::{late_fusion, predict, train, PatientBag};
use crate::SeedStream;

/// Raw tumor rows of one patient in one phase.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Tumors {
    pub rows: Vec<Vec<f64>>,
    /// Index of the largest tumor when every row carries a volume.
    pub largest: Option<usize>,
}

impl Tumors {
    pub fn bag(&self, state: &NormalizerState, names: &[String], id: &str, time: f64, event: bool) -> Result<PatientBag, PipelineError> {
        let m = apply_normalizer(&FeatureMatrix::new(names.to_vec(), self.rows.clone())?, state)?;
        Ok(PatientBag {
            patient_id: id.to_string(),
            instances: m.rows().map(<[f64]>::to_vec).collect(),
            time,
            event,
            largest: self.largest,
        })
    }
}

pub(crate) fn group_tumors(table: &FeatureTable, phase: Phase) -> BTreeMap<String, Tumors> {
    let mut by_patient = BTreeMap::<String, Vec<_>>::new();
    for r in table.records.iter().filter(|r| r.phase == phase) {
        by_patient.entry(r.patient_id.clone()).or_default().push((r.features.clone(), r.volume_mm3));
    }
    by_patient
        .into_iter()
        .map(|(id, items)| {
            let vols: Option<Vec<f64>> = items.iter().map(|(_, v)| *v).collect();
            let largest = vols.map(|v| (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b }));
            (id, Tumors { rows: items.into_iter().map(|(f, _)| f).collect(), largest })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedPatient {
    pub patient_id: String,
    pub reason: String,
}

/// Patients with both tumors and a survival record, in id order, with their
/// tumors grouped per phase.
#[derive(Debug, Clone, PartialEq)]
pub struct CvData {
    pub feature_names: Vec<String>,
    pub patients: Vec<String>,
    pub times: Vec<f64>,
    pub events: Vec<bool>,
    pub excluded: Vec<ExcludedPatient>,
    pub(crate) phases: Vec<(Phase, Vec<Option<Tumors>>)>,
}

impl CvData {
    pub fn new(table: &FeatureTable, survival: &[SurvivalRecord]) -> Result<Self, PipelineError> {
        let surv: BTreeMap<&str, &SurvivalRecord> = survival.iter().map(|s| (s.patient_id.as_str(), s)).collect();
        let with_tumors = table.patients();
        let mut excluded = Vec::new();
        for s in survival.iter().filter(|s| with_tumors.binary_search(&s.patient_id).is_err()) {
            excluded.push(ExcludedPatient { patient_id: s.patient_id.clone(), reason: "no tumors".into() });
        }
        let mut patients = Vec::new();
        for p in with_tumors {
            if surv.contains_key(p.as_str()) {
                patients.push(p);
            } else {
                excluded.push(ExcludedPatient { patient_id: p, reason: "no survival record".into() });
            }
        }
        excluded.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        if patients.is_empty() {
            return Err(PipelineError::NoPatients);
        }
        let phases = table
            .phases()
            .into_iter()
            .map(|ph| {
                let mut g = group_tumors(table, ph);
                (ph, patients.iter().map(|p| g.remove(p)).collect())
            })
            .collect();
        Ok(Self {
            feature_names: table.names.clone(),
            times: patients.iter().map(|p| surv[p.as_str()].time_months).collect(),
            events: patients.iter().map(|p| surv[p.as_str()].event).collect(),
            patients,
            excluded,
            phases,
        })
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }
}

/// Fold of every patient: a seeded shuffle dealt round-robin. With
/// `events`, uncensored then censored patients are dealt in turn so both
/// groups spread evenly over the folds.
pub fn assign_folds<R: Rng>(n: usize, folds: usize, events: Option<&[bool]>, rng: &mut R) -> Vec<usize> {
    let order: Vec<usize> = match events {
        None => {
            let mut o: Vec<usize> = (0..n).collect();
            o.shuffle(rng);
            o
        }
        Some(ev) => {
            let mut unc: Vec<usize> = (0..n).filter(|&i| ev[i]).collect();
            let mut cen: Vec<usize> = (0..n).filter(|&i| !ev[i]).collect();
            unc.shuffle(rng);
            cen.shuffle(rng);
            unc.into_iter().chain(cen).collect()
        }
    };
    let mut out = vec![0; n];
    for (pos, i) in order.into_iter().enumerate() {
        out[i] = pos % folds;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub repeat: usize,
    /// Fold of each patient, in manifest patient order.
    pub folds: Vec<usize>,
    /// C-index within each held-out fold; `None` when a fold has no usable pair.
    pub fold_c_index: Vec<Option<f64>>,
    /// C-index of the pooled held-out hazards.
    pub c_index: f64,
    pub hazards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub groups: Vec<RiskGroup>,
    pub log_rank: Option<LogRank>,
    pub bootstrap: Option<BootstrapHr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: PipelineConfig,
    pub patients: Vec<String>,
    pub times: Vec<f64>,
    pub events: Vec<bool>,
    pub excluded: Vec<ExcludedPatient>,
    pub repeats: Vec<RepeatResult>,
    pub mean_c_index: f64,
    pub std_c_index: f64,
    /// Held-out hazard per patient averaged over repeats.
    pub hazards: Vec<f64>,
    #[serde(default)]
    pub randomization: Option<RandomizationResult>,
    #[serde(default)]
    pub evaluation: Option<Evaluation>,
    /// The only field that differs between identical reruns.
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

fn fold_job(
    config: &PipelineConfig,
    data: &CvData,
    times: &[f64],
    events: &[bool],
    folds: &[usize],
    repeat: usize,
    fold: usize,
) -> Result<Vec<(usize, f64)>, PipelineError> {
    let seeds = SeedStream::new(config.seed);
    let test: Vec<usize> = (0..data.len()).filter(|&i| folds[i] == fold).collect();
    let mut phase_maps = Vec::new();
    for (pi, (phase, tumors)) in data.phases.iter().enumerate() {
        let train_ids: Vec<usize> = (0..data.len()).filter(|&i| folds[i] != fold && tumors[i].is_some()).collect();
        let test_ids: Vec<usize> = test.iter().copied().filter(|&i| tumors[i].is_some()).collect();
        if test_ids.is_empty() {
            continue;
        }
        let n_events = train_ids.iter().filter(|&&i| events[i]).count();
        if n_events < 2 {
            return Err(PipelineError::InsufficientEvents { repeat, fold, phase: phase.to_string(), events: n_events });
        }
        let rows: Vec<Vec<f64>> = train_ids.iter().flat_map(|&i| tumors[i].as_ref().unwrap().rows.iter().cloned()).collect();
        let state = fit_normalizer(&FeatureMatrix::new(data.feature_names.clone(), rows)?)?;
        let bag = |i: usize| tumors[i].as_ref().unwrap().bag(&state, &data.feature_names, &data.patients[i], times[i], events[i]);
        let train_bags = train_ids.iter().map(|&i| bag(i)).collect::<Result<Vec<_>, _>>()?;
        let test_bags = test_ids.iter().map(|&i| bag(i)).collect::<Result<Vec<_>, _>>()?;
        let job_seed = seeds.derive("pipeline/train", repeat as u64, (fold * data.phases.len() + pi) as u64);
        let model = train(&train_bags, &config.train_config(job_seed))?;
        let pred = predict(&model.network, &test_bags, config.pooling)?;
        let map: BTreeMap<String, f64> = test_ids.iter().map(|&i| data.patients[i].clone()).zip(pred).collect();
        phase_maps.push(map);
    }
    let refs: Vec<&BTreeMap<String, f64>> = phase_maps.iter().collect();
    let ids: Vec<String> = test.iter().map(|&i| data.patients[i].clone()).collect();
    let fused = late_fusion(&refs, &ids)?;
    Ok(test.into_iter().zip(fused).collect())
}

/// Every repeat of k-fold CV on the given labels.
fn cv_repeats(config: &PipelineConfig, data: &CvData, times: &[f64], events: &[bool]) -> Result<Vec<RepeatResult>, PipelineError> {
    let n_events = events.iter().filter(|&&e| e).count();
    if n_events < config.folds {
        return Err(PipelineError::TooFewEvents { events: n_events, folds: config.folds });
    }
    let seeds = SeedStream::new(config.seed);
    let assignments: Vec<Vec<usize>> = (0..config.repeats)
        .map(|r| {
            let ev = config.stratified_folds.then_some(events);
            assign_folds(data.len(), config.folds, ev, &mut seeds.rng("pipeline/folds", r as u64, 0))
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..config.repeats).flat_map(|r| (0..config.folds).map(move |f| (r, f))).collect();
    let outputs = par::map(config.execution, &jobs, |&(r, f)| fold_job(config, data, times, events, &assignments[r], r, f));

    let mut results = Vec::with_capacity(config.repeats);
    let mut outputs = outputs.into_iter();
    for (r, folds) in assignments.into_iter().enumerate() {
        let mut hazards = vec![f64::NAN; data.len()];
        let mut fold_c_index = Vec::with_capacity(config.folds);
        for _ in 0..config.folds {
            let pairs = outputs.next().expect("one output per job")?;
            let t: Vec<f64> = pairs.iter().map(|&(i, _)| times[i]).collect();
            let d: Vec<bool> = pairs.iter().map(|&(i, _)| events[i]).collect();
            let h: Vec<f64> = pairs.iter().map(|&(_, h)| h).collect();
            fold_c_index.push(c_index(&t, &d, &h, config.tie_rule).ok());
            for (i, h) in pairs {
                hazards[i] = h;
            }
        }
        let c = c_index(times, events, &hazards, config.tie_rule)?;
        results.push(RepeatResult { repeat: r, folds, fold_c_index, c_index: c, hazards });
    }
    Ok(results)
}

fn mean_c_index(repeats: &[RepeatResult]) -> f64 {
    mean(&repeats.iter().map(|r| r.c_index).collect::<Vec<_>>())
}

/// Repeated k-fold cross-validation. Each fold job normalizes features with
/// training-fold statistics only, trains one network per phase and fuses
/// the held-out phase hazards.
pub fn run_cv(config: &PipelineConfig, table: &FeatureTable, survival: &[SurvivalRecord]) -> Result<RunManifest, PipelineError> {
    config.validate()?;
    let start = Instant::now();
    let data = CvData::new(table, survival)?;
    let repeats = cv_repeats(config, &data, &data.times, &data.events)?;
    let scores: Vec<f64> = repeats.iter().map(|r| r.c_index).collect();
    let hazards = (0..data.len()).map(|i| mean(&repeats.iter().map(|r| r.hazards[i]).collect::<Vec<_>>())).collect();
    Ok(RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        mean_c_index: mean_c_index(&repeats),
        std_c_index: if scores.len() > 1 { std_dev(&scores, 1) } else { 0.0 },
        patients: data.patients,
        times: data.times,
        events: data.events,
        excluded: data.excluded,
        repeats,
        hazards,
        randomization: None,
        evaluation: None,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Median-split risk groups, their log-rank test and the bootstrapped hazard
/// ratio of the averaged held-out hazards.
pub fn evaluate(manifest: &RunManifest) -> Result<Evaluation, PipelineError> {
    let config = &manifest.config;
    let groups = stratify(&manifest.hazards)?;
    let split = |g: RiskGroup| {
        let idx: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == g).collect();
        (idx.iter().map(|&i| manifest.times[i]).collect::<Vec<_>>(), idx.iter().map(|&i| manifest.events[i]).collect::<Vec<_>>())
    };
    let (tl, dl) = split(RiskGroup::Low);
    let (th, dh) = split(RiskGroup::High);
    let log_rank = match log_rank(&th, &dh, &tl, &dl) {
        Ok(l) => Some(l),
        Err(StatsError::Empty(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let bootstrap = if config.bootstrap_replicates > 0 {
        let seed = SeedStream::new(config.seed).derive("pipeline/bootstrap", 0, 0);
        Some(bootstrap_hr(&manifest.hazards, &manifest.times, &manifest.events, config.bootstrap_replicates, seed, config.execution)?)
    } else {
        None
    };
    Ok(Evaluation { groups, log_rank, bootstrap })
}

/// [`run_cv`], then the randomization test (when configured) and the
/// risk-group evaluation. Null replicates rerun the whole CV on shuffled
/// labels with the same folds and training seeds.
pub fn run_pipeline(config: &PipelineConfig, table: &FeatureTable, survival: &[SurvivalRecord]) -> Result<RunManifest, PipelineError> {
    let start = Instant::now();
    let mut manifest = run_cv(config, table, survival)?;
    if config.randomization_replicates > 0 {
        let data = CvData::new(table, survival)?;
        let seed = SeedStream::new(config.seed).derive("pipeline/randomization", 0, 0);
        let observed = manifest.mean_c_index;
        let runner = |t: &[f64], d: &[bool], r: Option<usize>| match r {
            None => Ok(observed),
            Some(_) => cv_repeats(config, &data, t, d).map(|reps| mean_c_index(&reps)),
        };
        manifest.randomization =
            Some(randomization_test(runner, &data.times, &data.events, config.randomization_replicates, seed, config.execution)?);
    }
    manifest.evaluation = Some(evaluate(&manifest)?);
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::planted_cohort;
    use crate::Execution;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quick(seed: u64) -> PipelineConfig {
        PipelineConfig {
            seed,
            folds: 2,
            repeats: 2,
            epochs: 5,
            encoder: vec![4, 2],
            regressor: vec![2],
            bootstrap_replicates: 20,
            ..Default::default()
        }
    }

    #[test]
    fn folds_partition_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = assign_folds(10, 3, None, &mut rng);
        let counts: Vec<usize> = (0..3).map(|k| f.iter().filter(|&&x| x == k).count()).collect();
        assert_eq!(counts, vec![4, 3, 3]);
        let ev = [true, true, true, false, false, false, true, false, false];
        let f = assign_folds(9, 2, Some(&ev), &mut rng);
        let per = |k: usize, e: bool| (0..9).filter(|&i| f[i] == k && ev[i] == e).count();
        assert_eq!((per(0, true), per(1, true)), (2, 2));
        assert!(per(0, false).abs_diff(per(1, false)) <= 1);
    }

    #[test]
    fn manifest_is_deterministic_and_patient_level() {
        let c = planted_cohort(40, 3, 1.0, 0.3, 5);
        let a = run_cv(&quick(1), &c.features, &c.survival).unwrap();
        let b = run_cv(&PipelineConfig { execution: Execution::Sequential, ..quick(1) }, &c.features, &c.survival).unwrap();
        assert_eq!(a.repeats, b.repeats);
        assert_eq!(a.hazards, b.hazards);
        assert_eq!(a.repeats.len(), 2);
        for r in &a.repeats {
            assert_eq!(r.folds.len(), 40);
            assert!(r.hazards.iter().all(|h| h.is_finite()));
            assert!(r.folds.iter().all(|&f| f < 2));
        }
        assert_ne!(a.repeats[0].folds, a.repeats[1].folds);
        let other = run_cv(&quick(2), &c.features, &c.survival).unwrap();
        assert_ne!(other.repeats[0].folds, a.repeats[0].folds);
    }

    #[test]
    fn exclusions_are_flagged() {
        let mut c = planted_cohort(20, 3, 1.0, 0.2, 6);
        c.survival.push(SurvivalRecord { patient_id: "ghost".into(), time_months: 3.0, event: true });
        c.features.records.retain(|r| r.patient_id != "P0003");
        let m = run_cv(&quick(0), &c.features, &c.survival).unwrap();
        let ids: Vec<&str> = m.excluded.iter().map(|e| e.patient_id.as_str()).collect();
        assert_eq!(ids, vec!["P0003", "ghost"]);
        assert_eq!(m.patients.len(), 19);
    }

    #[test]
    fn too_few_events() {
        let mut c = planted_cohort(12, 3, 1.0, 0.0, 7);
        for (i, s) in c.survival.iter_mut().enumerate() {
            s.event = i < 2;
        }
        let cfg = PipelineConfig { folds: 3, ..quick(0) };
        assert!(matches!(run_cv(&cfg, &c.features, &c.survival), Err(PipelineError::TooFewEvents { events: 2, folds: 3 })));
        let cfg = PipelineConfig { folds: 2, ..quick(0) };
        assert!(matches!(run_cv(&cfg, &c.features, &c.survival), Err(PipelineError::InsufficientEvents { .. })));
    }

    #[test]
    fn pipeline_fills_evaluation_and_null() {
        let c = planted_cohort(30, 3, 1.0, 0.3, 8);
        let cfg = PipelineConfig { randomization_replicates: 3, ..quick(3) };
        let m = run_pipeline(&cfg, &c.features, &c.survival).unwrap();
        let r = m.randomization.as_ref().unwrap();
        assert_eq!(r.null.len(), 3);
        assert_eq!(r.observed, m.mean_c_index);
        let e = m.evaluation.as_ref().unwrap();
        assert_eq!(e.groups.len(), 30);
        assert_eq!(e.bootstrap.as_ref().unwrap().hazard_ratios.len() + e.bootstrap.as_ref().unwrap().failed, 20);
    }
}
