//! `livsurv` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
//! `LIVSURV_LOG` sets stderr verbosity and nothing else.

#[macro_use]
mod log;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use livsurv::features::io::{read_features, read_survival, write_features, SurvivalRecord};
use livsurv::features::{
    diameter_threshold, extract_tumors, filter_small_predictions, ExtractionSettings, FeatureTable, Phase,
};
use livsurv::pipeline::{
    emit_results, km_table, predict_model, read_hazards, run_pipeline, run_segmentation, train_model, write_hazards,
    write_km, PipelineConfig, PipelineError, SurvModel,
};
use livsurv::samonai::ObjectSeeds;
use livsurv::stats::{c_index, dice, match_detections, StatsError, TieRule};
use livsurv::survaminn::{Pooling, SurvError};
use livsurv::volume::nrrd::{read_mask, read_volume, write_mask};
use livsurv::volume::{connected_components, Connectivity, LabelMap};

#[derive(Parser)]
#[command(name = "livsurv", version, about = "Liver MRI segmentation, survival modelling and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate point seeds to 3D liver / tumor / spleen masks.
    Samonai(SamonaiArgs),
    /// Extract first-order tumor features from an image and a label mask.
    Features(FeaturesArgs),
    /// Train or apply the multiple-instance survival model.
    #[command(subcommand)]
    Surv(SurvCommand),
    /// Segmentation and survival metrics.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// End-to-end cross-validated survival study.
    #[command(subcommand)]
    Pipeline(PipelineCommand),
}

#[derive(Args)]
struct ConfigArg {
    /// JSON run config; absent keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<PipelineConfig> {
        match &self.config {
            Some(p) => Ok(PipelineConfig::load(p)?),
            None => Ok(PipelineConfig::default()),
        }
    }
}

#[derive(Args)]
struct SamonaiArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Image volume (NRRD).
    #[arg(long)]
    image: PathBuf,
    /// JSON list of object seeds.
    #[arg(long)]
    seeds: PathBuf,
    /// Output label mask (NRRD).
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth mask (NRRD); enables the dice and detection report.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Where to write the report JSON; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    image: PathBuf,
    /// Label mask (NRRD).
    #[arg(long)]
    mask: PathBuf,
    /// Label whose connected components are the tumors.
    #[arg(long, default_value_t = 2)]
    label: u8,
    #[arg(long)]
    patient: String,
    #[arg(long, default_value = "post")]
    phase: Phase,
    /// Output feature table (CSV).
    #[arg(long)]
    out: PathBuf,
    /// Merge into an existing table at `--out` instead of replacing it.
    #[arg(long)]
    append: bool,
    /// Drop tumors whose longest diameter is at most this many mm.
    #[arg(long, conflicts_with = "reference_diameters")]
    min_diameter_mm: Option<f64>,
    /// Feature table of ground-truth tumors; its diameter percentile from the
    /// config sets the cut-off.
    #[arg(long)]
    reference_diameters: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArg,
}

#[derive(Subcommand)]
enum SurvCommand {
    /// Train one network per phase on every patient and save the model.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        survival: Option<PathBuf>,
        /// Output model (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Write fused patient hazards for a feature table.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Dice of one label between two masks.
    Dice {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 2)]
        label: u8,
    },
    /// Component-level detection counts, precision, recall and F1.
    Detect {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 2)]
        label: u8,
    },
    /// Concordance index of hazards against survival records.
    Cindex {
        #[arg(long)]
        hazards: PathBuf,
        #[arg(long)]
        survival: PathBuf,
        /// Score tied hazards as half-concordant.
        #[arg(long)]
        half_ties: bool,
    },
    /// Kaplan–Meier table of the median-split risk groups.
    Km {
        #[arg(long)]
        hazards: PathBuf,
        #[arg(long)]
        survival: PathBuf,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label-shuffling randomization test of the cross-validated C-index.
    Randtest {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        survival: Option<PathBuf>,
        /// Overrides `randomization_replicates` from the config.
        #[arg(long)]
        replicates: Option<usize>,
    },
}

#[derive(Subcommand)]
enum PipelineCommand {
    /// Cross-validate, evaluate and write manifest.json, hazards.csv, km.csv
    /// and null.csv.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        survival: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Pooling override.
        #[arg(long)]
        pooling: Option<Pooling>,
        /// Seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// An argument problem found after parsing, such as a path that is neither
/// on the command line nor in the config.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn required(flag: Option<PathBuf>, from_config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| UsageError(format!("--{name} is required (or set paths.{} in the config)", name.replace('-', "_"))).into())
}

fn write_json(value: &impl Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load_features(path: &Path) -> Result<FeatureTable> {
    read_features(path).with_context(|| format!("reading features {}", path.display()))
}

fn load_survival(path: &Path) -> Result<Vec<SurvivalRecord>> {
    read_survival(path).with_context(|| format!("reading survival {}", path.display()))
}

/// Hazards and survival joined on patient id, in hazard-file order.
fn joined(hazards: &Path, survival: &Path) -> Result<(Vec<f64>, Vec<f64>, Vec<bool>)> {
    let h = read_hazards(hazards).with_context(|| format!("reading hazards {}", hazards.display()))?;
    let s: BTreeMap<String, SurvivalRecord> = load_survival(survival)?.into_iter().map(|r| (r.patient_id.clone(), r)).collect();
    let (mut hz, mut t, mut d) = (Vec::new(), Vec::new(), Vec::new());
    for (p, v) in h {
        match s.get(&p) {
            Some(r) => {
                hz.push(v);
                t.push(r.time_months);
                d.push(r.event);
            }
            None => warn!("patient {p} has a hazard but no survival record; skipped"),
        }
    }
    Ok((hz, t, d))
}

fn samonai(a: SamonaiArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let image = read_volume(&a.image).with_context(|| format!("reading image {}", a.image.display()))?;
    let text = std::fs::read_to_string(&a.seeds).with_context(|| format!("reading seeds {}", a.seeds.display()))?;
    let seeds: Vec<ObjectSeeds> = serde_json::from_str(&text).with_context(|| format!("parsing seeds {}", a.seeds.display()))?;
    let labels = LabelMap::liver_tumor_spleen();
    let gt = match &a.ground_truth {
        Some(p) => Some(read_mask(p, Some(labels.clone())).with_context(|| format!("reading ground truth {}", p.display()))?),
        None => None,
    };
    let out = run_segmentation(&cfg, &image, &seeds, &labels, gt.as_ref())?;
    for f in &out.failures {
        warn!("{f}");
    }
    info!(
        "{} extra-hepatic tumor voxels cleared, {} small tumor components removed",
        out.extra_hepatic_voxels, out.small_components
    );
    write_mask(&a.out, &out.mask).with_context(|| format!("writing {}", a.out.display()))?;
    info!("wrote {}", a.out.display());
    if let Some(r) = &out.report {
        write_json(r, a.report.as_deref())?;
    }
    Ok(())
}

fn features(a: FeaturesArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let image = read_volume(&a.image).with_context(|| format!("reading image {}", a.image.display()))?;
    let mask = read_mask(&a.mask, None).with_context(|| format!("reading mask {}", a.mask.display()))?;
    let (mut records, dropped) =
        extract_tumors(&image, &mask, a.label, &a.patient, a.phase, &ExtractionSettings::default(), cfg.execution)?;
    for d in dropped {
        warn!("{} {}: {}", a.patient, d.tumor_id, d.reason);
    }
    let threshold = match (&a.min_diameter_mm, &a.reference_diameters) {
        (Some(t), _) => Some(*t),
        (None, Some(p)) => {
            let d: Vec<f64> = load_features(p)?.records.iter().filter_map(|r| r.diameter_mm).collect();
            diameter_threshold(&d, cfg.diameter_percentile)
        }
        (None, None) => None,
    };
    if let Some(t) = threshold {
        let before = records.len();
        records = filter_small_predictions(&records, t);
        info!("diameter cut-off {t:.3} mm removed {} tumors", before - records.len());
    }
    let names = livsurv::features::feature_names();
    if a.append && a.out.exists() {
        let mut old = load_features(&a.out)?;
        old.records.retain(|r| !(r.patient_id == a.patient && r.phase == a.phase));
        old.records.extend(records);
        records = old.records;
    }
    let table = FeatureTable::new(names, records)?;
    write_features(&a.out, &table).with_context(|| format!("writing {}", a.out.display()))?;
    info!("wrote {} tumor rows to {}", table.records.len(), a.out.display());
    Ok(())
}

fn surv(c: SurvCommand) -> Result<()> {
    match c {
        SurvCommand::Train { config, features, survival, out } => {
            let cfg = config.load()?;
            let table = load_features(&required(features, &cfg.paths.features, "features")?)?;
            let surv = load_survival(&required(survival, &cfg.paths.survival, "survival")?)?;
            let model = train_model(&cfg, &table, &surv)?;
            for p in &model.phases {
                if let Some(last) = p.log.last() {
                    debug!("phase {}: final epoch {:?}", p.phase, last);
                }
            }
            model.save(&out)?;
            info!("wrote {}", out.display());
        }
        SurvCommand::Predict { model, features, out } => {
            let m = SurvModel::load(&model)?;
            let hazards = predict_model(&m, &load_features(&features)?)?;
            match out {
                Some(p) => {
                    write_hazards(&p, &hazards)?;
                    info!("wrote {} hazards to {}", hazards.len(), p.display());
                }
                None => {
                    println!("patient_id,hazard");
                    for (p, h) in hazards {
                        println!("{p},{h}");
                    }
                }
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Scalar<'a> {
    metric: &'a str,
    value: f64,
    n: usize,
}

fn eval(c: EvalCommand) -> Result<()> {
    match c {
        EvalCommand::Dice { pred, truth, label } => {
            let p = read_mask(&pred, None).with_context(|| format!("reading {}", pred.display()))?;
            let t = read_mask(&truth, None).with_context(|| format!("reading {}", truth.display()))?;
            let d = dice(&p, &t, label)?;
            write_json(&Scalar { metric: "dice", value: d, n: t.count(label) }, None)?;
        }
        EvalCommand::Detect { pred, truth, label } => {
            let p = read_mask(&pred, None).with_context(|| format!("reading {}", pred.display()))?;
            let t = read_mask(&truth, None).with_context(|| format!("reading {}", truth.display()))?;
            p.ensure_same_geometry(&t)?;
            let pc = connected_components(&p, label, Connectivity::default())?;
            let tc = connected_components(&t, label, Connectivity::default())?;
            write_json(&match_detections(&pc, &tc), None)?;
        }
        EvalCommand::Cindex { hazards, survival, half_ties } => {
            let (h, t, d) = joined(&hazards, &survival)?;
            let rule = if half_ties { TieRule::Half } else { TieRule::Strict };
            let c = c_index(&t, &d, &h, rule)?;
            write_json(&Scalar { metric: "c_index", value: c, n: h.len() }, None)?;
        }
        EvalCommand::Km { hazards, survival, out } => {
            let (h, t, d) = joined(&hazards, &survival)?;
            let rows = km_table(&h, &t, &d)?;
            match out {
                Some(p) => {
                    write_km(&p, &rows)?;
                    info!("wrote {}", p.display());
                }
                None => {
                    println!("time,S_low,S_high,n_risk_low,n_risk_high");
                    for r in rows {
                        println!("{},{},{},{},{}", r.time, r.s_low, r.s_high, r.n_risk_low, r.n_risk_high);
                    }
                }
            }
        }
        EvalCommand::Randtest { config, features, survival, replicates } => {
            let mut cfg = config.load()?;
            if let Some(r) = replicates {
                cfg.randomization_replicates = r;
            }
            if cfg.randomization_replicates == 0 {
                return Err(UsageError("randomization needs at least one replicate".into()).into());
            }
            cfg.bootstrap_replicates = 0;
            let table = load_features(&required(features, &cfg.paths.features, "features")?)?;
            let surv = load_survival(&required(survival, &cfg.paths.survival, "survival")?)?;
            let m = run_pipeline(&cfg, &table, &surv)?;
            write_json(&m.randomization, None)?;
        }
    }
    Ok(())
}

fn pipeline(c: PipelineCommand) -> Result<()> {
    let PipelineCommand::Run { config, features, survival, out_dir, pooling, seed } = c;
    let mut cfg = config.load()?;
    if let Some(p) = pooling {
        cfg.pooling = p;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let features = required(features, &cfg.paths.features, "features")?;
    let survival = required(survival, &cfg.paths.survival, "survival")?;
    let out_dir = required(out_dir, &cfg.paths.out_dir, "out-dir")?;
    // the manifest records where the inputs came from
    cfg.paths.features = Some(features.clone());
    cfg.paths.survival = Some(survival.clone());
    cfg.paths.out_dir = Some(out_dir.clone());
    let table = load_features(&features)?;
    let surv = load_survival(&survival)?;
    info!("{} folds x {} repeats, pooling {}, seed {}", cfg.folds, cfg.repeats, cfg.pooling, cfg.seed);
    let m = run_pipeline(&cfg, &table, &surv)?;
    for e in &m.excluded {
        warn!("excluded {}: {}", e.patient_id, e.reason);
    }
    emit_results(&m, &out_dir)?;
    info!(
        "mean C-index {:.4} (sd {:.4}) over {} patients in {:.1} s; results in {}",
        m.mean_c_index,
        m.std_c_index,
        m.patients.len(),
        m.wall_clock_seconds,
        out_dir.display()
    );
    Ok(())
}

fn is_numerical(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<livsurv::Error>().is_some_and(livsurv::Error::is_numerical)
            || c.downcast_ref::<PipelineError>().is_some_and(PipelineError::is_numerical)
            || c.downcast_ref::<SurvError>().is_some_and(SurvError::is_numerical)
            || c.downcast_ref::<StatsError>().is_some_and(StatsError::is_numerical)
    })
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.chain().any(|c| c.is::<UsageError>()) {
        1
    } else if is_numerical(e) {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    log::init();
    let result = match cli.command {
        Command::Samonai(a) => samonai(a),
        Command::Features(a) => features(a),
        Command::Surv(c) => surv(c),
        Command::Eval(c) => eval(c),
        Command::Pipeline(c) => pipeline(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
