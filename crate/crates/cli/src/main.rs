//! Command-line front end: cohort generation, landmark listing, single
//! subject prediction, leave-one-out evaluation and report re-emission.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use patchevo::cohort::Cohort;
use patchevo::config::{Arm, PipelineConfig};
use patchevo::landmarks::Landmark;
use patchevo::persist::{save_classifier_bundle, save_mkml_dump, save_sas_model};
use patchevo::pipeline::{fold_artifacts, fold_landmarks, roi_edges};
use patchevo::report::{emit_report, emit_tables, EvaluationReport};
use patchevo::synth::{generate_cohort, CohortSpec};
use patchevo::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "patchevo", version, about = "Landmark patch evolution prediction and classification")]
struct Cli {
    /// JSON config: a cohort spec for `synth`, a pipeline config otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 for every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Classification arms to run. `sas` and `mkml` also run the baseline.
    #[arg(long, global = true, value_enum)]
    strategy: Option<StrategyArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic two-timepoint cohort.
    Synth,
    /// List the landmarks selected from every subject of the cohort.
    Landmarks,
    /// Predict one subject's follow-up patches from the other subjects.
    Predict {
        /// Subject id from the manifest.
        #[arg(long)]
        subject: String,
        /// Also write the trained regressors, similarity matrices and
        /// classifiers.
        #[arg(long)]
        save_models: bool,
    },
    /// Leave-one-out evaluation.
    Loocv,
    /// Rewrite the CSV tables of a saved report.
    Report {
        /// A report.json written by `loocv`.
        report: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Sas,
    Mkml,
    Baseline,
    All,
}

impl StrategyArg {
    fn arms(self) -> Vec<Arm> {
        match self {
            StrategyArg::Sas => vec![Arm::Baseline, Arm::Sas],
            StrategyArg::Mkml => vec![Arm::Baseline, Arm::Mkml],
            StrategyArg::Baseline => vec![Arm::Baseline],
            StrategyArg::All => Arm::ALL.to_vec(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth => synth(cli),
        Command::Landmarks => landmarks(cli),
        Command::Predict { subject, save_models } => predict(cli, subject, *save_models),
        Command::Loocv => loocv(cli),
        Command::Report { report } => {
            let rep = EvaluationReport::load(report)?;
            let out = cli.out.clone().unwrap_or_else(|| report.parent().unwrap_or(Path::new(".")).to_path_buf());
            for p in emit_tables(&rep, &out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn synth(cli: &Cli) -> Result<()> {
    let mut spec = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<CohortSpec>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => CohortSpec::default(),
    };
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    let cohort = generate_cohort(&spec)?;
    let spec_json = serde_json::to_value(&spec).expect("spec serializes");
    let manifest = cohort.save(&out, Some(spec_json))?;
    println!("{}", manifest.display());
    Ok(())
}

/// Pipeline config with command-line overrides applied.
fn pipeline_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    } else if cfg.out.is_relative() {
        if let Some(dir) = path.parent() {
            cfg.out = dir.join(&cfg.out);
        }
    }
    if let Some(s) = cli.strategy {
        cfg.arms = s.arms();
    }
    Ok(cfg)
}

fn landmarks(cli: &Cli) -> Result<()> {
    let cfg = pipeline_config(cli)?;
    let cohort = Cohort::load(&cfg.manifest)?;
    let all: Vec<usize> = (0..cohort.len()).collect();
    let mut rois = Vec::new();
    for roi in &cfg.rois {
        let edges = roi_edges(&cohort, roi)?;
        let (threshold, lms): (f64, Vec<Landmark>) = fold_landmarks(&edges, &all, roi)?;
        println!("{}: {} landmarks above {threshold}", roi.name, lms.len());
        rois.push(json!({ "roi": roi.name, "threshold": threshold, "landmarks": lms }));
    }
    create_dir(&cfg.out)?;
    let path = cfg.out.join("landmarks.json");
    write_text(&path, &serde_json::to_string_pretty(&rois).expect("landmarks serialize"))?;
    println!("{}", path.display());
    Ok(())
}

fn predict(cli: &Cli, subject: &str, save_models: bool) -> Result<()> {
    let cfg = pipeline_config(cli)?;
    let cohort = Cohort::load(&cfg.manifest)?;
    let held_out = cohort
        .subjects
        .iter()
        .position(|s| s.id == subject)
        .ok_or_else(|| Error::Config(format!("subject {subject:?} is not in the manifest")))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    create_dir(&cfg.out)?;
    let mut rois = Vec::new();
    for (r, roi) in cfg.rois.iter().enumerate() {
        let fold = pool.install(|| fold_artifacts(&cohort, &cfg, r, held_out))?;
        let arts = fold.artifacts.expect("artifacts requested");
        let mut patches = Vec::new();
        for (lm, o) in arts.landmarks.iter().zip(&fold.outcomes) {
            let Some(o) = o else { continue };
            for (arm, patch) in &o.predicted_t2 {
                let q = o.quality.iter().find(|(a, _)| a == arm).map(|(_, q)| *q);
                patches.push(json!({
                    "landmark_id": lm.index,
                    "coord": lm.coord,
                    "strategy": arm.name(),
                    "mae": q.map(|q| q.mae),
                    "pearson": q.map(|q| q.pearson),
                    "values": patch.values,
                }));
            }
        }
        for arm in cfg.arms_in_order().into_iter().filter(|a| *a != Arm::Baseline) {
            let qs: Vec<_> = fold
                .outcomes
                .iter()
                .flatten()
                .filter_map(|o| o.quality.iter().find(|(a, _)| *a == arm).map(|(_, q)| *q))
                .collect();
            if qs.is_empty() {
                continue;
            }
            let n = qs.len() as f64;
            println!(
                "{} {} {}: mae {:.6} pearson {:.6} over {} landmarks",
                roi.name,
                subject,
                arm.name(),
                qs.iter().map(|q| q.mae).sum::<f64>() / n,
                qs.iter().map(|q| q.pearson).sum::<f64>() / n,
                qs.len()
            );
        }
        if save_models {
            save_models_for(&cfg.out, &roi.name, &arts)?;
        }
        rois.push(json!({ "roi": roi.name, "threshold": arts.threshold, "patches": patches }));
    }
    let path = cfg.out.join(format!("predict_{subject}.json"));
    write_text(&path, &serde_json::to_string_pretty(&rois).expect("predictions serialize"))?;
    println!("{}", path.display());
    Ok(())
}

fn save_models_for(out: &Path, roi: &str, arts: &patchevo::pipeline::FoldArtifacts) -> Result<()> {
    let dir = out.join("models");
    create_dir(&dir)?;
    let mut by_arm: Vec<(Arm, Vec<patchevo::classify::LandmarkClassifier>)> = Vec::new();
    for a in arts.per_landmark.iter().flatten() {
        if let Some(pair) = &a.sas {
            save_sas_model(&dir.join(format!("{roi}_lm{}_sas", a.landmark_id)), pair)?;
        }
        if let Some(model) = &a.mkml {
            save_mkml_dump(&dir.join(format!("{roi}_lm{}_mkml", a.landmark_id)), model)?;
        }
        for (arm, clf) in &a.classifiers {
            match by_arm.iter_mut().find(|(x, _)| x == arm) {
                Some((_, v)) => v.push(clf.clone()),
                None => by_arm.push((*arm, vec![clf.clone()])),
            }
        }
    }
    for (arm, clfs) in &by_arm {
        save_classifier_bundle(&dir.join(format!("{roi}_{}_classifiers", arm.name())), roi, arm.name(), clfs)?;
    }
    Ok(())
}

fn loocv(cli: &Cli) -> Result<()> {
    let cfg = pipeline_config(cli)?;
    let cohort = Cohort::load(&cfg.manifest)?;
    let (report, timings) = patchevo::pipeline::run_loocv(&cohort, &cfg)?;
    for r in &report.rois {
        for a in &r.arms {
            println!("{} {}: accuracy {:.4}", r.roi, a.strategy.name(), a.accuracy);
        }
    }
    let files = emit_report(&report, &cfg.out)?;
    let tpath = cfg.out.join("timings.json");
    write_text(&tpath, &serde_json::to_string_pretty(&timings).expect("timings serialize"))?;
    for p in files {
        println!("{}", p.display());
    }
    Ok(())
}
