//! Evaluation reports and their JSON/CSV emission.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::Class;
use crate::config::{Arm, CGrid, FollowupSource, PipelineConfig, RoiConfig};
use crate::error::{Error, Result};
use crate::volume::Coord;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LandmarkDiagnostics {
    pub landmark_id: usize,
    pub coord: Coord,
    pub density: f64,
    /// Selected cost per arm.
    pub c: Vec<(Arm, f64)>,
    pub platt_fallback: Vec<Arm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svr_converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mkml_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mkml_degenerate: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldDiagnostics {
    pub held_out: String,
    pub threshold: f64,
    pub n_landmarks: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_c: Option<f64>,
    pub landmarks: Vec<LandmarkDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectArm {
    pub strategy: Arm,
    pub predicted: Class,
    pub score_control: f64,
    pub score_disease: f64,
    pub abstentions: usize,
    /// Mean over landmarks; absent for the baseline arm.
    pub mae: Option<f64>,
    pub pearson: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectResult {
    pub id: String,
    pub class: Class,
    pub arms: Vec<SubjectArm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmMetrics {
    pub strategy: Arm,
    pub n: usize,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    /// Undefined without positive subjects.
    pub sensitivity: Option<f64>,
    /// Undefined without negative subjects.
    pub specificity: Option<f64>,
    pub mae: Option<f64>,
    pub pearson: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

impl ArmMetrics {
    /// Aggregates the per-subject results of one arm. Subjects without an
    /// entry for `arm` are ignored.
    pub fn from_subjects(arm: Arm, subjects: &[SubjectResult]) -> ArmMetrics {
        let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
        let mut maes = Vec::new();
        let mut rs = Vec::new();
        for s in subjects {
            let Some(a) = s.arms.iter().find(|a| a.strategy == arm) else {
                continue;
            };
            match (s.class, a.predicted) {
                (Class::Disease, Class::Disease) => tp += 1,
                (Class::Control, Class::Control) => tn += 1,
                (Class::Control, Class::Disease) => fp += 1,
                (Class::Disease, Class::Control) => fn_ += 1,
            }
            maes.extend(a.mae);
            rs.extend(a.pearson);
        }
        let n = tp + tn + fp + fn_;
        ArmMetrics {
            strategy: arm,
            n,
            tp,
            tn,
            fp,
            fn_,
            accuracy: ratio(tp + tn, n).unwrap_or(0.0),
            sensitivity: ratio(tp, tp + fn_),
            specificity: ratio(tn, tn + fp),
            mae: mean_of(maes.into_iter()),
            pearson: mean_of(rs.into_iter()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiReport {
    pub roi: String,
    pub label: i64,
    pub arms: Vec<ArmMetrics>,
    pub subjects: Vec<SubjectResult>,
    pub folds: Vec<FoldDiagnostics>,
}

/// The run settings that influence results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub seed: u64,
    pub rois: Vec<RoiConfig>,
    pub arms: Vec<Arm>,
    pub c_grid: CGrid,
    pub cv_folds: usize,
    pub platt_folds: usize,
    pub standardize: bool,
    pub train_followup: FollowupSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format_version: u32,
    pub n_subjects: usize,
    pub settings: RunSettings,
    pub rois: Vec<RoiReport>,
}

impl EvaluationReport {
    pub fn new(cfg: &PipelineConfig, n_subjects: usize, rois: Vec<RoiReport>) -> EvaluationReport {
        EvaluationReport {
            format_version: REPORT_VERSION,
            n_subjects,
            settings: RunSettings {
                seed: cfg.seed,
                rois: cfg.rois.clone(),
                arms: cfg.arms_in_order(),
                c_grid: cfg.c_grid,
                cv_folds: cfg.cv_folds,
                platt_folds: cfg.platt_folds,
                standardize: cfg.standardize,
                train_followup: cfg.train_followup,
            },
            rois,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn load(path: &Path) -> Result<EvaluationReport> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: EvaluationReport = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if r.format_version != REPORT_VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported report version {}",
                path.display(),
                r.format_version
            )));
        }
        Ok(r)
    }

    pub fn metrics(&self, roi: &str, arm: Arm) -> Option<&ArmMetrics> {
        self.rois
            .iter()
            .find(|r| r.roi == roi)?
            .arms
            .iter()
            .find(|a| a.strategy == arm)
    }
}

/// Wall-clock timings, kept apart from the report so that reports stay
/// byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub roi_seconds: Vec<(String, f64)>,
    pub threads: usize,
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub roi: String,
    pub strategy: String,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub mae: Option<f64>,
    pub pearson: Option<f64>,
}

pub fn metrics_rows(report: &EvaluationReport) -> Vec<MetricsRow> {
    report
        .rois
        .iter()
        .flat_map(|r| {
            r.arms.iter().map(move |a| MetricsRow {
                roi: r.roi.clone(),
                strategy: a.strategy.name().to_string(),
                accuracy: a.accuracy,
                sensitivity: a.sensitivity,
                specificity: a.specificity,
                mae: a.mae,
                pearson: a.pearson,
            })
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, headers: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    w.write_record(headers)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses a metrics table written by [`emit_report`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?;
    Ok(rows)
}

#[derive(Serialize)]
struct SeriesRow<'a> {
    roi: &'a str,
    strategy: &'a str,
    value: Option<f64>,
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    roi: &'a str,
    subject: &'a str,
    class: Class,
    strategy: &'a str,
    predicted: Class,
    score_control: f64,
    score_disease: f64,
    mae: Option<f64>,
    pearson: Option<f64>,
}

/// Writes `report.json`, `metrics.csv`, `predictions.csv` and the plot
/// series `plot_accuracy.csv` and `plot_mae.csv` into `outdir`.
pub fn emit_report(report: &EvaluationReport, outdir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let json = outdir.join("report.json");
    fs::write(&json, report.to_json()).map_err(|e| Error::io(&json, e))?;
    let mut written = vec![json];
    written.extend(emit_tables(report, outdir)?);
    Ok(written)
}

/// The CSV half of [`emit_report`].
pub fn emit_tables(report: &EvaluationReport, outdir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let rows = metrics_rows(report);
    let metrics = outdir.join("metrics.csv");
    write_csv(
        &metrics,
        &["roi", "strategy", "accuracy", "sensitivity", "specificity", "mae", "pearson"],
        &rows,
    )?;

    let acc: Vec<SeriesRow> = rows
        .iter()
        .map(|r| SeriesRow {
            roi: &r.roi,
            strategy: &r.strategy,
            value: Some(r.accuracy),
        })
        .collect();
    let plot_acc = outdir.join("plot_accuracy.csv");
    write_csv(&plot_acc, &["roi", "strategy", "accuracy"], &acc)?;

    let mae: Vec<SeriesRow> = rows
        .iter()
        .filter(|r| r.mae.is_some())
        .map(|r| SeriesRow {
            roi: &r.roi,
            strategy: &r.strategy,
            value: r.mae,
        })
        .collect();
    let plot_mae = outdir.join("plot_mae.csv");
    write_csv(&plot_mae, &["roi", "strategy", "mae"], &mae)?;

    let preds: Vec<PredictionRow> = report
        .rois
        .iter()
        .flat_map(|r| {
            r.subjects.iter().flat_map(move |s| {
                s.arms.iter().map(move |a| PredictionRow {
                    roi: &r.roi,
                    subject: &s.id,
                    class: s.class,
                    strategy: a.strategy.name(),
                    predicted: a.predicted,
                    score_control: a.score_control,
                    score_disease: a.score_disease,
                    mae: a.mae,
                    pearson: a.pearson,
                })
            })
        })
        .collect();
    let predictions = outdir.join("predictions.csv");
    write_csv(
        &predictions,
        &[
            "roi",
            "subject",
            "class",
            "strategy",
            "predicted",
            "score_control",
            "score_disease",
            "mae",
            "pearson",
        ],
        &preds,
    )?;
    Ok(vec![metrics, plot_acc, plot_mae, predictions])
}
