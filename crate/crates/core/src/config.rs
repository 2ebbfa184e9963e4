//! Pipeline configuration (JSON).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::{power_of_two_grid, ClassifierParams};
use crate::error::{Error, Result};
use crate::landmarks::SobelMode;
use crate::mkml::MkmlParams;
use crate::similarity::QuotientBounds;
use crate::svm::SvmSolverParams;
use crate::svr::SvrParams;
use crate::trajectory::{PredictionConfig, Transfer, Weighting};

/// Edge-density threshold: a fixed value or `"auto"` (mean minus standard
/// deviation of the nonzero densities).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Threshold {
    #[default]
    Auto,
    Value(f64),
}

impl Serialize for Threshold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::Auto => s.serialize_str("auto"),
            Threshold::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) if s == "auto" => Ok(Threshold::Auto),
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(Threshold::Value)
                .ok_or_else(|| serde::de::Error::custom("threshold is not a number")),
            other => Err(serde::de::Error::custom(format!(
                "edge_threshold must be \"auto\" or a number, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SasRoiConfig {
    pub k: usize,
    pub transfer: Transfer,
    pub weighting: Weighting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MkmlRoiConfig {
    pub k: usize,
    /// Number of clusters.
    pub c: usize,
    /// Number of kernels.
    pub m: usize,
    pub transfer: Transfer,
    pub weighting: Weighting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiConfig {
    pub name: String,
    /// Value of the ROI in the label maps.
    pub label: i64,
    #[serde(default)]
    pub edge_threshold: Threshold,
    pub patch_side: usize,
    /// Keep at most this many evenly spaced landmarks (0 keeps all).
    #[serde(default)]
    pub max_landmarks: usize,
    #[serde(default)]
    pub sobel: SobelMode,
    pub sas: SasRoiConfig,
    pub mkml: MkmlRoiConfig,
}

impl RoiConfig {
    /// Settings for a single ROI with the reference K/c/m choices of the
    /// left hippocampus.
    pub fn new(name: &str, label: i64) -> RoiConfig {
        RoiConfig {
            name: name.into(),
            label,
            edge_threshold: Threshold::Auto,
            patch_side: 11,
            max_landmarks: 0,
            sobel: SobelMode::Volumetric,
            sas: SasRoiConfig {
                k: 1,
                transfer: Transfer::QuotientMapped,
                weighting: Weighting::Uniform,
            },
            mkml: MkmlRoiConfig {
                k: 1,
                c: 3,
                m: 7,
                transfer: Transfer::PlainAverage,
                weighting: Weighting::Uniform,
            },
        }
    }

    pub fn sas_prediction(&self, bounds: QuotientBounds, intensity_max: f64) -> PredictionConfig {
        PredictionConfig {
            k: self.sas.k,
            transfer: self.sas.transfer,
            weighting: self.sas.weighting,
            bounds,
            intensity_max,
        }
    }

    pub fn mkml_prediction(&self, bounds: QuotientBounds, intensity_max: f64) -> PredictionConfig {
        PredictionConfig {
            k: self.mkml.k,
            transfer: self.mkml.transfer,
            weighting: self.mkml.weighting,
            bounds,
            intensity_max,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("roi {:?}: {msg}", self.name)));
        if self.patch_side % 2 == 0 || self.patch_side > 31 {
            return bad(format!("patch_side {} must be odd and at most 31", self.patch_side));
        }
        if let Threshold::Value(t) = self.edge_threshold {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("edge_threshold {t} outside [0, 1]"));
            }
        }
        if self.sas.k == 0 || self.mkml.k == 0 {
            return bad("K must be at least 1".into());
        }
        if self.mkml.c == 0 || self.mkml.m == 0 || self.mkml.m > 10 {
            return bad("mkml needs c >= 1 and 1 <= m <= 10".into());
        }
        Ok(())
    }
}

/// The four regions and per-region settings of the clinical study. Label
/// values follow the FreeSurfer lookup table.
pub fn reference_rois() -> Vec<RoiConfig> {
    let mut lh = RoiConfig::new("left_hippocampus", 17);
    lh.edge_threshold = Threshold::Value(0.15);
    let mut rh = RoiConfig::new("right_hippocampus", 53);
    rh.edge_threshold = Threshold::Value(0.15);
    rh.sas.k = 2;
    rh.mkml.c = 2;
    rh.mkml.m = 5;
    let mut lv = RoiConfig::new("left_lateral_ventricle", 4);
    lv.edge_threshold = Threshold::Value(0.19);
    lv.sas.k = 2;
    lv.mkml.m = 3;
    let mut rv = RoiConfig::new("right_lateral_ventricle", 43);
    rv.edge_threshold = Threshold::Value(0.18);
    rv.sas.k = 3;
    rv.mkml.m = 3;
    vec![lh, rh, lv, rv]
}

/// Inclusive exponent bounds of the power-of-two cost grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CGrid {
    pub min_exp: i32,
    pub max_exp: i32,
}

impl Default for CGrid {
    fn default() -> Self {
        CGrid { min_exp: -6, max_exp: 15 }
    }
}

impl CGrid {
    pub fn values(&self) -> Vec<f64> {
        power_of_two_grid(self.min_exp, self.max_exp)
    }
}

/// Where the follow-up half of the training features comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FollowupSource {
    /// Predicted by leave-one-out within the training fold.
    #[default]
    Predicted,
    /// Ground-truth follow-up patches (ablation).
    GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CTuning {
    #[default]
    PerLandmark,
    /// One cost per ROI, chosen on a few evenly spaced landmarks.
    SharedPerRoi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Baseline,
    Sas,
    Mkml,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Baseline, Arm::Sas, Arm::Mkml];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Baseline => "baseline",
            Arm::Sas => "sas",
            Arm::Mkml => "mkml",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MkmlSolverConfig {
    pub beta: f64,
    pub gamma: f64,
    pub rho: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub eigen_tol: f64,
    /// Neighbours for the kernel bandwidths; 0 picks the default for n.
    #[serde(default)]
    pub knn: usize,
}

impl Default for MkmlSolverConfig {
    fn default() -> Self {
        let p = MkmlParams::default();
        MkmlSolverConfig {
            beta: p.beta,
            gamma: p.gamma,
            rho: p.rho,
            max_iters: p.max_iters,
            tol: p.tol,
            eigen_tol: p.eigen_tol,
            knn: 0,
        }
    }
}

impl MkmlSolverConfig {
    pub fn params(&self, c: usize) -> MkmlParams {
        MkmlParams {
            c,
            beta: self.beta,
            gamma: self.gamma,
            rho: self.rho,
            max_iters: self.max_iters,
            tol: self.tol,
            eigen_tol: self.eigen_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Cohort manifest; relative paths resolve against the config file.
    pub manifest: PathBuf,
    pub rois: Vec<RoiConfig>,
    #[serde(default = "default_arms")]
    pub arms: Vec<Arm>,
    #[serde(default)]
    pub svr: SvrParams,
    #[serde(default)]
    pub svm: SvmSolverParams,
    #[serde(default)]
    pub mkml: MkmlSolverConfig,
    #[serde(default)]
    pub c_grid: CGrid,
    #[serde(default)]
    pub c_tuning: CTuning,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    #[serde(default = "default_platt_folds")]
    pub platt_folds: usize,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub train_followup: FollowupSource,
    #[serde(default)]
    pub quotient_bounds: QuotientBounds,
    #[serde(default = "default_intensity_max")]
    pub intensity_max: f64,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_arms() -> Vec<Arm> {
    Arm::ALL.to_vec()
}
fn default_folds() -> usize {
    5
}
fn default_platt_folds() -> usize {
    3
}
fn default_true() -> bool {
    true
}
fn default_intensity_max() -> f64 {
    1.0
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    pub fn new(manifest: impl Into<PathBuf>, rois: Vec<RoiConfig>) -> PipelineConfig {
        PipelineConfig {
            manifest: manifest.into(),
            rois,
            arms: default_arms(),
            svr: SvrParams::default(),
            svm: SvmSolverParams::default(),
            mkml: MkmlSolverConfig::default(),
            c_grid: CGrid::default(),
            c_tuning: CTuning::default(),
            cv_folds: default_folds(),
            platt_folds: default_platt_folds(),
            standardize: true,
            train_followup: FollowupSource::default(),
            quotient_bounds: QuotientBounds::default(),
            intensity_max: default_intensity_max(),
            seed: 0,
            threads: 0,
            out: default_out(),
        }
    }

    /// Parses and validates a config file. A relative manifest path is
    /// rewritten relative to the file's directory.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.manifest.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.manifest = dir.join(&cfg.manifest);
            }
        }
        cfg.validate()?;
        if !cfg.manifest.is_file() {
            return Err(Error::Config(format!("manifest {} does not exist", cfg.manifest.display())));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.rois.is_empty() {
            return Err(Error::Config("at least one roi is required".into()));
        }
        for r in &self.rois {
            r.validate()?;
        }
        if self.arms.is_empty() {
            return Err(Error::Config("at least one arm is required".into()));
        }
        if self.c_grid.min_exp > self.c_grid.max_exp {
            return Err(Error::Config("c_grid.min_exp exceeds max_exp".into()));
        }
        if self.cv_folds < 2 || self.platt_folds < 2 {
            return Err(Error::Config("cv_folds and platt_folds must be at least 2".into()));
        }
        if !(self.svr.c > 0.0) || !(self.svr.epsilon >= 0.0) {
            return Err(Error::Config("svr needs c > 0 and epsilon >= 0".into()));
        }
        if !(self.intensity_max > 0.0) {
            return Err(Error::Config("intensity_max must be positive".into()));
        }
        let m = &self.mkml;
        if !(m.beta > 0.0 && m.gamma > 0.0 && m.rho > 0.0 && m.tol > 0.0 && m.eigen_tol > 0.0) {
            return Err(Error::Config("mkml beta, gamma, rho and tolerances must be positive".into()));
        }
        Ok(())
    }

    pub fn classifier_params(&self) -> ClassifierParams {
        ClassifierParams {
            c_grid: self.c_grid.values(),
            cv_folds: self.cv_folds,
            platt_folds: self.platt_folds,
            standardize: self.standardize,
            std_floor: 1e-8,
            solver: self.svm,
            fixed_c: None,
        }
    }

    pub fn has_arm(&self, arm: Arm) -> bool {
        self.arms.contains(&arm)
    }

    /// Configured arms in canonical order, without duplicates.
    pub fn arms_in_order(&self) -> Vec<Arm> {
        Arm::ALL.into_iter().filter(|a| self.has_arm(*a)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_json() {
        let mut cfg = PipelineConfig::new("data/manifest.json", reference_rois());
        cfg.rois[0].edge_threshold = Threshold::Auto;
        cfg.rois[1].max_landmarks = 12;
        let text = cfg.to_json();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(text.contains("\"auto\""));
    }

    #[test]
    fn default_grid_and_reference_settings() {
        let cfg = PipelineConfig::new("m.json", reference_rois());
        let g = cfg.c_grid.values();
        assert_eq!((g.len(), g[0], g[21]), (22, 2f64.powi(-6), 2f64.powi(15)));
        let ks: Vec<usize> = cfg.rois.iter().map(|r| r.sas.k).collect();
        assert_eq!(ks, vec![1, 2, 2, 3]);
        assert!(cfg.rois.iter().all(|r| r.mkml.k == 1 && r.patch_side == 11));
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = PipelineConfig::new("m.json", vec![RoiConfig::new("r", 1)]);
        cfg.rois[0].patch_side = 10;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = PipelineConfig::new("m.json", vec![RoiConfig::new("r", 1)]);
        cfg.rois[0].edge_threshold = Threshold::Value(1.5);
        assert!(cfg.validate().is_err());
        let cfg = PipelineConfig::new("m.json", vec![]);
        assert!(cfg.validate().is_err());
        let bad = r#"{"manifest": "m.json", "rois": [], "bogus": 1}"#;
        assert!(serde_json::from_str::<PipelineConfig>(bad).is_err());
    }
}
