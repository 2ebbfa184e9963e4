//! On-disk model files: a JSON header next to a raw little-endian `f64`
//! payload (SAS regressors, classifier bundles), or a JSON summary next to
//! whitespace-separated matrix text (MKML).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::{CvOutcome, LandmarkClassifier, Platt, Standardizer};
use crate::error::{Error, Result};
use crate::mkml::SimilarityModel;
use crate::sas::ErrorRegressorPair;
use crate::svm::LinearSvm;
use crate::svr::{LinearSvr, SvrDiagnostics, SvrParams};

pub const MODEL_VERSION: u32 = 1;

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn write_raw(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_raw(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Data(format!(
            "{}: expected {} values, found {} bytes",
            path.display(),
            expected,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn check_version(path: &Path, kind: &str, want: &str, version: u32) -> Result<()> {
    if kind != want || version != MODEL_VERSION {
        return Err(Error::Data(format!(
            "{}: expected a version {MODEL_VERSION} {want} file, found {kind} v{version}",
            path.display()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegressorHeader {
    bias: f64,
    params: SvrParams,
    diagnostics: SvrDiagnostics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SasHeader {
    format_version: u32,
    kind: String,
    landmark_id: usize,
    dim: usize,
    plus: RegressorHeader,
    minus: RegressorHeader,
    data_file: String,
}

/// Writes `<stem>.json` and `<stem>.raw` (plus weights then minus weights).
pub fn save_sas_model(stem: &Path, pair: &ErrorRegressorPair) -> Result<()> {
    let raw = with_suffix(stem, ".raw");
    let head = |r: &LinearSvr| RegressorHeader {
        bias: r.bias,
        params: r.params,
        diagnostics: r.diagnostics.clone(),
    };
    let header = SasHeader {
        format_version: MODEL_VERSION,
        kind: "sas".into(),
        landmark_id: pair.landmark_id,
        dim: pair.plus.dim(),
        plus: head(&pair.plus),
        minus: head(&pair.minus),
        data_file: file_name(&raw),
    };
    write_json(&with_suffix(stem, ".json"), &header)?;
    write_raw(&raw, &[pair.plus.weights.as_slice(), pair.minus.weights.as_slice()].concat())
}

pub fn load_sas_model(stem: &Path) -> Result<ErrorRegressorPair> {
    let path = with_suffix(stem, ".json");
    let h: SasHeader = read_json(&path)?;
    check_version(&path, &h.kind, "sas", h.format_version)?;
    let values = read_raw(&path.with_file_name(&h.data_file), 2 * h.dim)?;
    let build = |r: RegressorHeader, w: &[f64]| LinearSvr {
        weights: w.to_vec(),
        bias: r.bias,
        params: r.params,
        diagnostics: r.diagnostics,
        dual: Vec::new(),
    };
    Ok(ErrorRegressorPair {
        landmark_id: h.landmark_id,
        plus: build(h.plus, &values[..h.dim]),
        minus: build(h.minus, &values[h.dim..]),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MkmlHeader {
    format_version: u32,
    kind: String,
    n: usize,
    c: usize,
    w: Vec<f64>,
    objective_trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    eigengap_degenerate: bool,
    s_file: String,
    l_file: String,
}

fn matrix_text(values: &[f64], cols: usize) -> String {
    let mut out = String::new();
    for row in values.chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

fn parse_matrix(path: &Path, rows: usize, cols: usize) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if values.len() != rows * cols {
        return Err(Error::Data(format!(
            "{}: expected {rows}x{cols} values, found {}",
            path.display(),
            values.len()
        )));
    }
    Ok(values)
}

/// Writes `<stem>.json`, `<stem>.S.txt` and `<stem>.L.txt`.
pub fn save_mkml_dump(stem: &Path, model: &SimilarityModel) -> Result<()> {
    let s_path = with_suffix(stem, ".S.txt");
    let l_path = with_suffix(stem, ".L.txt");
    fs::write(&s_path, matrix_text(&model.s, model.n)).map_err(|e| Error::io(&s_path, e))?;
    fs::write(&l_path, matrix_text(&model.l, model.c)).map_err(|e| Error::io(&l_path, e))?;
    let header = MkmlHeader {
        format_version: MODEL_VERSION,
        kind: "mkml".into(),
        n: model.n,
        c: model.c,
        w: model.w.clone(),
        objective_trace: model.objective_trace.clone(),
        iterations: model.iterations,
        converged: model.converged,
        eigengap_degenerate: model.eigengap_degenerate,
        s_file: file_name(&s_path),
        l_file: file_name(&l_path),
    };
    write_json(&with_suffix(stem, ".json"), &header)
}

pub fn load_mkml_dump(stem: &Path) -> Result<SimilarityModel> {
    let path = with_suffix(stem, ".json");
    let h: MkmlHeader = read_json(&path)?;
    check_version(&path, &h.kind, "mkml", h.format_version)?;
    let s = parse_matrix(&path.with_file_name(&h.s_file), h.n, h.n)?;
    let l = parse_matrix(&path.with_file_name(&h.l_file), h.n, h.c)?;
    Ok(SimilarityModel {
        n: h.n,
        c: h.c,
        s,
        l,
        w: h.w,
        objective_trace: h.objective_trace,
        iterations: h.iterations,
        converged: h.converged,
        eigengap_degenerate: h.eigengap_degenerate,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClassifierEntry {
    landmark_id: usize,
    dim: usize,
    c: f64,
    bias: f64,
    platt: Platt,
    cv: CvOutcome,
    /// Offset of this entry's weights, mean and scale in the payload.
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BundleHeader {
    format_version: u32,
    kind: String,
    roi: String,
    strategy: String,
    classifiers: Vec<ClassifierEntry>,
    data_file: String,
}

/// Writes one ROI's classifier ensemble as `<stem>.json` + `<stem>.raw`.
pub fn save_classifier_bundle(stem: &Path, roi: &str, strategy: &str, classifiers: &[LandmarkClassifier]) -> Result<()> {
    let raw = with_suffix(stem, ".raw");
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(classifiers.len());
    for clf in classifiers {
        let dim = clf.svm.weights.len();
        if clf.standardizer.mean.len() != dim || clf.standardizer.scale.len() != dim {
            return Err(Error::invalid("standardizer and weights differ in length"));
        }
        entries.push(ClassifierEntry {
            landmark_id: clf.landmark_id,
            dim,
            c: clf.svm.c,
            bias: clf.svm.bias,
            platt: clf.platt,
            cv: clf.cv.clone(),
            offset: payload.len(),
        });
        payload.extend_from_slice(&clf.svm.weights);
        payload.extend_from_slice(&clf.standardizer.mean);
        payload.extend_from_slice(&clf.standardizer.scale);
    }
    let header = BundleHeader {
        format_version: MODEL_VERSION,
        kind: "classifier_bundle".into(),
        roi: roi.into(),
        strategy: strategy.into(),
        classifiers: entries,
        data_file: file_name(&raw),
    };
    write_json(&with_suffix(stem, ".json"), &header)?;
    write_raw(&raw, &payload)
}

/// Returns `(roi, strategy, classifiers)`.
pub fn load_classifier_bundle(stem: &Path) -> Result<(String, String, Vec<LandmarkClassifier>)> {
    let path = with_suffix(stem, ".json");
    let h: BundleHeader = read_json(&path)?;
    check_version(&path, &h.kind, "classifier_bundle", h.format_version)?;
    let total: usize = h.classifiers.iter().map(|e| 3 * e.dim).sum();
    let payload = read_raw(&path.with_file_name(&h.data_file), total)?;
    let mut out = Vec::with_capacity(h.classifiers.len());
    for e in h.classifiers {
        let end = e.offset + 3 * e.dim;
        if end > payload.len() {
            return Err(Error::Data(format!("{}: entry offsets exceed the payload", path.display())));
        }
        let block = &payload[e.offset..end];
        out.push(LandmarkClassifier {
            landmark_id: e.landmark_id,
            svm: LinearSvm {
                weights: block[..e.dim].to_vec(),
                bias: e.bias,
                c: e.c,
            },
            platt: e.platt,
            standardizer: Standardizer {
                mean: block[e.dim..2 * e.dim].to_vec(),
                scale: block[2 * e.dim..].to_vec(),
            },
            cv: e.cv,
        });
    }
    Ok((h.roi, h.strategy, out))
}
