//! Cohort manifests and in-memory longitudinal datasets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::{CONTROL, DISEASE};
use crate::error::{Error, Result};
use crate::volume::{Volume, VolumeKind};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Class {
    #[serde(rename = "NC")]
    Control,
    #[serde(rename = "eMCI")]
    Disease,
}

impl Class {
    pub fn label(self) -> f64 {
        match self {
            Class::Control => CONTROL,
            Class::Disease => DISEASE,
        }
    }

    pub fn from_label(y: f64) -> Class {
        if y > 0.0 {
            Class::Disease
        } else {
            Class::Control
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub class: Class,
    pub t1_path: String,
    pub t2_path: String,
    pub label_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// Generator parameters, when the cohort is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<serde_json::Value>,
    pub subjects: Vec<SubjectRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported manifest version {}",
                path.display(),
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub class: Class,
    pub t1: Volume,
    pub t2: Volume,
    pub label: Volume,
}

/// A longitudinal dataset. Subjects are addressed by their position.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub subjects: Vec<Subject>,
}

impl Cohort {
    pub fn new(subjects: Vec<Subject>) -> Result<Cohort> {
        let first = subjects.first().ok_or_else(|| Error::Data("cohort has no subjects".into()))?;
        let dims = first.t1.dims();
        for s in &subjects {
            for (v, kind) in [
                (&s.t1, VolumeKind::Intensity),
                (&s.t2, VolumeKind::Intensity),
                (&s.label, VolumeKind::Label),
            ] {
                if v.dims() != dims {
                    return Err(Error::Data(format!("subject {}: volume dims differ from the cohort", s.id)));
                }
                if v.kind() != kind {
                    return Err(Error::Data(format!("subject {}: expected a {kind:?} volume", s.id)));
                }
            }
        }
        Ok(Cohort { subjects })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.class.label()).collect()
    }

    /// Loads every volume referenced by a manifest; relative paths resolve
    /// against the manifest's directory.
    pub fn load(manifest_path: &Path) -> Result<Cohort> {
        let m = Manifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &str| -> PathBuf {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let mut subjects = Vec::with_capacity(m.subjects.len());
        for r in &m.subjects {
            subjects.push(Subject {
                id: r.id.clone(),
                class: r.class,
                t1: Volume::load(&resolve(&r.t1_path))?,
                t2: Volume::load(&resolve(&r.t2_path))?,
                label: Volume::load(&resolve(&r.label_path))?,
            });
        }
        Cohort::new(subjects)
    }

    /// Writes volumes under `dir/volumes` and `dir/manifest.json`.
    pub fn save(&self, dir: &Path, spec: Option<serde_json::Value>) -> Result<PathBuf> {
        let vol_dir = dir.join("volumes");
        fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;
        let mut records = Vec::with_capacity(self.len());
        for s in &self.subjects {
            let mut paths = Vec::new();
            for (tag, v) in [("t1", &s.t1), ("t2", &s.t2), ("label", &s.label)] {
                let stem = format!("{}_{tag}", s.id);
                v.save(&vol_dir.join(&stem))?;
                paths.push(format!("volumes/{stem}.json"));
            }
            records.push(SubjectRecord {
                id: s.id.clone(),
                class: s.class,
                t1_path: paths[0].clone(),
                t2_path: paths[1].clone(),
                label_path: paths[2].clone(),
            });
        }
        let manifest = Manifest {
            format_version: MANIFEST_VERSION,
            spec,
            subjects: records,
        };
        let path = dir.join("manifest.json");
        manifest.save(&path)?;
        Ok(path)
    }
}
