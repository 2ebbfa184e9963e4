//! Dense 3D scalar grids and their on-disk container.
//!
//! Voxels are stored row-major with `z` outermost and `x` innermost, so the
//! linear index of `(x, y, z)` is `(z * ny + y) * nx + x`.
//!
//! On disk a volume is a JSON header (`<name>.json`) next to a raw
//! little-endian `f32` payload (`<name>.raw`). Values are held as `f64` in
//! memory; loading widens and saving narrows.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What a volume's voxels mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Intensity,
    Label,
    Edge,
    Density,
}

/// Voxel coordinate `(x, y, z)`.
pub type Coord = [usize; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    kind: VolumeKind,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], kind: VolumeKind, data: Vec<f64>) -> Result<Self> {
        let len = dims[0] * dims[1] * dims[2];
        if data.len() != len {
            return Err(Error::invalid(format!(
                "volume data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("volume dims must be positive"));
        }
        let vol = Volume {
            dims,
            spacing,
            kind,
            data,
        };
        vol.check_values()?;
        Ok(vol)
    }

    /// A volume filled with `value`.
    pub fn filled(dims: [usize; 3], kind: VolumeKind, value: f64) -> Self {
        Volume {
            dims,
            spacing: [1.0; 3],
            kind,
            data: vec![value; dims[0] * dims[1] * dims[2]],
        }
    }

    fn check_values(&self) -> Result<()> {
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("volume contains non-finite values"));
        }
        match self.kind {
            VolumeKind::Density => {
                if self.data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                    return Err(Error::invalid("density volume values must lie in [0, 1]"));
                }
            }
            VolumeKind::Label | VolumeKind::Edge => {
                if self.data.iter().any(|&v| v.fract() != 0.0) {
                    return Err(Error::invalid("label volume values must be integers"));
                }
            }
            VolumeKind::Intensity => {}
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, [x, y, z]: Coord) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    /// Inverse of [`Volume::index`].
    #[inline]
    pub fn coord(&self, idx: usize) -> Coord {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    #[inline]
    pub fn get(&self, c: Coord) -> f64 {
        self.data[self.index(c)]
    }

    pub(crate) fn with_data(&self, kind: VolumeKind, data: Vec<f64>) -> Volume {
        debug_assert_eq!(data.len(), self.data.len());
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            kind,
            data,
        }
    }

    pub fn set_spacing(&mut self, spacing: [f64; 3]) {
        self.spacing = spacing;
    }

    /// Distinct values of a label volume, ascending.
    pub fn label_set(&self) -> Vec<i64> {
        let mut labels: Vec<i64> = self.data.iter().map(|&v| v as i64).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    /// Writes `<stem>.json` and `<stem>.raw` next to each other.
    ///
    /// `stem` is the path without extension.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let (header_path, raw_path) = container_paths(stem);
        let raw_name = raw_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let header = VolumeHeader {
            dims: self.dims,
            spacing: self.spacing,
            dtype: "f32".into(),
            order: "row-major-zyx".into(),
            kind: self.kind,
            data_file: Some(raw_name),
        };
        let text = serde_json::to_string_pretty(&header).map_err(|e| Error::json(&header_path, e))?;
        fs::write(&header_path, text + "\n").map_err(|e| Error::io(&header_path, e))?;

        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))
    }

    /// Reads a volume given either the header path or the stem.
    pub fn load(path: &Path) -> Result<Volume> {
        let stem = if path.extension().is_some_and(|e| e == "json") {
            path.with_extension("")
        } else {
            path.to_path_buf()
        };
        let (header_path, default_raw) = container_paths(&stem);
        let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
        let header: VolumeHeader = serde_json::from_str(&text).map_err(|e| Error::json(&header_path, e))?;
        if header.dtype != "f32" {
            return Err(Error::Data(format!(
                "{}: unsupported dtype {:?}",
                header_path.display(),
                header.dtype
            )));
        }
        if header.order != "row-major-zyx" {
            return Err(Error::Data(format!(
                "{}: unsupported voxel order {:?}",
                header_path.display(),
                header.order
            )));
        }
        let raw_path = match &header.data_file {
            Some(name) => header_path.with_file_name(name),
            None => default_raw,
        };
        let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
        let expected = header.dims.iter().product::<usize>() * 4;
        if bytes.len() != expected {
            return Err(Error::Data(format!(
                "{}: expected {} bytes, found {}",
                raw_path.display(),
                expected,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Volume::new(header.dims, header.spacing, header.kind, data)
            .map_err(|e| Error::Data(format!("{}: {e}", header_path.display())))
    }
}

/// JSON header of the volume container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: String,
    pub order: String,
    pub kind: VolumeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_file: Option<String>,
}

fn container_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let mut header = stem.as_os_str().to_owned();
    header.push(".json");
    let mut raw = stem.as_os_str().to_owned();
    raw.push(".raw");
    (PathBuf::from(header), PathBuf::from(raw))
}
