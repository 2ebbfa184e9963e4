//! Landmark detection from training label maps and patch extraction.
//!
//! Landmarks are voxels on the averaged boundary of a target region: each
//! training label map is binarized for the region, edge-detected with a
//! Sobel operator, the binary edge maps are averaged into an edge-density
//! map, and voxels whose density clears a threshold seed cubic patches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Coord, Volume, VolumeKind};

/// How the Sobel operator traverses the volume.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SobelMode {
    /// Separable 3×3×3 operator with a gradient along every axis.
    #[default]
    Volumetric,
    /// 2D 3×3 operator applied independently to every `z` slice.
    SliceWise,
}

const SMOOTH: [f64; 3] = [1.0, 2.0, 1.0];
const DERIV: [f64; 3] = [-1.0, 0.0, 1.0];

/// Binary edge map of the region `roi_label` in a label volume.
///
/// The region mask is binarized before filtering, so the result does not
/// depend on the numeric label id. Voxels where the stencil would leave the
/// grid are zero.
pub fn sobel_edge_map(label: &Volume, roi_label: i64, mode: SobelMode) -> Result<Volume> {
    if label.kind() != VolumeKind::Label {
        return Err(Error::invalid("sobel_edge_map expects a label volume"));
    }
    let [nx, ny, nz] = label.dims();
    if nx < 3 || ny < 3 || nz < 3 {
        return Err(Error::invalid(format!(
            "sobel_edge_map needs at least 3 voxels per axis, got {:?}",
            label.dims()
        )));
    }
    let mask: Vec<f64> = label
        .data()
        .iter()
        .map(|&v| if v as i64 == roi_label { 1.0 } else { 0.0 })
        .collect();
    let at = |x: usize, y: usize, z: usize| mask[(z * ny + y) * nx + x];

    let mut out = vec![0.0; mask.len()];
    match mode {
        SobelMode::Volumetric => {
            for z in 1..nz - 1 {
                for y in 1..ny - 1 {
                    for x in 1..nx - 1 {
                        let mut g = [0.0f64; 3];
                        for dz in 0..3 {
                            for dy in 0..3 {
                                for dx in 0..3 {
                                    let v = at(x + dx - 1, y + dy - 1, z + dz - 1);
                                    if v == 0.0 {
                                        continue;
                                    }
                                    g[0] += DERIV[dx] * SMOOTH[dy] * SMOOTH[dz] * v;
                                    g[1] += SMOOTH[dx] * DERIV[dy] * SMOOTH[dz] * v;
                                    g[2] += SMOOTH[dx] * SMOOTH[dy] * DERIV[dz] * v;
                                }
                            }
                        }
                        let mag = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                        if mag > 0.0 {
                            out[(z * ny + y) * nx + x] = 1.0;
                        }
                    }
                }
            }
        }
        SobelMode::SliceWise => {
            for z in 0..nz {
                for y in 1..ny - 1 {
                    for x in 1..nx - 1 {
                        let mut gx = 0.0;
                        let mut gy = 0.0;
                        for dy in 0..3 {
                            for dx in 0..3 {
                                let v = at(x + dx - 1, y + dy - 1, z);
                                gx += DERIV[dx] * SMOOTH[dy] * v;
                                gy += SMOOTH[dx] * DERIV[dy] * v;
                            }
                        }
                        if (gx * gx + gy * gy).sqrt() > 0.0 {
                            out[(z * ny + y) * nx + x] = 1.0;
                        }
                    }
                }
            }
        }
    }
    Ok(label.with_data(VolumeKind::Edge, out))
}

/// Voxel-wise mean of binary edge maps.
pub fn edge_density_map<V: std::borrow::Borrow<Volume>>(edges: &[V]) -> Result<Volume> {
    let first = edges
        .first()
        .ok_or_else(|| Error::invalid("edge_density_map needs at least one edge volume"))?
        .borrow();
    if edges.iter().any(|e| e.borrow().dims() != first.dims()) {
        return Err(Error::invalid("edge volumes have mismatched dims"));
    }
    let mut sum = vec![0.0; first.len()];
    for e in edges {
        for (s, &v) in sum.iter_mut().zip(e.borrow().data()) {
            *s += v;
        }
    }
    let n = edges.len() as f64;
    let data = sum.into_iter().map(|s| (s / n).clamp(0.0, 1.0)).collect();
    Ok(first.with_data(VolumeKind::Density, data))
}

/// Mean minus population standard deviation of the nonzero density values.
///
/// Returns `None` when the map has no nonzero voxel.
pub fn auto_threshold(density: &Volume) -> Option<f64> {
    let nz: Vec<f64> = density.data().iter().copied().filter(|&v| v > 0.0).collect();
    if nz.is_empty() {
        return None;
    }
    let n = nz.len() as f64;
    let mean = nz.iter().sum::<f64>() / n;
    let var = nz.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean - var.sqrt()).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub index: usize,
    /// Voxel coordinate `(x, y, z)`.
    pub coord: Coord,
    pub roi: String,
    pub density: f64,
}

/// Voxels with density strictly above `threshold` whose cubic neighbourhood
/// of half-width `margin` lies inside the volume, in `(z, y, x)` order.
pub fn select_landmarks(density: &Volume, threshold: f64, margin: usize, roi: &str) -> Result<Vec<Landmark>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("landmark threshold {threshold} outside [0, 1]")));
    }
    let [nx, ny, nz] = density.dims();
    let inside = |c: usize, n: usize| c >= margin && c + margin < n;
    let mut out = Vec::new();
    // Linear index order is (z, y, x) lexicographic.
    for (idx, &d) in density.data().iter().enumerate() {
        if d <= threshold {
            continue;
        }
        let c = density.coord(idx);
        if inside(c[0], nx) && inside(c[1], ny) && inside(c[2], nz) {
            out.push(Landmark {
                index: out.len(),
                coord: c,
                roi: roi.to_string(),
                density: d,
            });
        }
    }
    Ok(out)
}

/// Keeps at most `max` landmarks spread evenly over the ordered list and
/// renumbers them.
pub fn thin_landmarks(landmarks: Vec<Landmark>, max: usize) -> Vec<Landmark> {
    let n = landmarks.len();
    if max == 0 || n <= max {
        return landmarks;
    }
    let mut out: Vec<Landmark> = (0..max)
        .map(|i| landmarks[(i * n) / max].clone())
        .collect();
    for (i, lm) in out.iter_mut().enumerate() {
        lm.index = i;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timepoint {
    T1,
    T2,
}

/// A flattened cubic intensity block seeded at a landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub landmark_id: usize,
    pub subject_id: usize,
    pub timepoint: Timepoint,
    pub values: Vec<f64>,
}

impl Patch {
    pub fn new(landmark_id: usize, subject_id: usize, timepoint: Timepoint, values: Vec<f64>) -> Self {
        Patch {
            landmark_id,
            subject_id,
            timepoint,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Cube of side `patch_side` around the landmark, flattened with `z`
/// outermost and `x` innermost.
pub fn extract_patch(vol: &Volume, coord: Coord, patch_side: usize) -> Result<Vec<f64>> {
    if patch_side % 2 == 0 {
        return Err(Error::invalid(format!("patch side {patch_side} must be odd")));
    }
    let h = patch_side / 2;
    let dims = vol.dims();
    for a in 0..3 {
        if coord[a] < h || coord[a] + h >= dims[a] {
            return Err(Error::invalid(format!(
                "patch of side {patch_side} at {coord:?} leaves volume {dims:?}"
            )));
        }
    }
    let mut out = Vec::with_capacity(patch_side.pow(3));
    for z in coord[2] - h..=coord[2] + h {
        for y in coord[1] - h..=coord[1] + h {
            let start = vol.index([coord[0] - h, y, z]);
            out.extend_from_slice(&vol.data()[start..start + patch_side]);
        }
    }
    Ok(out)
}

/// [`extract_patch`] wrapped into a tagged [`Patch`].
pub fn extract_landmark_patch(
    vol: &Volume,
    lm: &Landmark,
    patch_side: usize,
    subject_id: usize,
    timepoint: Timepoint,
) -> Result<Patch> {
    Ok(Patch::new(
        lm.index,
        subject_id,
        timepoint,
        extract_patch(vol, lm.coord, patch_side)?,
    ))
}
