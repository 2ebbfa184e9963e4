//! Synthetic longitudinal cohorts: one smooth ellipsoidal ROI per subject
//! whose semi-axes shrink between the two timepoints at a class-dependent
//! rate.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Class, Cohort, Subject};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::volume::{Volume, VolumeKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
}

impl Ellipsoid {
    fn scaled(&self, f: [f64; 3]) -> Ellipsoid {
        Ellipsoid {
            center: self.center,
            semi_axes: [self.semi_axes[0] * f[0], self.semi_axes[1] * f[1], self.semi_axes[2] * f[2]],
        }
    }

    /// Approximate signed distance (negative inside), exact for spheres.
    pub fn signed_distance(&self, p: [f64; 3]) -> f64 {
        let mut r2 = 0.0;
        let mut g2 = 0.0;
        for a in 0..3 {
            let u = (p[a] - self.center[a]) / self.semi_axes[a];
            r2 += u * u;
            g2 += (u / self.semi_axes[a]).powi(2);
        }
        if r2 == 0.0 {
            return -self.semi_axes.iter().cloned().fold(f64::INFINITY, f64::min);
        }
        let r = r2.sqrt();
        (r - 1.0) / (g2.sqrt() / r)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.semi_axes[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }

    fn check(&self, dims: [usize; 3], what: &str) -> Result<()> {
        for a in 0..3 {
            let s = self.semi_axes[a];
            if !(s >= 2.0) {
                return Err(Error::invalid(format!("{what}: semi-axis {s:.3} is below 2 voxels")));
            }
            let lo = self.center[a] - s;
            let hi = self.center[a] + s;
            if lo < 0.0 || hi > (dims[a] - 1) as f64 {
                return Err(Error::invalid(format!("{what}: ellipsoid leaves the volume along axis {a}")));
            }
        }
        Ok(())
    }
}

/// Per-class generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    /// Mean fractional semi-axis shrinkage from t1 to t2.
    pub atrophy_rate_mean: f64,
    pub atrophy_rate_std: f64,
    /// Fractional semi-axis shrinkage already present at t1.
    #[serde(default)]
    pub baseline_shrink: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub n_per_class: usize,
    pub dims: [usize; 3],
    pub roi: Ellipsoid,
    pub roi_label: i64,
    pub control: ClassParams,
    pub disease: ClassParams,
    pub background: f64,
    pub roi_intensity: f64,
    /// Width of the logistic boundary profile, in voxels.
    pub boundary_width: f64,
    pub noise_std: f64,
    /// Relative standard deviation of each subject's semi-axes.
    pub anatomy_jitter: f64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n_per_class: 30,
            dims: [32, 32, 32],
            roi: Ellipsoid {
                center: [15.5, 15.5, 15.5],
                semi_axes: [9.0, 8.0, 7.0],
            },
            roi_label: 1,
            control: ClassParams {
                atrophy_rate_mean: 0.01,
                atrophy_rate_std: 0.005,
                baseline_shrink: 0.0,
            },
            disease: ClassParams {
                atrophy_rate_mean: 0.10,
                atrophy_rate_std: 0.02,
                baseline_shrink: 0.03,
            },
            background: 0.1,
            roi_intensity: 0.8,
            boundary_width: 1.0,
            noise_std: 0.02,
            anatomy_jitter: 0.03,
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 {
            return Err(Error::invalid("n_per_class must be positive"));
        }
        if self.dims.iter().any(|&d| d < 3) {
            return Err(Error::invalid("every volume dimension must be at least 3"));
        }
        if !(self.noise_std >= 0.0) || !(self.anatomy_jitter >= 0.0) {
            return Err(Error::invalid("noise_std and anatomy_jitter must be non-negative"));
        }
        if !(self.boundary_width > 0.0) {
            return Err(Error::invalid("boundary_width must be positive"));
        }
        if self.roi_label == 0 {
            return Err(Error::invalid("roi_label 0 is reserved for background"));
        }
        for v in [self.background, self.roi_intensity] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid("intensities must be finite and non-negative"));
            }
        }
        self.roi.check(self.dims, "roi")?;
        for (name, p) in [("control", self.control), ("disease", self.disease)] {
            if !(p.atrophy_rate_std >= 0.0) || !p.atrophy_rate_mean.is_finite() || !(p.baseline_shrink < 1.0) {
                return Err(Error::invalid(format!("{name}: invalid rate parameters")));
            }
            let f = (1.0 - p.baseline_shrink) * (1.0 - p.atrophy_rate_mean);
            self.roi.check(self.dims, name)?;
            self.roi.scaled([f; 3]).check(self.dims, &format!("{name} at t2"))?;
        }
        Ok(())
    }

    fn class_params(&self, class: Class) -> ClassParams {
        match class {
            Class::Control => self.control,
            Class::Disease => self.disease,
        }
    }
}

/// Per-subject draws, exposed for tests and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectGeometry {
    pub t1: Ellipsoid,
    pub t2: Ellipsoid,
    pub rate: f64,
}

fn render(spec: &CohortSpec, e: &Ellipsoid, rng: &mut impl Rng) -> Vec<f64> {
    let [nx, ny, nz] = spec.dims;
    let mut out = Vec::with_capacity(nx * ny * nz);
    let contrast = spec.roi_intensity - spec.background;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let d = e.signed_distance([x as f64, y as f64, z as f64]);
                let clean = spec.background + contrast / (1.0 + (d / spec.boundary_width).exp());
                let noise: f64 = if spec.noise_std > 0.0 {
                    spec.noise_std * Distribution::<f64>::sample(&StandardNormal, rng)
                } else {
                    0.0
                };
                // Held at container precision so saving and reloading is exact.
                out.push((clean + noise).max(0.0) as f32 as f64);
            }
        }
    }
    out
}

fn subject_class(spec: &CohortSpec, index: usize) -> Class {
    if index < spec.n_per_class {
        Class::Control
    } else {
        Class::Disease
    }
}

pub fn subject_id(index: usize) -> String {
    format!("sub-{index:03}")
}

fn draw_geometry(spec: &CohortSpec, class: Class, rng: &mut impl Rng) -> Result<SubjectGeometry> {
    let p = spec.class_params(class);
    let mut jitter = [1.0; 3];
    for j in &mut jitter {
        let g: f64 = StandardNormal.sample(rng);
        *j = (1.0 + spec.anatomy_jitter * g) * (1.0 - p.baseline_shrink);
    }
    let g: f64 = StandardNormal.sample(rng);
    let rate = p.atrophy_rate_mean + p.atrophy_rate_std * g;
    let t1 = spec.roi.scaled(jitter);
    let t2 = t1.scaled([1.0 - rate; 3]);
    t1.check(spec.dims, "subject t1")?;
    t2.check(spec.dims, "subject t2")?;
    Ok(SubjectGeometry { t1, t2, rate })
}

/// Geometry of subject `index` under `spec`.
pub fn subject_geometry(spec: &CohortSpec, index: usize) -> Result<SubjectGeometry> {
    let mut rng = stream_rng(spec.seed, "synth", &[index as u64]);
    draw_geometry(spec, subject_class(spec, index), &mut rng)
}

fn generate_subject(spec: &CohortSpec, index: usize) -> Result<Subject> {
    let class = subject_class(spec, index);
    let mut rng = stream_rng(spec.seed, "synth", &[index as u64]);
    let geo = draw_geometry(spec, class, &mut rng)?;
    let t1 = render(spec, &geo.t1, &mut rng);
    let t2 = render(spec, &geo.t2, &mut rng);
    let [nx, ny, nz] = spec.dims;
    let mut label = Vec::with_capacity(t1.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let inside = geo.t1.contains([x as f64, y as f64, z as f64]);
                label.push(if inside { spec.roi_label as f64 } else { 0.0 });
            }
        }
    }
    let spacing = [1.0; 3];
    Ok(Subject {
        id: subject_id(index),
        class,
        t1: Volume::new(spec.dims, spacing, VolumeKind::Intensity, t1)?,
        t2: Volume::new(spec.dims, spacing, VolumeKind::Intensity, t2)?,
        label: Volume::new(spec.dims, spacing, VolumeKind::Label, label)?,
    })
}

/// Generates `2 · n_per_class` subjects, controls first.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Cohort> {
    spec.validate()?;
    let subjects = (0..2 * spec.n_per_class)
        .into_par_iter()
        .map(|i| generate_subject(spec, i))
        .collect::<Result<Vec<_>>>()?;
    Cohort::new(subjects)
}
