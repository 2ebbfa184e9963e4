//! Patch-to-patch disparities, intensity quotients and Gaussian kernel banks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "patch length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Element-wise `|p - q|`.
pub fn abs_disparity(p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    check_len(p, q)?;
    Ok(p.iter().zip(q).map(|(a, b)| (a - b).abs()).collect())
}

/// Directional split of the absolute disparity between an ordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityPair {
    /// `max(0, target - source)`
    pub plus: Vec<f64>,
    /// `max(0, source - target)`
    pub minus: Vec<f64>,
}

/// Positive and negative disparities from `source` to `target`.
///
/// `plus + minus == |source - target|` holds exactly, and swapping the
/// arguments swaps the two halves.
pub fn directional_disparities(source: &[f64], target: &[f64]) -> Result<DisparityPair> {
    check_len(source, target)?;
    let mut plus = Vec::with_capacity(source.len());
    let mut minus = Vec::with_capacity(source.len());
    for (&s, &t) in source.iter().zip(target) {
        plus.push((t - s).max(0.0));
        minus.push((s - t).max(0.0));
    }
    Ok(DisparityPair { plus, minus })
}

/// Bounds applied to intensity quotients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuotientBounds {
    /// Value used where the denominator is zero, and the upper clamp.
    pub cap: f64,
    /// Lower clamp, so that quotients stay strictly positive.
    pub floor: f64,
}

impl Default for QuotientBounds {
    fn default() -> Self {
        QuotientBounds { cap: 10.0, floor: 1e-3 }
    }
}

/// Element-wise `target / source`, clamped to `[floor, cap]`; a zero in
/// `source` maps to `cap`.
pub fn quotient_map(target: &[f64], source: &[f64], bounds: QuotientBounds) -> Result<Vec<f64>> {
    check_len(target, source)?;
    if !(bounds.cap > 0.0) || !(bounds.floor > 0.0) || bounds.floor > bounds.cap {
        return Err(Error::invalid("quotient bounds need 0 < floor <= cap"));
    }
    Ok(target
        .iter()
        .zip(source)
        .map(|(&t, &s)| {
            if s == 0.0 {
                bounds.cap
            } else {
                (t / s).clamp(bounds.floor, bounds.cap)
            }
        })
        .collect())
}

/// Euclidean distance between two equal-length vectors.
#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_euclidean(a, b).sqrt()
}

#[inline]
pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Symmetric matrix of pairwise Euclidean distances, row-major `n × n`.
pub fn pairwise_distances<P: AsRef<[f64]> + Sync>(patches: &[P]) -> Result<Vec<f64>> {
    let n = patches.len();
    if let Some(first) = patches.first() {
        let d = first.as_ref().len();
        if patches.iter().any(|p| p.as_ref().len() != d) {
            return Err(Error::invalid("patches have mismatched lengths"));
        }
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if j > i {
                        euclidean(patches[i].as_ref(), patches[j].as_ref())
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            dist[i * n + j] = rows[i][j];
            dist[j * n + i] = rows[i][j];
        }
    }
    Ok(dist)
}

/// Default neighbourhood size for bandwidths: about a tenth of the cohort,
/// at least two.
pub fn default_knn(n: usize) -> usize {
    let k = (n.saturating_sub(1)).div_ceil(10).max(2);
    k.min(n.saturating_sub(1)).max(1)
}

/// Mean distance from each patch to its `k` nearest other patches, given a
/// precomputed distance matrix. Ties go to the lower index.
pub fn knn_bandwidth_from_distances(dist: &[f64], n: usize, k: usize) -> Result<Vec<f64>> {
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("knn size {k} must be in 1..{n}")));
    }
    Ok((0..n)
        .map(|s| {
            let mut others: Vec<(f64, usize)> =
                (0..n).filter(|&j| j != s).map(|j| (dist[s * n + j], j)).collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others[..k].iter().map(|(d, _)| d).sum::<f64>() / k as f64
        })
        .collect())
}

/// Mean Euclidean distance from each patch to its `k` nearest neighbours.
pub fn knn_bandwidth<P: AsRef<[f64]> + Sync>(patches: &[P], k: usize) -> Result<Vec<f64>> {
    let dist = pairwise_distances(patches)?;
    knn_bandwidth_from_distances(&dist, patches.len(), k)
}

/// Options for [`build_kernel_bank`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelOptions {
    /// Rescale each kernel matrix so its largest entry is 1.
    pub normalize: bool,
    /// Bandwidth floor relative to the mean nonzero pairwise distance.
    pub bandwidth_floor: f64,
}

impl Default for KernelOptions {
    fn default() -> Self {
        KernelOptions {
            normalize: true,
            bandwidth_floor: 1e-6,
        }
    }
}

/// A stack of `m` symmetric `n × n` Gaussian kernel matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    n: usize,
    kernels: Vec<Vec<f64>>,
    sigmas: Vec<f64>,
    knn_k: usize,
}

impl KernelBank {
    /// Wraps precomputed kernel matrices.
    pub fn from_matrices(n: usize, kernels: Vec<Vec<f64>>, sigmas: Vec<f64>, knn_k: usize) -> Result<Self> {
        if kernels.is_empty() || kernels.len() != sigmas.len() {
            return Err(Error::invalid("kernel bank needs one sigma per kernel and m >= 1"));
        }
        if kernels.iter().any(|k| k.len() != n * n) {
            return Err(Error::invalid("kernel matrix has wrong size"));
        }
        Ok(KernelBank {
            n,
            kernels,
            sigmas,
            knn_k,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.kernels.len()
    }

    pub fn kernel(&self, l: usize) -> &[f64] {
        &self.kernels[l]
    }

    pub fn kernels(&self) -> &[Vec<f64>] {
        &self.kernels
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn knn_k(&self) -> usize {
        self.knn_k
    }

    /// `Σ_l w_l K_l`.
    pub fn combined(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        for (k, &wl) in self.kernels.iter().zip(w) {
            for (o, &v) in out.iter_mut().zip(k) {
                *o += wl * v;
            }
        }
        out
    }
}

/// `m` evenly spaced scales in `[1, 2]`.
pub fn sigma_grid(m: usize) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..m).map(|l| 1.0 + l as f64 / (m - 1) as f64).collect(),
    }
}

/// Raw Gaussian kernel value for a given distance and bandwidth.
#[inline]
pub fn gaussian(dist: f64, eps: f64) -> f64 {
    (-(dist * dist) / (2.0 * eps * eps)).exp() / (eps * (2.0 * std::f64::consts::PI).sqrt())
}

/// Builds the multi-scale Gaussian kernel bank over `patches`.
///
/// Entry `(s, s')` of kernel `l` uses bandwidth `σ_l (μ_s + μ_s') / 2`,
/// where `μ` are the k-nearest-neighbour mean distances.
pub fn build_kernel_bank<P: AsRef<[f64]> + Sync>(
    patches: &[P],
    sigmas: &[f64],
    k: usize,
    opts: KernelOptions,
) -> Result<KernelBank> {
    if sigmas.is_empty() || sigmas.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid("sigmas must be nonempty and positive"));
    }
    let n = patches.len();
    let dist = pairwise_distances(patches)?;
    let mu = knn_bandwidth_from_distances(&dist, n, k)?;

    let nonzero: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| dist[i * n + j])
        .filter(|&d| d > 0.0)
        .collect();
    let scale = if nonzero.is_empty() {
        1.0
    } else {
        nonzero.iter().sum::<f64>() / nonzero.len() as f64
    };
    let floor = opts.bandwidth_floor * scale;

    let mut kernels = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let mut kmat = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let eps = (sigma * (mu[i] + mu[j]) / 2.0).max(floor);
                if !(eps > 0.0) {
                    return Err(Error::Numerical {
                        iteration: 0,
                        message: "zero kernel bandwidth".into(),
                    });
                }
                kmat[i * n + j] = gaussian(dist[i * n + j], eps);
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let avg = 0.5 * (kmat[i * n + j] + kmat[j * n + i]);
                kmat[i * n + j] = avg;
                kmat[j * n + i] = avg;
            }
        }
        if opts.normalize {
            let max = kmat.iter().copied().fold(0.0f64, f64::max);
            if max > 0.0 {
                for v in &mut kmat {
                    *v /= max;
                }
            }
        }
        kernels.push(kmat);
    }
    KernelBank::from_matrices(n, kernels, sigmas.to_vec(), k)
}
