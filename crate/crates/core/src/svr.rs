//! Linear ε-insensitive support vector regression.
//!
//! The bias is absorbed into the weight vector through a constant feature,
//! which leaves a box-constrained dual
//!
//! ```text
//! min_β  ½ βᵀQβ − yᵀβ + ε‖β‖₁   s.t. −C ≤ β_i ≤ C,   Q = X̃X̃ᵀ
//! ```
//!
//! solved by cyclic coordinate descent in a seeded random order. The primal
//! weights are kept in sync (`w = Σ β_i x̃_i`), so each coordinate step costs
//! one pass over a row.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    pub c: f64,
    pub epsilon: f64,
    /// Value of the constant feature carrying the bias.
    pub bias_scale: f64,
    /// Maximum projected-gradient violation at convergence.
    pub tol: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for SvrParams {
    fn default() -> Self {
        SvrParams {
            c: 1.0,
            epsilon: 0.001,
            bias_scale: 1.0,
            tol: 1e-6,
            max_epochs: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SvrDiagnostics {
    pub epochs: usize,
    pub converged: bool,
    pub max_violation: f64,
    /// Every input row is identical while targets differ.
    pub degenerate: bool,
    pub dual_objective: f64,
}

/// A trained linear regressor `f(x) = w·x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvr {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub params: SvrParams,
    pub diagnostics: SvrDiagnostics,
    #[serde(skip)]
    pub dual: Vec<f64>,
}

impl LinearSvr {
    pub fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    let n = a.len().min(b.len());
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for i in 4 * chunks..n {
        s0 += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3)
}

/// `½ βᵀQβ − yᵀβ + ε‖β‖₁` for the augmented design.
pub fn svr_dual_objective<R: AsRef<[f64]>>(rows: &[R], targets: &[f64], beta: &[f64], epsilon: f64, bias_scale: f64) -> f64 {
    let d = rows.first().map_or(0, |r| r.as_ref().len());
    let mut w = vec![0.0; d];
    let mut wb = 0.0;
    for (r, &b) in rows.iter().zip(beta) {
        for (wj, &x) in w.iter_mut().zip(r.as_ref()) {
            *wj += b * x;
        }
        wb += b * bias_scale;
    }
    let quad = 0.5 * (dot(&w, &w) + wb * wb);
    let lin: f64 = targets.iter().zip(beta).map(|(y, b)| y * b).sum();
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    quad - lin + epsilon * l1
}

/// Fits a linear ε-SVR on `rows → targets`.
pub fn train_svr<R: AsRef<[f64]>>(rows: &[R], targets: &[f64], params: SvrParams) -> Result<LinearSvr> {
    if rows.is_empty() {
        return Err(Error::invalid("svr training set is empty"));
    }
    if rows.len() != targets.len() {
        return Err(Error::invalid("svr rows and targets differ in length"));
    }
    if !(params.c > 0.0) || !(params.epsilon >= 0.0) {
        return Err(Error::invalid("svr needs C > 0 and epsilon >= 0"));
    }
    let d = rows[0].as_ref().len();
    if rows.iter().any(|r| r.as_ref().len() != d) {
        return Err(Error::invalid("svr rows have mismatched lengths"));
    }
    let n = rows.len();
    let bs = params.bias_scale;
    let c = params.c;
    let eps = params.epsilon;

    let qdiag: Vec<f64> = rows.iter().map(|r| dot(r.as_ref(), r.as_ref()) + bs * bs).collect();
    let mut beta = vec![0.0; n];
    let mut w = vec![0.0; d];
    let mut wb = 0.0;
    let mut index: Vec<usize> = (0..n).collect();
    let mut active = n;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    // Shrinking threshold: the previous epoch's largest violation.
    let mut gmax_old = f64::INFINITY;

    let mut diag = SvrDiagnostics::default();
    for epoch in 0..params.max_epochs {
        index[..active].shuffle(&mut rng);
        let mut max_violation = 0.0f64;
        let mut s_pos = 0;
        while s_pos < active {
            let i = index[s_pos];
            let h = qdiag[i];
            if h <= 0.0 {
                s_pos += 1;
                continue;
            }
            let x = rows[i].as_ref();
            let g = dot(&w, x) + wb * bs - targets[i];
            let gp = g + eps;
            let gn = g - eps;
            let b = beta[i];

            let mut shrink = false;
            let violation = if b == 0.0 {
                if gp < 0.0 {
                    -gp
                } else if gn > 0.0 {
                    gn
                } else {
                    shrink = gp > gmax_old && gn < -gmax_old;
                    0.0
                }
            } else if b >= c {
                shrink = gp < -gmax_old;
                gp.max(0.0)
            } else if b <= -c {
                shrink = gn > gmax_old;
                (-gn).max(0.0)
            } else if b > 0.0 {
                gp.abs()
            } else {
                gn.abs()
            };
            if shrink {
                active -= 1;
                index.swap(s_pos, active);
                continue;
            }
            s_pos += 1;
            max_violation = max_violation.max(violation);
            if violation == 0.0 {
                continue;
            }

            let step = if gp < h * b {
                -gp / h
            } else if gn > h * b {
                -gn / h
            } else {
                -b
            };
            let nb = (b + step).clamp(-c, c);
            let delta = nb - b;
            if delta != 0.0 {
                beta[i] = nb;
                for (wj, &xj) in w.iter_mut().zip(x) {
                    *wj += delta * xj;
                }
                wb += delta * bs;
            }
        }
        diag.epochs = epoch + 1;
        diag.max_violation = max_violation;
        if max_violation < params.tol {
            if active == n {
                diag.converged = true;
                break;
            }
            // Converged on the shrunk set: re-check every variable.
            active = n;
            gmax_old = f64::INFINITY;
            continue;
        }
        gmax_old = max_violation;
    }

    let first = rows[0].as_ref();
    let same_inputs = rows.iter().all(|r| r.as_ref() == first);
    let same_targets = targets.iter().all(|&t| t == targets[0]);
    diag.degenerate = same_inputs && !same_targets;
    if !diag.converged {
        log::debug!(
            "svr stopped after {} epochs with violation {:.3e}",
            diag.epochs,
            diag.max_violation
        );
    }
    diag.dual_objective = {
        let quad = 0.5 * (dot(&w, &w) + wb * wb);
        let lin: f64 = targets.iter().zip(&beta).map(|(y, b)| y * b).sum();
        let l1: f64 = beta.iter().map(|b| b.abs()).sum();
        quad - lin + eps * l1
    };
    if !diag.dual_objective.is_finite() {
        return Err(Error::Numerical {
            iteration: diag.epochs,
            message: "svr dual objective is not finite".into(),
        });
    }
    Ok(LinearSvr {
        weights: w,
        bias: wb * bs,
        params,
        diagnostics: diag,
        dual: beta,
    })
}
