//! Soft-margin linear SVM trained in the dual.
//!
//! With the bias absorbed through a constant feature the dual is
//!
//! ```text
//! min_α  ½ αᵀQα − Σα_i   s.t. 0 ≤ α_i ≤ C,   Q_ij = y_i y_j x̃_i·x̃_j
//! ```
//!
//! Training sets here are small (one row per subject) and wide, so the solver
//! works on the Gram matrix: a coordinate step costs `O(n)` instead of
//! `O(d)`, and one Gram matrix serves every cost value and CV fold.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::svr::dot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmSolverParams {
    pub bias_scale: f64,
    pub tol: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for SvmSolverParams {
    fn default() -> Self {
        SvmSolverParams {
            bias_scale: 1.0,
            tol: 1e-6,
            max_epochs: 20_000,
            seed: 0,
        }
    }
}

/// Gram matrix of the augmented rows `x̃ = (x, bias_scale)`.
pub fn augmented_gram<R: AsRef<[f64]>>(rows: &[R], bias_scale: f64) -> Vec<f64> {
    let n = rows.len();
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = dot(rows[i].as_ref(), rows[j].as_ref()) + bias_scale * bias_scale;
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    g
}

/// Picks the sub-matrix of `gram` (size `n × n`) at `idx`.
pub fn sub_gram(gram: &[f64], n: usize, idx: &[usize]) -> Vec<f64> {
    let m = idx.len();
    let mut out = vec![0.0; m * m];
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            out[a * m + b] = gram[i * n + j];
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
    /// `½ αᵀQα − Σα`, minimised.
    pub objective: f64,
}

fn check_labels(labels: &[f64]) -> Result<()> {
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::invalid("svm labels must be +1 or -1"));
    }
    let pos = labels.iter().filter(|&&y| y > 0.0).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::invalid("svm training needs samples of both classes"));
    }
    Ok(())
}

/// Solves the dual on a precomputed augmented Gram matrix.
///
/// `warm` must be feasible for `c` (e.g. the solution for a smaller cost).
pub fn solve_dual(gram: &[f64], labels: &[f64], c: f64, warm: Option<&[f64]>, params: SvmSolverParams) -> Result<DualSolution> {
    let n = labels.len();
    if gram.len() != n * n {
        return Err(Error::invalid("gram matrix size does not match labels"));
    }
    if !(c > 0.0) {
        return Err(Error::invalid("svm cost C must be positive"));
    }
    check_labels(labels)?;
    let mut alpha = match warm {
        Some(a) if a.len() == n => a.iter().map(|&v| v.clamp(0.0, c)).collect(),
        _ => vec![0.0; n],
    };
    // qa[i] = Σ_j Q_ij α_j
    let mut qa = vec![0.0; n];
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            if alpha[j] != 0.0 {
                s += labels[i] * labels[j] * gram[i * n + j] * alpha[j];
            }
        }
        qa[i] = s;
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut converged = false;
    let mut epochs = 0;
    while epochs < params.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        let mut max_pg = 0.0f64;
        for &i in &order {
            let qii = gram[i * n + i];
            if qii <= 0.0 {
                continue;
            }
            let g = qa[i] - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            max_pg = max_pg.max(pg.abs());
            if pg == 0.0 {
                continue;
            }
            let new = (alpha[i] - g / qii).clamp(0.0, c);
            let delta = new - alpha[i];
            if delta != 0.0 {
                alpha[i] = new;
                let yi = labels[i];
                let row = &gram[i * n..(i + 1) * n];
                for j in 0..n {
                    qa[j] += delta * yi * labels[j] * row[j];
                }
            }
        }
        if max_pg < params.tol {
            converged = true;
            break;
        }
    }
    let objective = 0.5 * alpha.iter().zip(&qa).map(|(a, q)| a * q).sum::<f64>() - alpha.iter().sum::<f64>();
    if !objective.is_finite() {
        return Err(Error::Numerical {
            iteration: epochs,
            message: "svm dual objective is not finite".into(),
        });
    }
    if !converged {
        log::debug!("svm dual stopped after {epochs} epochs without reaching tolerance");
    }
    Ok(DualSolution {
        alpha,
        epochs,
        converged,
        objective,
    })
}

/// `f(x) = w·x + b`; positive values vote for the disease class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
}

impl LinearSvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        if self.decision(x) > 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Primal weights from a dual solution.
    pub fn from_dual<R: AsRef<[f64]>>(rows: &[R], labels: &[f64], alpha: &[f64], c: f64, bias_scale: f64) -> Self {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut w = vec![0.0; d];
        let mut wb = 0.0;
        for ((r, &y), &a) in rows.iter().zip(labels).zip(alpha) {
            if a == 0.0 {
                continue;
            }
            for (wj, &x) in w.iter_mut().zip(r.as_ref()) {
                *wj += a * y * x;
            }
            wb += a * y * bias_scale;
        }
        LinearSvm {
            weights: w,
            bias: wb * bias_scale,
            c,
        }
    }
}

/// Hinge-loss primal objective `½‖w̃‖² + C Σ max(0, 1 − y f(x))`.
pub fn primal_objective<R: AsRef<[f64]>>(model: &LinearSvm, rows: &[R], labels: &[f64], bias_scale: f64) -> f64 {
    let wb = if bias_scale != 0.0 { model.bias / bias_scale } else { 0.0 };
    let reg = 0.5 * (dot(&model.weights, &model.weights) + wb * wb);
    let hinge: f64 = rows
        .iter()
        .zip(labels)
        .map(|(r, &y)| (1.0 - y * model.decision(r.as_ref())).max(0.0))
        .sum();
    reg + model.c * hinge
}

/// Trains a soft-margin linear SVM with cost `c`.
pub fn train_linear_svm<R: AsRef<[f64]>>(rows: &[R], labels: &[f64], c: f64, params: SvmSolverParams) -> Result<LinearSvm> {
    if rows.len() != labels.len() {
        return Err(Error::invalid("svm rows and labels differ in length"));
    }
    check_labels(labels)?;
    let gram = augmented_gram(rows, params.bias_scale);
    let sol = solve_dual(&gram, labels, c, None, params)?;
    Ok(LinearSvm::from_dual(rows, labels, &sol.alpha, c, params.bias_scale))
}
