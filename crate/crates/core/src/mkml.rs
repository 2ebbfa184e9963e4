//! Multi-kernel manifold learning of patch similarities.
//!
//! Given a bank of Gaussian kernels `K_1..K_m` over `n` patches, learn a
//! row-stochastic similarity `S`, an orthonormal latent embedding `L`
//! (`n × c`) and simplex kernel weights `w` minimising
//!
//! ```text
//! −Σ_ij (Σ_l w_l K_l)_ij S_ij + β‖S‖²_F + γ tr(Lᵀ(I − S)L) + ρ Σ_l w_l log w_l
//! ```
//!
//! by exact block-coordinate descent: each of `S`, `L` and `w` has a closed
//! form (or exactly solvable) minimiser with the other two fixed, so the
//! objective never increases.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigen, project_simplex};
use crate::ranking::{AtlasRanking, RankedAtlas, Strategy};
use crate::similarity::KernelBank;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MkmlParams {
    /// Number of clusters, i.e. columns of `L`.
    pub c: usize,
    pub beta: f64,
    pub gamma: f64,
    pub rho: f64,
    pub max_iters: usize,
    /// Relative objective change that ends the iteration.
    pub tol: f64,
    /// Off-diagonal tolerance of the eigensolver.
    pub eigen_tol: f64,
}

impl Default for MkmlParams {
    fn default() -> Self {
        MkmlParams {
            c: 3,
            beta: 1.0,
            gamma: 1.0,
            rho: 0.1,
            max_iters: 30,
            tol: 1e-5,
            eigen_tol: 1e-10,
        }
    }
}

impl MkmlParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.c < 1 || self.c >= n {
            return Err(Error::invalid(format!(
                "cluster count c = {} must satisfy 1 <= c < n = {n}",
                self.c
            )));
        }
        if !(self.beta > 0.0 && self.gamma > 0.0 && self.rho > 0.0 && self.tol > 0.0) {
            return Err(Error::invalid("beta, gamma, rho and tol must be positive"));
        }
        Ok(())
    }
}

/// Learned similarity, embedding and kernel weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityModel {
    pub n: usize,
    pub c: usize,
    /// Row-major `n × n`, rows on the simplex.
    pub s: Vec<f64>,
    /// Row-major `n × c`, orthonormal columns.
    pub l: Vec<f64>,
    pub w: Vec<f64>,
    /// Objective at initialisation followed by one value per iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the eigenvalue gap at the `c`-th eigenvalue was numerically zero.
    pub eigengap_degenerate: bool,
}

fn check_shapes(s: &[f64], l: &[f64], w: &[f64], bank: &KernelBank, c: usize) -> Result<()> {
    let n = bank.n();
    if s.len() != n * n || l.len() != n * c || w.len() != bank.m() {
        return Err(Error::invalid(format!(
            "mkml shapes inconsistent: S {} (want {}), L {} (want {}), w {} (want {})",
            s.len(),
            n * n,
            l.len(),
            n * c,
            w.len(),
            bank.m()
        )));
    }
    Ok(())
}

/// Value of the four-term objective.
pub fn mkml_objective(s: &[f64], l: &[f64], w: &[f64], bank: &KernelBank, p: &MkmlParams) -> Result<f64> {
    check_shapes(s, l, w, bank, p.c)?;
    let n = bank.n();
    let c = p.c;
    let m = bank.combined(w);
    let fit: f64 = m.iter().zip(s).map(|(k, x)| k * x).sum();
    let ridge: f64 = s.iter().map(|x| x * x).sum();
    // tr(Lᵀ (I − S) L)
    let mut trace = 0.0;
    for k in 0..c {
        for i in 0..n {
            let mut row = l[i * c + k];
            for j in 0..n {
                row -= s[i * n + j] * l[j * c + k];
            }
            trace += l[i * c + k] * row;
        }
    }
    let entropy: f64 = w.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum();
    Ok(-fit + p.beta * ridge + p.gamma * trace + p.rho * entropy)
}

/// Entropy-regularised kernel weights: `w_l ∝ exp(⟨K_l, S⟩ / ρ)`.
pub fn update_w(s: &[f64], bank: &KernelBank, rho: f64) -> Vec<f64> {
    let scores: Vec<f64> = bank
        .kernels()
        .iter()
        .map(|k| k.iter().zip(s).map(|(a, b)| a * b).sum::<f64>() / rho)
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Top-`c` eigenvectors of `(S + Sᵀ)/2`, i.e. the minimisers of
/// `tr(Lᵀ(I − S)L)` over orthonormal `L`. Returns `L` and whether the
/// eigengap at `c` was numerically zero.
pub fn update_l(s: &[f64], n: usize, c: usize, eigen_tol: f64) -> Result<(Vec<f64>, bool)> {
    if s.len() != n * n || c == 0 || c > n {
        return Err(Error::invalid("update_l shape mismatch"));
    }
    let mut lap = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let sym = 0.5 * (s[i * n + j] + s[j * n + i]);
            lap[i * n + j] = if i == j { 1.0 - sym } else { -sym };
        }
    }
    let eig = jacobi_eigen(&lap, n, eigen_tol)?;
    let degenerate = c < n && (eig.values[c] - eig.values[c - 1]).abs() < 1e-12;
    let mut l = vec![0.0; n * c];
    for i in 0..n {
        for k in 0..c {
            l[i * c + k] = eig.vectors[i * n + k];
        }
    }
    Ok((l, degenerate))
}

/// Row-wise exact minimiser over the simplex:
/// `S_i = Π((M_i + γ L_i Lᵀ) / 2β)` with `M = Σ w_l K_l`.
pub fn update_s(l: &[f64], c: usize, bank: &KernelBank, w: &[f64], beta: f64, gamma: f64) -> Vec<f64> {
    let n = bank.n();
    let m = bank.combined(w);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let li = &l[i * c..(i + 1) * c];
            let target: Vec<f64> = (0..n)
                .map(|j| {
                    let lj = &l[j * c..(j + 1) * c];
                    let inner: f64 = li.iter().zip(lj).map(|(a, b)| a * b).sum();
                    (m[i * n + j] + gamma * inner) / (2.0 * beta)
                })
                .collect();
            project_simplex(&target)
        })
        .collect();
    rows.concat()
}

/// Alternating minimisation from uniform weights and the row-normalised
/// average kernel.
pub fn optimize_similarity(bank: &KernelBank, p: &MkmlParams) -> Result<SimilarityModel> {
    let n = bank.n();
    p.validate(n)?;
    let m = bank.m();
    let mut w = vec![1.0 / m as f64; m];
    let avg = bank.combined(&w);
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        let row = &avg[i * n..(i + 1) * n];
        let total: f64 = row.iter().sum();
        for j in 0..n {
            s[i * n + j] = if total > 0.0 { row[j] / total } else { 1.0 / n as f64 };
        }
    }
    let (mut l, mut degenerate) = update_l(&s, n, p.c, p.eigen_tol)?;
    let mut prev = mkml_objective(&s, &l, &w, bank, p)?;
    if !prev.is_finite() {
        return Err(Error::Numerical {
            iteration: 0,
            message: "mkml objective is not finite at initialisation".into(),
        });
    }
    let mut trace = vec![prev];
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=p.max_iters {
        s = update_s(&l, p.c, bank, &w, p.beta, p.gamma);
        let (new_l, deg) = update_l(&s, n, p.c, p.eigen_tol)?;
        l = new_l;
        degenerate |= deg;
        w = update_w(&s, bank, p.rho);
        let obj = mkml_objective(&s, &l, &w, bank, p)?;
        if !obj.is_finite() {
            return Err(Error::Numerical {
                iteration: it,
                message: "mkml objective is not finite".into(),
            });
        }
        trace.push(obj);
        iterations = it;
        let rel = (prev - obj).abs() / prev.abs().max(1e-12);
        prev = obj;
        if rel < p.tol {
            converged = true;
            break;
        }
    }
    Ok(SimilarityModel {
        n,
        c: p.c,
        s,
        l,
        w,
        objective_trace: trace,
        iterations,
        converged,
        eigengap_degenerate: degenerate,
    })
}

/// Ranks every row other than `test_index` by symmetrised learned similarity
/// to it. Subject ids in the ranking are row indices.
pub fn rank_atlases_mkml(model: &SimilarityModel, test_index: usize) -> Result<AtlasRanking> {
    let n = model.n;
    if test_index >= n {
        return Err(Error::invalid(format!("test index {test_index} out of range for n = {n}")));
    }
    let entries = (0..n)
        .filter(|&j| j != test_index)
        .map(|j| RankedAtlas {
            subject_id: j,
            score: 0.5 * (model.s[test_index * n + j] + model.s[j * n + test_index]),
        })
        .collect();
    Ok(AtlasRanking::new(Strategy::Mkml, entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::{build_kernel_bank, sigma_grid, KernelOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_bank(rng: &mut ChaCha8Rng, n: usize, m: usize) -> KernelBank {
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.random::<f64>()).collect()).collect();
        build_kernel_bank(&pts, &sigma_grid(m), 2, KernelOptions::default()).unwrap()
    }

    #[test]
    fn single_kernel_has_no_entropy_and_identity_has_no_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bank = random_bank(&mut rng, 4, 1);
        let p = MkmlParams {
            c: 2,
            ..Default::default()
        };
        let mut s = vec![0.0; 16];
        for i in 0..4 {
            s[i * 4 + i] = 1.0;
        }
        let mut l = vec![0.0; 8];
        l[0] = 1.0;
        l[3] = 1.0;
        let obj = mkml_objective(&s, &l, &[1.0], &bank, &p).unwrap();
        let fit: f64 = (0..4).map(|i| bank.kernel(0)[i * 4 + i]).sum();
        assert!((obj - (-fit + p.beta * 4.0)).abs() < 1e-12);
    }

    #[test]
    fn objective_rejects_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bank = random_bank(&mut rng, 4, 2);
        let p = MkmlParams {
            c: 2,
            ..Default::default()
        };
        assert!(mkml_objective(&[0.0; 16], &[0.0; 8], &[1.0], &bank, &p).is_err());
    }

    #[test]
    fn identical_kernels_get_equal_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bank = random_bank(&mut rng, 5, 1);
        let k = bank.kernel(0).to_vec();
        let twin = KernelBank::from_matrices(5, vec![k.clone(), k], vec![1.0, 1.0], 2).unwrap();
        let s = vec![0.2; 25];
        assert_eq!(update_w(&s, &twin, 0.1), vec![0.5, 0.5]);
    }

    #[test]
    fn large_rho_gives_nearly_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bank = random_bank(&mut rng, 6, 3);
        let s = vec![1.0 / 6.0; 36];
        for w in update_w(&s, &bank, 1e6) {
            assert!((w - 1.0 / 3.0).abs() < 1e-3);
        }
    }

    #[test]
    fn identity_similarity_gives_orthonormal_embedding() {
        let n = 5;
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            s[i * n + i] = 1.0;
        }
        let (l, degenerate) = update_l(&s, n, 2, 1e-10).unwrap();
        assert!(degenerate);
        for a in 0..2 {
            for b in 0..2 {
                let dot: f64 = (0..n).map(|i| l[i * 2 + a] * l[i * 2 + b]).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn block_similarity_embedding_spans_block_indicators() {
        let n = 6;
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if (i < 3) == (j < 3) {
                    s[i * n + j] = 1.0 / 3.0;
                }
            }
        }
        let (l, _) = update_l(&s, n, 2, 1e-10).unwrap();
        let ind = |first: bool| -> Vec<f64> {
            (0..n)
                .map(|i| if (i < 3) == first { 1.0 / 3f64.sqrt() } else { 0.0 })
                .collect()
        };
        for v in [ind(true), ind(false)] {
            // Residual of projecting the indicator onto span(L).
            let coef: Vec<f64> = (0..2).map(|k| (0..n).map(|i| l[i * 2 + k] * v[i]).sum()).collect();
            let resid: f64 = (0..n)
                .map(|i| {
                    let proj: f64 = (0..2).map(|k| coef[k] * l[i * 2 + k]).sum();
                    (v[i] - proj).powi(2)
                })
                .sum::<f64>()
                .sqrt();
            assert!(resid < 1e-6);
        }
    }

    #[test]
    fn huge_beta_gives_uniform_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 5;
        let bank = random_bank(&mut rng, n, 2);
        let (l, _) = update_l(&vec![1.0 / n as f64; n * n], n, 2, 1e-10).unwrap();
        let s = update_s(&l, 2, &bank, &[0.5, 0.5], 1e6, 1.0);
        for v in s {
            assert!((v - 0.2).abs() < 1e-3);
        }
    }

    #[test]
    fn one_iteration_is_the_composition_of_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4;
        let bank = random_bank(&mut rng, n, 1);
        let p = MkmlParams {
            c: 2,
            max_iters: 1,
            ..Default::default()
        };
        let model = optimize_similarity(&bank, &p).unwrap();

        let w0 = vec![1.0];
        let k = bank.kernel(0);
        let mut s0 = vec![0.0; n * n];
        for i in 0..n {
            let t: f64 = k[i * n..(i + 1) * n].iter().sum();
            for j in 0..n {
                s0[i * n + j] = k[i * n + j] / t;
            }
        }
        let (l0, _) = update_l(&s0, n, 2, p.eigen_tol).unwrap();
        let s1 = update_s(&l0, 2, &bank, &w0, p.beta, p.gamma);
        let (l1, _) = update_l(&s1, n, 2, p.eigen_tol).unwrap();
        let w1 = update_w(&s1, &bank, p.rho);
        assert_eq!(model.s, s1);
        assert_eq!(model.l, l1);
        assert_eq!(model.w, w1);
        assert_eq!(model.objective_trace.len(), 2);
    }

    #[test]
    fn rank_rejects_out_of_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bank = random_bank(&mut rng, 5, 1);
        let model = optimize_similarity(&bank, &MkmlParams { c: 2, ..Default::default() }).unwrap();
        assert!(rank_atlases_mkml(&model, 5).is_err());
        let r = rank_atlases_mkml(&model, 2).unwrap();
        assert_eq!(r.len(), 4);
        assert!(r.entries.iter().all(|e| e.subject_id != 2));
    }

    #[test]
    fn identical_patches_flag_degenerate_embedding() {
        let pts = vec![vec![0.3, 0.3]; 5];
        let bank = build_kernel_bank(&pts, &[1.0], 2, KernelOptions::default()).unwrap();
        assert!(bank.kernel(0).iter().all(|&v| v == bank.kernel(0)[0]));
        let model = optimize_similarity(&bank, &MkmlParams { c: 2, ..Default::default() }).unwrap();
        // Uniform kernels leave the embedding's eigenspace degenerate, so only
        // the tie-free structure of the ranking is guaranteed.
        assert!(model.eigengap_degenerate);
        let r = rank_atlases_mkml(&model, 0).unwrap();
        let mut ids: Vec<usize> = r.entries.iter().map(|e| e.subject_id).collect();
        ids.sort();
        assert_eq!(ids, vec![1, 2, 3, 4]);
        // With an exact tie in scores the lower index comes first.
        let tied = AtlasRanking::new(
            Strategy::Mkml,
            (1..5).map(|j| RankedAtlas { subject_id: j, score: 0.25 }).collect(),
        );
        assert_eq!(tied.entries.iter().map(|e| e.subject_id).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }
}
