//! Independent reference solvers used as test oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use patchevo::linalg::jacobi_eigen;
use patchevo::mkml::{update_l, update_s, update_w};
use patchevo::similarity::{build_kernel_bank, KernelBank, KernelOptions};
use patchevo::svm::{augmented_gram, solve_dual, SvmSolverParams};
use patchevo::svr::{svr_dual_objective, train_svr, SvrParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rows(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn quad(q: &[f64], x: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += x[i] * q[i * n + j] * x[j];
        }
    }
    0.5 * s
}

/// `½ xᵀQx + cᵀx` minimised over the box `[lo, hi]ⁿ` by accelerated
/// projected gradient with adaptive restart.
pub fn box_qp(q: &[f64], c: &[f64], lo: f64, hi: f64) -> (Vec<f64>, f64) {
    let n = c.len();
    let f = |x: &[f64]| quad(q, x) + c.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    // Gershgorin bound on the largest eigenvalue.
    let lip = (0..n)
        .map(|i| (0..n).map(|j| q[i * n + j].abs()).sum::<f64>())
        .fold(1e-12, f64::max);
    let step = 1.0 / lip;
    let grad = |x: &[f64]| -> Vec<f64> { (0..n).map(|i| c[i] + (0..n).map(|j| q[i * n + j] * x[j]).sum::<f64>()).collect() };
    let mut x = vec![0.0f64.clamp(lo, hi); n];
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut fx = f(&x);
    for it in 0..400_000 {
        if it % 50 == 0 {
            let gx = grad(&x);
            let pg = x
                .iter()
                .zip(&gx)
                .map(|(v, g)| (v - (v - g).clamp(lo, hi)).abs())
                .fold(0.0, f64::max);
            if pg < 1e-13 {
                break;
            }
        }
        let g = grad(&y);
        let nx: Vec<f64> = y.iter().zip(&g).map(|(v, gv)| (v - step * gv).clamp(lo, hi)).collect();
        let nf = f(&nx);
        if nf > fx {
            // Restart the momentum.
            y = x.clone();
            t = 1.0;
            continue;
        }
        let nt = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / nt;
        y = nx.iter().zip(&x).map(|(a, b)| a + mom * (a - b)).collect();
        x = nx;
        t = nt;
        fx = nf;
    }
    (x, fx)
}

/// Minimum of the SVM dual `½ αᵀQα − Σα`, `0 ≤ α ≤ C`.
pub fn svm_dual_oracle(gram: &[f64], labels: &[f64], c: f64) -> f64 {
    let n = labels.len();
    let q: Vec<f64> = (0..n * n).map(|k| labels[k / n] * labels[k % n] * gram[k]).collect();
    box_qp(&q, &vec![-1.0; n], 0.0, c).1
}

/// Minimum of the ε-SVR dual over the split variables `β = α⁺ − α⁻`.
pub fn svr_dual_oracle(rows: &[Vec<f64>], targets: &[f64], c: f64, eps: f64, bias_scale: f64) -> f64 {
    let n = rows.len();
    let g = |i: usize, j: usize| -> f64 {
        rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum::<f64>() + bias_scale * bias_scale
    };
    let m = 2 * n;
    let mut q = vec![0.0; m * m];
    for i in 0..n {
        for j in 0..n {
            let v = g(i, j);
            q[i * m + j] = v;
            q[(i + n) * m + (j + n)] = v;
            q[i * m + (j + n)] = -v;
            q[(i + n) * m + j] = -v;
        }
    }
    let mut lin = vec![0.0; m];
    for i in 0..n {
        lin[i] = eps - targets[i];
        lin[i + n] = eps + targets[i];
    }
    box_qp(&q, &lin, 0.0, c).1
}

/// Minimiser of `f` over the probability simplex in `dim` (3 or 4)
/// coordinates by a grid search that zooms in around the best point.
pub fn simplex_grid_min(dim: usize, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    assert!(dim == 3 || dim == 4);
    let free = dim - 1;
    let mut center = vec![1.0 / dim as f64; free];
    let mut half: f64 = 1.0;
    let mut h: f64 = if dim == 3 { 0.005 } else { 0.02 };
    let mut best = full(&center);
    let mut best_f = f64::INFINITY;
    while h > 2e-6 {
        let steps = (2.0 * half / h).round() as i64;
        let mut idx = vec![0i64; free];
        loop {
            let p: Vec<f64> = (0..free).map(|k| center[k] - half + idx[k] as f64 * h).collect();
            if p.iter().all(|&v| v >= 0.0) && p.iter().sum::<f64>() <= 1.0 + 1e-15 {
                let x = full(&p);
                let v = f(&x);
                if v < best_f {
                    best_f = v;
                    best = x;
                }
            }
            let mut k = 0;
            loop {
                if k == free {
                    break;
                }
                idx[k] += 1;
                if idx[k] <= steps {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == free {
                break;
            }
        }
        center = best[..free].to_vec();
        half = 4.0 * h;
        h /= 8.0;
    }
    best
}

fn full(p: &[f64]) -> Vec<f64> {
    let mut x = p.to_vec();
    x.push((1.0 - p.iter().sum::<f64>()).max(0.0));
    x
}

/// Ascending eigenvalues and matching eigenvectors (columns) of a symmetric
/// matrix via nalgebra.
pub fn dense_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = nalgebra::DMatrix::from_row_slice(n, n, a);
    let e = nalgebra::SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| e.eigenvalues[i].total_cmp(&e.eigenvalues[j]));
    let values = order.iter().map(|&i| e.eigenvalues[i]).collect();
    let vectors = order.iter().map(|&i| e.eigenvectors.column(i).iter().copied().collect()).collect();
    (values, vectors)
}

/// `(A, B)` minimising the smoothed-target sigmoid likelihood on a zooming
/// grid.
pub fn platt_grid(decisions: &[f64], labels: &[f64]) -> (f64, f64) {
    let nll = |a: f64, b: f64| patchevo::classify::platt_nll(decisions, labels, a, b);
    let (mut ca, mut cb) = (0.0, 0.0);
    let mut half = 20.0;
    let mut best = (0.0, 0.0, f64::INFINITY);
    while half > 1e-5 {
        let steps = 80;
        let h = 2.0 * half / steps as f64;
        for i in 0..=steps {
            for j in 0..=steps {
                let a = ca - half + i as f64 * h;
                let b = cb - half + j as f64 * h;
                let v = nll(a, b);
                if v < best.2 {
                    best = (a, b, v);
                }
            }
        }
        ca = best.0;
        cb = best.1;
        half = 4.0 * h;
    }
    (best.0, best.1)
}

fn labels_with_both_classes(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    y[0] = 1.0;
    y[1] = -1.0;
    y
}

/// Solver objective minus oracle objective on a random SVM dual with at
/// most ten points.
pub fn svm_gap(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(4..=10);
    let d = r.random_range(2..=5);
    let rows = random_rows(&mut r, n, d);
    let labels = labels_with_both_classes(&mut r, n);
    let c = [0.1, 1.0, 10.0][r.random_range(0..3)];
    let gram = augmented_gram(&rows, 1.0);
    let sol = solve_dual(&gram, &labels, c, None, SvmSolverParams::default()).unwrap();
    sol.objective - svm_dual_oracle(&gram, &labels, c)
}

/// Solver objective minus oracle objective on a random SVR dual with at
/// most ten rows.
pub fn svr_gap(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(3..=10);
    let d = r.random_range(2..=4);
    let rows = random_rows(&mut r, n, d);
    let targets: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let params = SvrParams {
        c: [0.1, 1.0, 5.0][r.random_range(0..3)],
        epsilon: r.random_range(0.0..0.1),
        max_epochs: 100_000,
        ..Default::default()
    };
    let model = train_svr(&rows, &targets, params).unwrap();
    let ours = svr_dual_objective(&rows, &targets, &model.dual, params.epsilon, params.bias_scale);
    ours - svr_dual_oracle(&rows, &targets, params.c, params.epsilon, params.bias_scale)
}

pub fn random_bank(r: &mut impl Rng, n: usize, m: usize) -> KernelBank {
    let patches = random_rows(r, n, 5);
    let sigmas: Vec<f64> = (0..m).map(|l| 1.0 + l as f64 * 0.5).collect();
    build_kernel_bank(&patches, &sigmas, 1, KernelOptions::default()).unwrap()
}

pub fn random_simplex(r: &mut impl Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| -r.random_range(1e-3..1.0f64).ln()).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Largest coordinate difference between the closed-form `S` rows and a
/// grid search over the 3-simplex, on a 4 × 4 instance.
pub fn s_row_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = 4;
    let c = 2;
    let bank = random_bank(&mut r, n, 3);
    let w = random_simplex(&mut r, 3);
    let s0: Vec<f64> = (0..n).flat_map(|_| random_simplex(&mut r, n)).collect();
    let (l, _) = update_l(&s0, n, c, 1e-12).unwrap();
    let beta = r.random_range(0.2..2.0);
    let gamma = r.random_range(0.2..2.0);
    let s = update_s(&l, c, &bank, &w, beta, gamma);
    let mut worst = 0.0f64;
    for i in 0..n {
        let target: Vec<f64> = (0..n)
            .map(|j| {
                let k: f64 = (0..3).map(|q| w[q] * bank.kernel(q)[i * n + j]).sum();
                let ll: f64 = (0..c).map(|q| l[i * c + q] * l[j * c + q]).sum();
                k + gamma * ll
            })
            .collect();
        let row = simplex_grid_min(4, |x| {
            beta * x.iter().map(|v| v * v).sum::<f64>() - x.iter().zip(&target).map(|(a, b)| a * b).sum::<f64>()
        });
        for j in 0..n {
            worst = worst.max((row[j] - s[i * n + j]).abs());
        }
    }
    worst
}

/// Largest coordinate difference between the softmax weight update and a
/// grid search over the 2-simplex (three 4 × 4 kernels, ρ = 0.1).
pub fn w_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = 4;
    let bank = random_bank(&mut r, n, 3);
    let s: Vec<f64> = (0..n).flat_map(|_| random_simplex(&mut r, n)).collect();
    let rho = 0.1;
    let w = update_w(&s, &bank, rho);
    let fits: Vec<f64> = (0..3)
        .map(|q| bank.kernel(q).iter().zip(&s).map(|(a, b)| a * b).sum())
        .collect();
    let oracle = simplex_grid_min(3, |x| {
        x.iter()
            .zip(&fits)
            .map(|(&wl, &f)| -wl * f + if wl > 0.0 { rho * wl * wl.ln() } else { 0.0 })
            .sum()
    });
    w.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Largest eigenvalue or sign-aligned eigenvector difference between the
/// Jacobi solver and a dense reference on a random symmetric 6 × 6 matrix,
/// together with the projector error of the embedding step.
pub fn eigen_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = 6;
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = r.random_range(-1.0..1.0);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    let ours = jacobi_eigen(&a, n, 1e-14).unwrap();
    let (values, vectors) = dense_eigen(&a, n);
    let mut worst = 0.0f64;
    for k in 0..n {
        worst = worst.max((ours.values[k] - values[k]).abs());
        let v = ours.vector(k);
        let sign = if v.iter().zip(&vectors[k]).map(|(x, y)| x * y).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            worst = worst.max((v[i] - sign * vectors[k][i]).abs());
        }
    }
    // Embedding step on a random row-stochastic S.
    let s: Vec<f64> = (0..n).flat_map(|_| random_simplex(&mut r, n)).collect();
    let c = 2;
    let (l, _) = update_l(&s, n, c, 1e-14).unwrap();
    let mut lap = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let sym = 0.5 * (s[i * n + j] + s[j * n + i]);
            lap[i * n + j] = if i == j { 1.0 - sym } else { -sym };
        }
    }
    let (_, vecs) = dense_eigen(&lap, n);
    for i in 0..n {
        for j in 0..n {
            let p_ours: f64 = (0..c).map(|k| l[i * c + k] * l[j * c + k]).sum();
            let p_ref: f64 = (0..c).map(|k| vecs[k][i] * vecs[k][j]).sum();
            worst = worst.max((p_ours - p_ref).abs());
        }
    }
    worst
}

use patchevo::config::{PipelineConfig, RoiConfig};
use patchevo::synth::{ClassParams, CohortSpec, Ellipsoid};

/// A 10 + 10 subject cohort on a 20³ grid: fast enough for repeated
/// leave-one-out runs.
pub fn small_spec(seed: u64) -> CohortSpec {
    CohortSpec {
        n_per_class: 10,
        dims: [20, 20, 20],
        roi: Ellipsoid {
            center: [9.5, 9.5, 9.5],
            semi_axes: [6.0, 5.0, 4.5],
        },
        disease: ClassParams {
            atrophy_rate_mean: 0.10,
            atrophy_rate_std: 0.02,
            baseline_shrink: 0.06,
        },
        seed,
        ..Default::default()
    }
}

/// Leave-one-out settings sized for [`small_spec`] cohorts.
pub fn small_config(seed: u64) -> PipelineConfig {
    let mut roi = RoiConfig::new("ellipsoid", 1);
    roi.patch_side = 3;
    roi.max_landmarks = 3;
    roi.mkml.c = 2;
    roi.mkml.m = 3;
    let mut cfg = PipelineConfig::new("unused", vec![roi]);
    cfg.svr.max_epochs = 200;
    cfg.seed = seed;
    cfg
}
