//! Small dense kernels: a cyclic Jacobi eigensolver for symmetric matrices and
//! Euclidean projection onto the probability simplex.

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub n: usize,
    /// Ascending.
    pub values: Vec<f64>,
    /// Row-major `n × n`; column `k` is the eigenvector of `values[k]`.
    pub vectors: Vec<f64>,
    pub sweeps: usize,
}

impl SymmetricEigen {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.vectors[i * self.n + k]).collect()
    }
}

fn off_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
/// `tol · ‖A‖_F`.
///
/// Eigenpairs are returned in ascending eigenvalue order, ties broken by the
/// diagonal position the eigenvalue converged at.
pub fn jacobi_eigen(matrix: &[f64], n: usize, tol: f64) -> Result<SymmetricEigen> {
    if matrix.len() != n * n {
        return Err(Error::invalid("matrix size does not match n"));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            iteration: 0,
            message: "eigen input contains non-finite entries".into(),
        });
    }
    let mut a = matrix.to_vec();
    // Enforce exact symmetry.
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = m;
            a[j * n + i] = m;
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let fro = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let threshold = tol * fro.max(f64::MIN_POSITIVE);
    let max_sweeps = 100;
    let mut sweeps = 0;
    while off_norm(&a, n) > threshold {
        if sweeps >= max_sweeps {
            return Err(Error::Numerical {
                iteration: sweeps,
                message: "jacobi eigensolver did not converge".into(),
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (k, &src) in order.iter().enumerate() {
        // Deterministic sign: largest-magnitude component positive.
        let mut best = 0;
        for i in 0..n {
            if v[i * n + src].abs() > v[best * n + src].abs() + 1e-12 {
                best = i;
            }
        }
        let sign = if v[best * n + src] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[i * n + k] = sign * v[i * n + src];
        }
    }
    Ok(SymmetricEigen {
        n,
        values,
        vectors,
        sweeps,
    })
}

/// Euclidean projection of `v` onto `{x : x ≥ 0, Σx = 1}` by sorting and
/// thresholding.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix_is_its_own_decomposition() {
        let a = [3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0];
        let e = jacobi_eigen(&a, 3, 1e-10).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0, 3.0]);
        assert_eq!(e.vector(0), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn two_by_two_closed_form() {
        let a = [2.0, 1.0, 1.0, 2.0];
        let e = jacobi_eigen(&a, 2, 1e-12).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-12);
        assert!((e.values[1] - 3.0).abs() < 1e-12);
        let v1 = e.vector(1);
        assert!((v1[0] - v1[1]).abs() < 1e-12);
    }

    #[test]
    fn reconstructs_random_symmetric_matrix() {
        let n = 7;
        let mut a = vec![0.0; n * n];
        let mut x = 0.37f64;
        for i in 0..n {
            for j in i..n {
                x = (x * 3.9 * (1.0 - x)).clamp(1e-6, 1.0 - 1e-6);
                a[i * n + j] = x - 0.5;
                a[j * n + i] = x - 0.5;
            }
        }
        let e = jacobi_eigen(&a, n, 1e-12).unwrap();
        for i in 0..n {
            for j in 0..n {
                let r: f64 = (0..n).map(|k| e.vectors[i * n + k] * e.values[k] * e.vectors[j * n + k]).sum();
                assert!((r - a[i * n + j]).abs() < 1e-10);
                let o: f64 = (0..n).map(|k| e.vectors[k * n + i] * e.vectors[k * n + j]).sum();
                assert!((o - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(jacobi_eigen(&[f64::NAN], 1, 1e-10).is_err());
    }

    #[test]
    fn simplex_projection_examples() {
        let p = project_simplex(&[0.5, 0.5, 0.5]);
        for x in &p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        assert_eq!(project_simplex(&[0.2, 0.8]), vec![0.2, 0.8]);
        let q = project_simplex(&[-1.0, 0.3, 0.1]);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(q[0], 0.0);
    }
}
