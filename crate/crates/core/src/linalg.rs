//! Small dense and matrix-free solvers used across the crate.

use crate::error::{Error, Result};
use crate::scalar::{dot, Real};

/// Eigen-decomposition of a symmetric `n × n` row-major matrix by cyclic
/// Jacobi rotations. Returns eigenvalues in non-increasing order and the
/// matching unit eigenvectors as columns of a row-major `n × n` matrix; each
/// vector is signed so that its largest-magnitude entry is positive.
pub fn symmetric_eigen<T: Real>(a: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let scale = m.iter().fold(T::zero(), |acc, x| acc.max(x.abs()));
    if scale > T::zero() {
        for _sweep in 0..64 {
            let off = (0..n)
                .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
                .fold(T::zero(), |acc, (p, q)| acc + m[p * n + q] * m[p * n + q]);
            if off.sqrt() <= T::epsilon() * scale {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = m[p * n + q];
                    if apq == T::zero() {
                        continue;
                    }
                    let theta = (m[q * n + q] - m[p * n + p]) / (T::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[k * n + p];
                        let mkq = m[k * n + q];
                        m[k * n + p] = c * mkp - s * mkq;
                        m[k * n + q] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[p * n + k];
                        let mqk = m[q * n + k];
                        m[p * n + k] = c * mpk - s * mqk;
                        m[q * n + k] = s * mpk + c * mqk;
                    }
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * vkq;
                        v[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        m[y * n + y]
            .partial_cmp(&m[x * n + x])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = order.iter().map(|&j| m[j * n + j]).collect();
    let mut vecs = vec![T::zero(); n * n];
    for (col, &j) in order.iter().enumerate() {
        let mut lead = 0;
        for r in 0..n {
            if v[r * n + j].abs() > v[lead * n + j].abs() {
                lead = r;
            }
        }
        let sign = if v[lead * n + j] < T::zero() {
            -T::one()
        } else {
            T::one()
        };
        for r in 0..n {
            vecs[r * n + col] = sign * v[r * n + j];
        }
    }
    (vals, vecs)
}

/// Outcome of [`conjugate_gradient`].
#[derive(Debug, Clone)]
pub struct CgSolution<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    pub relative_residual: T,
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// semi-definite operator. Entries with `inv_diag == 0` are frozen at zero.
pub fn conjugate_gradient<T: Real>(
    apply: impl Fn(&[T], &mut [T]),
    inv_diag: &[T],
    b: &[T],
    rel_tol: T,
    max_iter: usize,
) -> Result<CgSolution<T>> {
    let n = b.len();
    let mut x = vec![T::zero(); n];
    let mut r: Vec<T> = b
        .iter()
        .zip(inv_diag)
        .map(|(&bi, &di)| if di == T::zero() { T::zero() } else { bi })
        .collect();
    let b_norm = dot(&r, &r).sqrt();
    if b_norm == T::zero() {
        return Ok(CgSolution {
            x,
            iterations: 0,
            relative_residual: T::zero(),
        });
    }
    let mut z: Vec<T> = r.iter().zip(inv_diag).map(|(a, b)| *a * *b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![T::zero(); n];
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            return Err(Error::SolverDiverged {
                iterations: it,
                residual: (dot(&r, &r).sqrt() / b_norm).as_f64(),
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = dot(&r, &r).sqrt() / b_norm;
        if res <= rel_tol {
            return Ok(CgSolution {
                x,
                iterations: it,
                relative_residual: res,
            });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverDiverged {
        iterations: max_iter,
        residual: (dot(&r, &r).sqrt() / b_norm).as_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn jacobi_matches_nalgebra(entries in proptest::collection::vec(-3.0f64..3.0, 9)) {
            let n = 3;
            let mut a = vec![0.0; 9];
            for i in 0..n {
                for j in 0..n {
                    a[i * n + j] = entries[i * n + j] + entries[j * n + i];
                }
            }
            let (vals, vecs) = symmetric_eigen(&a, n);
            let mut oracle: Vec<f64> = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &a)).eigenvalues.iter().copied().collect();
            oracle.sort_by(|x, y| y.partial_cmp(x).unwrap());
            for (x, y) in vals.iter().zip(&oracle) {
                prop_assert!((x - y).abs() < 1e-10);
            }
            for c in 0..n {
                for r in 0..n {
                    let av: f64 = (0..n).map(|k| a[r * n + k] * vecs[k * n + c]).sum();
                    prop_assert!((av - vals[c] * vecs[r * n + c]).abs() < 1e-9);
                }
                for c2 in 0..n {
                    let ip: f64 = (0..n).map(|r| vecs[r * n + c] * vecs[r * n + c2]).sum();
                    let expected = if c == c2 { 1.0 } else { 0.0 };
                    prop_assert!((ip - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn cg_solves_tridiagonal() {
        let n = 50;
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                y[i] = 3.0 * x[i]
                    - if i > 0 { x[i - 1] } else { 0.0 }
                    - if i + 1 < n { x[i + 1] } else { 0.0 };
            }
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let sol = conjugate_gradient(apply, &vec![1.0 / 3.0; n], &b, 1e-12, 500).unwrap();
        let mut y = vec![0.0; n];
        apply(&sol.x, &mut y);
        assert!(y.iter().zip(&b).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(matches!(
            conjugate_gradient(apply, &vec![1.0 / 3.0; n], &b, 1e-12, 2),
            Err(Error::SolverDiverged { .. })
        ));
    }
}
