//! Small dense linear-algebra helpers: symmetric eigendecomposition (cyclic
//! Jacobi), symmetric inverse square roots, and a 3x3 Cholesky.
//!
//! These run on matrices up to a few hundred rows (Kronecker factors, latent
//! covariances), where the O(n^3) Jacobi sweep is plenty fast and fully
//! deterministic.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors in columns, so
/// `a = v * diag(l) * v^T`. Eigenvalues are unsorted.
pub fn sym_eigen(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Input(format!(
            "sym_eigen requires a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    if n <= 1 {
        return Ok((m.diag().to_owned(), v));
    }

    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + frobenius(&m)) {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok((m.diag().to_owned(), v))
}

/// Inverse symmetric square root `(a)^(-1/2)` of a symmetric positive
/// definite matrix. Fails if any eigenvalue is not strictly positive.
pub fn sym_inv_sqrt(a: &Array2<f64>, context: &str) -> Result<Array2<f64>> {
    let (vals, vecs) = sym_eigen(a)?;
    let scale = frobenius(a).max(1.0);
    let mut d = Array1::<f64>::zeros(vals.len());
    for (i, &l) in vals.iter().enumerate() {
        if l <= scale * 1e-12 {
            return Err(Error::Numerical(format!(
                "{context}: factor is not positive definite (eigenvalue {l:.3e})"
            )));
        }
        d[i] = 1.0 / l.sqrt();
    }
    // v * diag(d) * v^T
    let mut vd = vecs.clone();
    for (j, mut col) in vd.columns_mut().into_iter().enumerate() {
        col *= d[j];
    }
    Ok(vd.dot(&vecs.t()))
}

/// Frobenius norm.
pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative Frobenius distance `|a - b|_F / |b|_F`.
pub fn rel_frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mut num = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        num += d * d;
    }
    num.sqrt() / frobenius(b).max(1e-300)
}

/// Cholesky factor (lower triangular) of a 3x3 SPD matrix.
pub fn cholesky3(a: &[[f64; 3]; 3]) -> Result<[[f64; 3]; 3]> {
    let mut l = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::Numerical(
                        "channel covariance is not positive definite".into(),
                    ));
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Inverse of a 3x3 matrix.
pub fn invert3(m: &[[f64; 3]; 3]) -> Result<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-300 {
        return Err(Error::Numerical("color matrix is singular".into()));
    }
    let inv_det = 1.0 / det;
    let mut inv = [[0.0f64; 3]; 3];
    inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
    inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
    inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
    inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
    inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
    inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
    inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::Rng;

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // A = Q diag(5, 2, 1) Q^T for a hand-built rotation Q.
        let a = arr2(&[[4.0, 1.0, 0.5], [1.0, 3.0, 0.25], [0.5, 0.25, 2.0]]);
        let (vals, vecs) = sym_eigen(&a).unwrap();
        // reconstruct
        let mut rec = Array2::<f64>::zeros((3, 3));
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    rec[[i, j]] += vals[k] * vecs[[i, k]] * vecs[[j, k]];
                }
            }
        }
        assert!(rel_frobenius(&rec, &a) < 1e-12);
    }

    #[test]
    fn inv_sqrt_squares_to_inverse() {
        let mut rng = crate::rng::rng_from_seed(11);
        let n = 12;
        let mut b = Array2::<f64>::zeros((n, n));
        for v in b.iter_mut() {
            *v = rng.gen::<f64>() - 0.5;
        }
        let a = b.dot(&b.t()) + Array2::<f64>::eye(n) * 0.5;
        let s = sym_inv_sqrt(&a, "test").unwrap();
        let prod = s.dot(&a).dot(&s);
        assert!(rel_frobenius(&prod, &Array2::eye(n)) < 1e-10);
    }

    #[test]
    fn cholesky_roundtrip() {
        let a = [[2.0, 0.5, 0.1], [0.5, 1.5, 0.2], [0.1, 0.2, 1.0]];
        let l = cholesky3(&a).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += l[i][k] * l[j][k];
                }
                assert!((s - a[i][j]).abs() < 1e-12);
            }
        }
        let inv = invert3(&l).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += inv[i][k] * l[k][j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-12);
            }
        }
    }
}
