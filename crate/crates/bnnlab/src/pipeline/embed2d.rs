//! Two-dimensional embeddings of latent sets: exact-gradient t-SNE for small
//! sets (N <= 2000) and a PCA fallback/alternative.

use crate::error::{Error, Result};
use crate::linalg::sym_eigen;
use crate::rng::rng_from_seed;
use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Embed2dMethod {
    Tsne,
    Pca,
}

pub const TSNE_MAX_POINTS: usize = 2000;

/// Pairwise squared Euclidean distances.
fn pairwise_sq(latents: &Array2<f64>) -> Array2<f64> {
    let n = latents.nrows();
    let mut d = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = &latents.row(i) - &latents.row(j);
            let v = diff.dot(&diff);
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Binary search for the Gaussian bandwidth matching `perplexity`, then the
/// symmetrized joint probabilities.
fn joint_probabilities(sq_dists: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let n = sq_dists.nrows();
    let target_entropy = perplexity.ln();
    let mut p = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let mut beta_lo = 0.0f64;
        let mut beta_hi = f64::INFINITY;
        let mut beta = 1.0f64;
        let mut row = Array1::<f64>::zeros(n);
        for _ in 0..64 {
            let mut sum = 0.0;
            for j in 0..n {
                row[j] = if i == j { 0.0 } else { (-beta * sq_dists[[i, j]]).exp() };
                sum += row[j];
            }
            if sum <= 0.0 {
                break;
            }
            let mut entropy = 0.0;
            for j in 0..n {
                if row[j] > 0.0 {
                    let pj = row[j] / sum;
                    entropy -= pj * pj.ln();
                }
            }
            let diff = entropy - target_entropy;
            if diff.abs() < 1e-7 {
                break;
            }
            if diff > 0.0 {
                beta_lo = beta;
                beta = if beta_hi.is_finite() { (beta + beta_hi) / 2.0 } else { beta * 2.0 };
            } else {
                beta_hi = beta;
                beta = (beta + beta_lo) / 2.0;
            }
        }
        let sum: f64 = row.sum();
        if sum > 0.0 {
            for j in 0..n {
                p[[i, j]] = row[j] / sum;
            }
        }
    }
    // symmetrize
    let mut joint = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            joint[[i, j]] = (p[[i, j]] + p[[j, i]]) / (2.0 * n as f64);
        }
    }
    joint.mapv_inplace(|v| v.max(1e-12));
    joint
}

/// Exact-gradient t-SNE with early exaggeration and momentum.
fn tsne(latents: &Array2<f64>, perplexity: f64, seed: u64) -> Result<Array2<f64>> {
    let n = latents.nrows();
    if n > TSNE_MAX_POINTS {
        return Err(Error::Input(format!(
            "exact t-SNE is capped at {TSNE_MAX_POINTS} points; use pca for {n}"
        )));
    }
    if perplexity >= n as f64 {
        return Err(Error::Input(format!(
            "perplexity {perplexity} must be below the number of points {n}"
        )));
    }
    if !(perplexity > 0.0) {
        return Err(Error::Input("perplexity must be positive".into()));
    }
    let p = joint_probabilities(&pairwise_sq(latents), perplexity);

    let mut rng = rng_from_seed(seed);
    let init = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y = Array2::<f64>::from_shape_fn((n, 2), |_| init.sample(&mut rng));
    let mut velocity = Array2::<f64>::zeros((n, 2));
    let iters = 700;
    let exaggeration_until = 100;
    let lr = (n as f64 / 12.0).clamp(50.0, 200.0);

    for iter in 0..iters {
        let exaggeration = if iter < exaggeration_until { 12.0 } else { 1.0 };
        if iter == exaggeration_until {
            // drop the momentum built up during the exaggeration phase
            velocity.fill(0.0);
        }
        // low-dimensional affinities (Student t, one degree of freedom)
        let mut num = Array2::<f64>::zeros((n, n));
        let mut z = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dy0 = y[[i, 0]] - y[[j, 0]];
                let dy1 = y[[i, 1]] - y[[j, 1]];
                let q = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                num[[i, j]] = q;
                num[[j, i]] = q;
                z += 2.0 * q;
            }
        }
        let z = z.max(1e-12);
        let momentum = if iter < 250 { 0.5 } else { 0.8 };
        for i in 0..n {
            let mut g = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[[i, j]] / z;
                let coeff = 4.0 * (exaggeration * p[[i, j]] - q.max(1e-12)) * num[[i, j]];
                g[0] += coeff * (y[[i, 0]] - y[[j, 0]]);
                g[1] += coeff * (y[[i, 1]] - y[[j, 1]]);
            }
            for d in 0..2 {
                velocity[[i, d]] = momentum * velocity[[i, d]] - lr * g[d];
            }
        }
        y += &velocity;
        // recenter
        for d in 0..2 {
            let mean: f64 = y.column(d).mean().unwrap_or(0.0);
            y.column_mut(d).mapv_inplace(|v| v - mean);
        }
    }
    Ok(y)
}

/// PCA projection onto the top two principal components.
fn pca2(latents: &Array2<f64>) -> Result<Array2<f64>> {
    let n = latents.nrows();
    let dim = latents.ncols();
    let mut centered = latents.clone();
    for d in 0..dim {
        let mean: f64 = centered.column(d).mean().unwrap_or(0.0);
        centered.column_mut(d).mapv_inplace(|v| v - mean);
    }
    let cov = centered.t().dot(&centered) / n.max(1) as f64;
    let (vals, vecs) = sym_eigen(&cov)?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut proj = Array2::<f64>::zeros((dim, 2));
    for (col, &idx) in order.iter().take(2).enumerate() {
        proj.column_mut(col).assign(&vecs.column(idx));
    }
    Ok(centered.dot(&proj))
}

/// 2-D embedding of latent vectors. t-SNE uses the exact gradient and is
/// deterministic per seed; sets larger than [`TSNE_MAX_POINTS`] must use PCA.
pub fn embed_2d(
    latents: &Array2<f64>,
    method: Embed2dMethod,
    perplexity: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    if latents.nrows() < 3 {
        return Err(Error::Input("2-D embedding needs at least 3 points".into()));
    }
    match method {
        Embed2dMethod::Tsne => tsne(latents, perplexity, seed),
        Embed2dMethod::Pca => pca2(latents),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn dist_matrix(pts: &Array2<f64>) -> Array2<f64> {
        pairwise_sq(pts).mapv(f64::sqrt)
    }

    #[test]
    fn pca_preserves_planar_distances() {
        // points in a 2-D subspace of R^5: distances must be reproduced
        let mut rng = rng_from_seed(3);
        let n = 12;
        let basis_a: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let basis_b: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut pts = Array2::<f64>::zeros((n, 5));
        for i in 0..n {
            let u = rng.gen_range(-2.0..2.0);
            let v = rng.gen_range(-2.0..2.0);
            for d in 0..5 {
                pts[[i, d]] = u * basis_a[d] + v * basis_b[d];
            }
        }
        let emb = embed_2d(&pts, Embed2dMethod::Pca, 0.0, 0).unwrap();
        let d_in = dist_matrix(&pts);
        let d_out = dist_matrix(&emb);
        let max_err = (&d_in - &d_out).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_err < 1e-6, "max distance error {max_err}");
    }

    #[test]
    fn tsne_three_equidistant_points_stay_equidistant() {
        // equilateral triangle in 4 dims
        let mut pts = Array2::<f64>::zeros((3, 4));
        pts[[0, 0]] = 1.0;
        pts[[1, 1]] = 1.0;
        pts[[2, 2]] = 1.0;
        let emb = embed_2d(&pts, Embed2dMethod::Tsne, 2.0, 5).unwrap();
        let d = dist_matrix(&emb);
        let d01 = d[[0, 1]];
        let d02 = d[[0, 2]];
        let d12 = d[[1, 2]];
        let mean = (d01 + d02 + d12) / 3.0;
        for v in [d01, d02, d12] {
            assert!((v - mean).abs() / mean < 0.05, "distances {d01} {d02} {d12}");
        }
    }

    #[test]
    fn tsne_is_deterministic_per_seed() {
        let mut rng = rng_from_seed(9);
        let pts = Array2::from_shape_fn((10, 6), |_| rng.gen_range(-1.0..1.0));
        let a = embed_2d(&pts, Embed2dMethod::Tsne, 5.0, 2).unwrap();
        let b = embed_2d(&pts, Embed2dMethod::Tsne, 5.0, 2).unwrap();
        assert_eq!(a, b);
        let c = embed_2d(&pts, Embed2dMethod::Tsne, 5.0, 3).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn tsne_rejects_large_perplexity() {
        let pts = Array2::<f64>::zeros((5, 3));
        assert!(embed_2d(&pts, Embed2dMethod::Tsne, 5.0, 0).is_err());
    }

    #[test]
    fn tsne_separates_two_clusters() {
        let mut rng = rng_from_seed(12);
        let mut pts = Array2::<f64>::zeros((20, 8));
        for i in 0..20 {
            let offset = if i < 10 { 0.0 } else { 6.0 };
            for d in 0..8 {
                pts[[i, d]] = offset + rng.gen_range(-0.3..0.3);
            }
        }
        let emb = embed_2d(&pts, Embed2dMethod::Tsne, 5.0, 7).unwrap();
        // mean within-cluster distance well below between-cluster distance
        let d = dist_matrix(&emb);
        let mut within = 0.0;
        let mut wn = 0.0;
        let mut between = 0.0;
        let mut bn = 0.0;
        for i in 0..20 {
            for j in (i + 1)..20 {
                if (i < 10) == (j < 10) {
                    within += d[[i, j]];
                    wn += 1.0;
                } else {
                    between += d[[i, j]];
                    bn += 1.0;
                }
            }
        }
        assert!(between / bn > 2.0 * within / wn);
    }
}
