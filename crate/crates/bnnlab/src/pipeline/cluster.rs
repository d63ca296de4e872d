//! KMeans (Lloyd iterations with kmeans++ style seeding) and silhouette-based
//! cluster-count selection over latent concept vectors.

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

const MAX_LLOYD_ITERS: usize = 200;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KmeansResult {
    pub assignments: Vec<usize>,
    /// `[k, dim]` centroid matrix.
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every Lloyd iteration (nonincreasing).
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd iterations from kmeans++ seeding until the assignment fixpoint or an
/// iteration cap. Deterministic per seed.
pub fn cluster_kmeans(latents: &Array2<f64>, k: usize, seed: u64) -> Result<KmeansResult> {
    let n = latents.nrows();
    let dim = latents.ncols();
    if k < 1 {
        return Err(Error::Input("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Input(format!("k = {k} exceeds the number of latents {n}")));
    }
    let rows: Vec<&[f64]> = (0..n)
        .map(|i| latents.row(i).to_slice().expect("contiguous"))
        .collect();

    // kmeans++ seeding
    let mut rng = rng_from_seed(seed);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(rows[rng.gen_range(0..n)].to_vec());
    let mut best_d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = best_d2.iter().sum();
        let next = if total <= 0.0 {
            // all points coincide with chosen centroids; pick deterministically
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in best_d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        centroids.push(rows[next].to_vec());
        for (i, r) in rows.iter().enumerate() {
            let d = sq_dist(r, centroids.last().expect("just pushed"));
            if d < best_d2[i] {
                best_d2[i] = d;
            }
        }
    }

    let mut assignments = vec![0usize; n];
    let mut inertia_trace = Vec::new();
    let mut iterations = 0;
    loop {
        // assignment step
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, r) in rows.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, cent) in centroids.iter().enumerate() {
                let d = sq_dist(r, cent);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
            inertia += best_d;
        }
        inertia_trace.push(inertia);
        if (!changed && iterations > 0) || iterations >= MAX_LLOYD_ITERS {
            break;
        }
        iterations += 1;
        // update step; empty clusters take the point farthest from its centroid
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, r) in rows.iter().enumerate() {
            counts[assignments[i]] += 1;
            for (s, v) in sums[assignments[i]].iter_mut().zip(r.iter()) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(rows[a], &centroids[assignments[a]])
                            .partial_cmp(&sq_dist(rows[b], &centroids[assignments[b]]))
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .expect("nonempty");
                centroids[c] = rows[far].to_vec();
            } else {
                for (d, s) in centroids[c].iter_mut().zip(&sums[c]) {
                    *d = s / counts[c] as f64;
                }
            }
        }
    }
    let inertia = *inertia_trace.last().expect("at least one iteration");
    Ok(KmeansResult { assignments, centroids, inertia, iterations, inertia_trace })
}

/// Mean silhouette score over all samples (Euclidean distance).
pub fn silhouette_score(latents: &Array2<f64>, assignments: &[usize], k: usize) -> Result<f64> {
    let n = latents.nrows();
    if k < 2 || k >= n {
        return Err(Error::Input("silhouette needs 2 <= k < n".into()));
    }
    let rows: Vec<&[f64]> = (0..n)
        .map(|i| latents.row(i).to_slice().expect("contiguous"))
        .collect();
    let mut counts = vec![0usize; k];
    for &a in assignments {
        counts[a] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        let own = assignments[i];
        let mut dist_sum = vec![0.0f64; k];
        for j in 0..n {
            if i != j {
                dist_sum[assignments[j]] += sq_dist(rows[i], rows[j]).sqrt();
            }
        }
        let a = if counts[own] > 1 {
            dist_sum[own] / (counts[own] - 1) as f64
        } else {
            0.0
        };
        let mut b = f64::INFINITY;
        for c in 0..k {
            if c != own && counts[c] > 0 {
                b = b.min(dist_sum[c] / counts[c] as f64);
            }
        }
        let s = if counts[own] > 1 {
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        } else {
            0.0
        };
        total += s;
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KSelection {
    pub recommended_k: usize,
    /// `(k, silhouette)` per candidate.
    pub scores: Vec<(usize, f64)>,
    /// Set when the best silhouette is below 0.25: the clustering structure
    /// is weak and a manual choice should be preferred.
    pub low_confidence: bool,
}

/// Evaluates silhouette scores over a k range and recommends the argmax.
/// A manual override downstream always wins; this is only the default.
pub fn select_k(latents: &Array2<f64>, k_range: std::ops::RangeInclusive<usize>, seed: u64) -> Result<KSelection> {
    let n = latents.nrows();
    let lo = *k_range.start();
    let hi = *k_range.end();
    if lo < 2 || hi >= n || lo > hi {
        return Err(Error::Input(format!(
            "k range {lo}..={hi} must satisfy 2 <= lo <= hi <= n-1 (n = {n})"
        )));
    }
    // degenerate: all latents identical
    let first = latents.row(0);
    if (0..n).all(|i| latents.row(i) == first) {
        return Err(Error::UndefinedSilhouette("all latents are identical".into()));
    }
    let mut scores = Vec::new();
    for k in lo..=hi {
        let res = cluster_kmeans(latents, k, crate::rng::child_seed(seed, "select-k", k as u64))?;
        let s = silhouette_score(latents, &res.assignments, k)?;
        scores.push((k, s));
    }
    let (recommended_k, best) = scores
        .iter()
        .cloned()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        .expect("nonempty range");
    Ok(KSelection { recommended_k, scores, low_confidence: best < 0.25 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    fn blobs(centers: &[(f64, f64)], per: usize, spread: f64, seed: u64) -> Array2<f64> {
        let mut rng = rng_from_seed(seed);
        let mut m = Array2::<f64>::zeros((centers.len() * per, 2));
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for i in 0..per {
                m[[c * per + i, 0]] = cx + rng.gen_range(-spread..spread);
                m[[c * per + i, 1]] = cy + rng.gen_range(-spread..spread);
            }
        }
        m
    }

    #[test]
    fn k1_centroid_is_global_mean() {
        let data = blobs(&[(0.0, 0.0), (4.0, 4.0)], 10, 0.5, 1);
        let res = cluster_kmeans(&data, 1, 7).unwrap();
        let mean0: f64 = data.column(0).mean().unwrap();
        let mean1: f64 = data.column(1).mean().unwrap();
        assert!((res.centroids[0][0] - mean0).abs() < 1e-12);
        assert!((res.centroids[0][1] - mean1).abs() < 1e-12);
    }

    #[test]
    fn separated_blobs_recovered_exactly() {
        let data = blobs(&[(0.0, 0.0), (10.0, 10.0)], 12, 0.4, 2);
        let res = cluster_kmeans(&data, 2, 3).unwrap();
        let first = res.assignments[0];
        assert!(res.assignments[..12].iter().all(|&a| a == first));
        assert!(res.assignments[12..].iter().all(|&a| a != first));
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let data = blobs(&[(0.0, 0.0), (5.0, 0.0), (0.0, 5.0)], 2, 0.3, 3);
        let res = cluster_kmeans(&data, 6, 4).unwrap();
        assert!(res.inertia < 1e-12, "inertia {}", res.inertia);
    }

    #[test]
    fn k_above_n_is_input_error() {
        let data = blobs(&[(0.0, 0.0)], 3, 0.1, 5);
        assert!(cluster_kmeans(&data, 4, 0).is_err());
    }

    #[test]
    fn inertia_is_nonincreasing() {
        let data = blobs(&[(0.0, 0.0), (3.0, 1.0), (6.0, 5.0)], 30, 1.5, 6);
        let res = cluster_kmeans(&data, 3, 11).unwrap();
        for w in res.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "inertia increased: {:?}", res.inertia_trace);
        }
    }

    #[test]
    fn kmeans_is_deterministic() {
        let data = blobs(&[(0.0, 0.0), (4.0, 4.0)], 15, 1.0, 7);
        let a = cluster_kmeans(&data, 2, 9).unwrap();
        let b = cluster_kmeans(&data, 2, 9).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.inertia, b.inertia);
    }

    #[test]
    fn select_k_finds_three_blobs() {
        let data = blobs(&[(0.0, 0.0), (8.0, 0.0), (4.0, 7.0)], 15, 0.6, 8);
        let sel = select_k(&data, 2..=6, 1).unwrap();
        assert_eq!(sel.recommended_k, 3);
        assert!(!sel.low_confidence);
    }

    #[test]
    fn select_k_flags_weak_structure() {
        // one diffuse high-dimensional cloud: whatever k wins, confidence
        // should be low
        let mut rng = rng_from_seed(9);
        let data = Array2::from_shape_fn((60, 12), |_| rng.gen_range(-1.0..1.0));
        let sel = select_k(&data, 2..=5, 2).unwrap();
        assert!(sel.low_confidence, "scores: {:?}", sel.scores);
    }

    #[test]
    fn select_k_single_value_range() {
        let data = blobs(&[(0.0, 0.0), (9.0, 9.0)], 10, 0.5, 10);
        let sel = select_k(&data, 2..=2, 3).unwrap();
        assert_eq!(sel.recommended_k, 2);
        assert_eq!(sel.scores.len(), 1);
    }

    #[test]
    fn select_k_rejects_identical_latents() {
        let data = Array2::from_elem((10, 3), 1.5);
        assert!(matches!(
            select_k(&data, 2..=4, 0),
            Err(Error::UndefinedSilhouette(_))
        ));
    }
}
