//! Normalized-temperature cross-entropy (NT-Xent) contrastive loss.
//!
//! For each ordered positive pair (two views of the same origin) the loss is
//! `-log( exp(sim+/tau) / sum_negatives exp(sim-/tau) )`, where the negatives
//! of an anchor are all views of *different* origins in the batch — views of
//! the same origin never appear in the denominator. With all embeddings
//! coincident the per-anchor value is `ln(#negatives)`.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};

fn normalized_rows(latents: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let n = latents.nrows();
    let mut norms = Array1::<f64>::zeros(n);
    let mut unit = latents.clone();
    for (i, mut row) in unit.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Numerical(format!("latent vector {i} has zero or invalid norm")));
        }
        norms[i] = norm;
        row.mapv_inplace(|v| v / norm);
    }
    Ok((unit, norms))
}

fn check_batch(latents: &Array2<f64>, origins: &[usize]) -> Result<()> {
    if latents.nrows() != origins.len() {
        return Err(Error::Input("latent/origin count mismatch".into()));
    }
    let mut distinct = std::collections::BTreeSet::new();
    for &o in origins {
        distinct.insert(o);
    }
    if distinct.len() < 2 {
        return Err(Error::DegenerateBatch(
            "NT-Xent needs at least two distinct origins (no negatives exist)".into(),
        ));
    }
    Ok(())
}

/// Loss value only.
pub fn nt_xent_loss(latents: &Array2<f64>, origins: &[usize], tau: f64) -> Result<f64> {
    nt_xent_loss_grad(latents, origins, tau).map(|(l, _)| l)
}

/// Loss plus gradient with respect to the latent rows.
pub fn nt_xent_loss_grad(
    latents: &Array2<f64>,
    origins: &[usize],
    tau: f64,
) -> Result<(f64, Array2<f64>)> {
    if !(tau > 0.0) {
        return Err(Error::Input("temperature must be positive".into()));
    }
    check_batch(latents, origins)?;
    let (unit, norms) = normalized_rows(latents)?;
    let n = latents.nrows();
    let sim = unit.dot(&unit.t()); // cosine similarities

    // gradient accumulates with respect to sim entries first
    let mut d_sim = Array2::<f64>::zeros((n, n));
    let mut loss = 0.0;
    let mut pairs = 0usize;

    for anchor in 0..n {
        // log-sum-exp over the anchor's negatives
        let mut max = f64::NEG_INFINITY;
        for k in 0..n {
            if origins[k] != origins[anchor] {
                max = max.max(sim[[anchor, k]] / tau);
            }
        }
        let mut z = 0.0;
        for k in 0..n {
            if origins[k] != origins[anchor] {
                z += ((sim[[anchor, k]] / tau) - max).exp();
            }
        }
        let lse = max + z.ln();

        let mut anchor_pairs = 0usize;
        for pos in 0..n {
            if pos != anchor && origins[pos] == origins[anchor] {
                loss += -sim[[anchor, pos]] / tau + lse;
                d_sim[[anchor, pos]] += -1.0 / tau;
                anchor_pairs += 1;
                pairs += 1;
            }
        }
        if anchor_pairs > 0 {
            // the softmax weights over negatives enter once per positive pair
            for k in 0..n {
                if origins[k] != origins[anchor] {
                    let w = ((sim[[anchor, k]] / tau) - max).exp() / z;
                    d_sim[[anchor, k]] += anchor_pairs as f64 * w / tau;
                }
            }
        }
    }
    if pairs == 0 {
        return Err(Error::Input(
            "no positive pairs: every origin has a single view".into(),
        ));
    }
    let scale = 1.0 / pairs as f64;
    loss *= scale;

    // propagate d_sim through the cosine normalization:
    // sim(i,k) = u_i . u_k, d z_i = sum_k c_ik (u_k - sim_ik u_i) / |z_i|
    let mut grad = Array2::<f64>::zeros((n, latents.ncols()));
    for i in 0..n {
        for k in 0..n {
            if i == k {
                continue;
            }
            let c_ik = d_sim[[i, k]] * scale;
            let c_ki = d_sim[[k, i]] * scale;
            let c = c_ik + c_ki; // z_i appears as anchor row i and as partner in row k
            if c == 0.0 {
                continue;
            }
            let s = sim[[i, k]];
            for d in 0..latents.ncols() {
                grad[[i, d]] += c * (unit[[k, d]] - s * unit[[i, d]]) / norms[i];
            }
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::Rng;

    #[test]
    fn single_origin_is_degenerate() {
        let z = arr2(&[[1.0, 0.0], [0.9, 0.1]]);
        let r = nt_xent_loss(&z, &[0, 0], 0.5);
        assert!(matches!(r, Err(Error::DegenerateBatch(_))));
    }

    #[test]
    fn zero_vector_is_numerical_error() {
        let z = arr2(&[[1.0, 0.0], [0.0, 0.0], [0.5, 0.5], [0.2, 0.8]]);
        let r = nt_xent_loss(&z, &[0, 0, 1, 1], 0.5);
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn coincident_embeddings_give_ln_negative_count() {
        // N=2 origins, M=2 views, all four embeddings identical: each anchor
        // has 2 negatives, so the loss is ln 2. Verified by hand on the
        // 4-element similarity matrix (all entries 1):
        //   term = -1/tau + ln(2 e^{1/tau}) = ln 2.
        let z = arr2(&[[0.3, 0.4], [0.3, 0.4], [0.3, 0.4], [0.3, 0.4]]);
        let loss = nt_xent_loss(&z, &[0, 0, 1, 1], 0.5).unwrap();
        assert!((loss - 2.0f64.ln()).abs() < 1e-12, "loss {loss}");

        // three origins, two views each: 4 negatives per anchor
        let z6 = Array2::from_elem((6, 3), 0.7);
        let loss6 = nt_xent_loss(&z6, &[0, 0, 1, 1, 2, 2], 0.5).unwrap();
        assert!((loss6 - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = crate::rng::rng_from_seed(6);
        let n = 4;
        let m = 2;
        let z_dim = 8;
        let latents =
            Array2::from_shape_fn((n * m, z_dim), |_| rng.gen_range(-1.0..1.0f64));
        let origins: Vec<usize> = (0..n * m).map(|i| i / m).collect();
        let tau = 0.5;
        let (_, grad) = nt_xent_loss_grad(&latents, &origins, tau).unwrap();
        let h = 1e-6;
        for probe in 0..8 {
            let r = (probe * 3 + 1) % (n * m);
            let c = (probe * 5 + 2) % z_dim;
            let mut plus = latents.clone();
            plus[[r, c]] += h;
            let mut minus = latents.clone();
            minus[[r, c]] -= h;
            let fd = (nt_xent_loss(&plus, &origins, tau).unwrap()
                - nt_xent_loss(&minus, &origins, tau).unwrap())
                / (2.0 * h);
            let an = grad[[r, c]];
            let denom = fd.abs().max(an.abs()).max(1e-10);
            assert!(
                (fd - an).abs() / denom < 1e-4,
                "probe ({r},{c}): fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn loss_is_finite_and_scale_free_batches() {
        let mut rng = crate::rng::rng_from_seed(9);
        for _ in 0..50 {
            let n = rng.gen_range(2..5usize);
            let latents =
                Array2::from_shape_fn((n * 2, 4), |_| rng.gen_range(-1.0..1.0f64) + 1.5);
            let origins: Vec<usize> = (0..n * 2).map(|i| i / 2).collect();
            let loss = nt_xent_loss(&latents, &origins, 0.5).unwrap();
            assert!(loss.is_finite());
        }
    }
}
