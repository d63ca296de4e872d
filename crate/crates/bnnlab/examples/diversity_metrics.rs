//! The metric bundle on hand-built latents and predictive distributions:
//! FV variance, inter/intra-mode variance, predictive entropy, ECE, Pearson
//! correlation, instance centers and the k-NN diversity sweep.
//!
//! ```bash
//! cargo run --release --example diversity_metrics
//! ```

use bnnlab::metrics::{
    ece, fv_var, instance_centers, inter_mode_var, intra_mode_var, knn_diversity_sweep,
    mean_entropy_of_probs, pearson_corr, predictive_entropy, KnnSweepInput, ModeLatents,
};
use bnnlab::rng::rng_from_seed;
use ndarray::{arr1, Array1, Array2};
use rand::Rng;

fn main() -> bnnlab::Result<()> {
    // FV variance of a small latent set
    let latents = vec![
        arr1(&[1.0, 0.0, 0.2]),
        arr1(&[0.8, 0.1, 0.3]),
        arr1(&[-0.9, 0.0, 0.1]),
        arr1(&[-1.1, 0.2, 0.2]),
    ];
    println!("fv_var = {:.6}", fv_var(&latents)?);

    // inter/intra-mode variance over two synthetic modes
    let centers = vec![arr1(&[1.0, 0.0]), arr1(&[-1.0, 0.0])];
    let modes = vec![
        ModeLatents {
            center: centers[0].clone(),
            members: vec![arr1(&[1.1, 0.05]), arr1(&[0.9, -0.08])],
        },
        ModeLatents {
            center: centers[1].clone(),
            members: vec![arr1(&[-1.05, 0.02]), arr1(&[-0.92, 0.06])],
        },
    ];
    println!("inter_mode_var = {:.6}", inter_mode_var(&centers)?);
    println!("intra_mode_var = {:.6}", intra_mode_var(&modes)?);

    // entropies
    let uniform = Array1::from_elem(10, 0.1);
    println!("entropy(uniform over 10) = {:.6} (ln 10 = {:.6})", predictive_entropy(&uniform)?, 10f64.ln());

    // ECE of an overconfident predictor
    let mut rng = rng_from_seed(4);
    let n = 500;
    let mut probs = Array2::<f64>::zeros((n, 2));
    let mut labels = Vec::new();
    for i in 0..n {
        probs[[i, 0]] = 0.9;
        probs[[i, 1]] = 0.1;
        labels.push(usize::from(rng.gen_bool(0.3))); // class 0 is right 70% of the time
    }
    println!("ece(overconfident) = {:.4}", ece(&probs, &labels, 15)?);

    // correlation
    let xs: Vec<f64> = (0..40).map(|i| i as f64 / 10.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 0.5 * x + rng.gen_range(-0.2..0.2)).collect();
    println!("pearson = {:.4}", pearson_corr(&xs, &ys)?);

    // instance centers with replicates
    let replicates: Vec<(String, Vec<Array1<f64>>)> = (0..6)
        .map(|t| {
            let center = Array1::from_shape_fn(4, |_| rng.gen_range(-2.0..2.0f64));
            let reps =
                (0..3).map(|_| &center + &Array1::from_shape_fn(4, |_| rng.gen_range(-0.05..0.05))).collect();
            (format!("inst-{t}"), reps)
        })
        .collect();
    let report = instance_centers(&replicates, 7)?;
    println!(
        "centers: overlap {:.4}, mean within {:.4}, mean between {:.4}",
        report.overlap_fraction, report.mean_within, report.mean_between
    );

    // k-NN diversity sweep over synthetic instances: nearby latents share
    // predictions, far latents disagree, so FVVar and entropy climb together
    let t = 20;
    let ids: Vec<String> = (0..t).map(|i| format!("i{i:02}")).collect();
    let mut lat = Vec::new();
    let mut per_inst_probs = Vec::new();
    for i in 0..t {
        let angle = i as f64 / t as f64 * std::f64::consts::PI;
        lat.push(arr1(&[angle.cos(), angle.sin()]));
        let mut p = Array2::<f64>::zeros((50, 2));
        for r in 0..50 {
            let lean = 0.5 + 0.45 * (angle + r as f64 * 0.1).cos();
            p[[r, 0]] = lean;
            p[[r, 1]] = 1.0 - lean;
        }
        per_inst_probs.push(p);
    }
    let sweep = knn_diversity_sweep(
        &KnnSweepInput { ids: &ids, latents: &lat, probs: &per_inst_probs },
        &[0, 5, 10],
    )?;
    let r = pearson_corr(&sweep.fv_vars, &sweep.mean_entropies)?;
    println!("knn sweep: {} prefixes, FVVar-entropy correlation r = {r:.4}", sweep.prefix_sizes.len());
    let ens_probs = &per_inst_probs[0] * 0.5 + &per_inst_probs[t - 1] * 0.5;
    println!("mean entropy of a 2-instance ensemble: {:.4}", mean_entropy_of_probs(&ens_probs)?);
    Ok(())
}
