//! Diversity and uncertainty metrics over latent concept vectors and
//! predictive distributions: FV variance, inter/intra-mode variance,
//! predictive entropy, expected calibration error, Pearson correlation,
//! instance centers with within/between histograms, and the k-NN prefix
//! sweeps relating diversity to uncertainty.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Argmax with ties broken to the lowest index.
pub fn argmax_tie_low(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate().skip(1) {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

fn check_same_dim(latents: &[Array1<f64>]) -> Result<usize> {
    let d = latents
        .first()
        .ok_or_else(|| Error::Input("latent set is empty".into()))?
        .len();
    if latents.iter().any(|z| z.len() != d) {
        return Err(Error::Input("latent vectors have mixed dimensions".into()));
    }
    Ok(d)
}

/// Mean squared Euclidean distance of latent vectors to their mean.
pub fn fv_var(latents: &[Array1<f64>]) -> Result<f64> {
    let d = check_same_dim(latents)?;
    let t = latents.len() as f64;
    let mut mean = Array1::<f64>::zeros(d);
    for z in latents {
        mean += z;
    }
    mean /= t;
    let mut acc = 0.0;
    for z in latents {
        let diff = z - &mean;
        acc += diff.dot(&diff);
    }
    Ok(acc / t)
}

/// Spread of mode centers: mean squared distance of the centers to their mean.
pub fn inter_mode_var(centers: &[Array1<f64>]) -> Result<f64> {
    fv_var(centers)
}

/// One mode of a mixture: its center latent and the latents of instances
/// drawn from it.
#[derive(Debug, Clone)]
pub struct ModeLatents {
    pub center: Array1<f64>,
    pub members: Vec<Array1<f64>>,
}

/// Average within-mode spread: for each mode, the mean squared distance of
/// member latents to the mode center, averaged over modes. The center is the
/// latent of the mode-mean instance's visualization, not the member mean.
pub fn intra_mode_var(modes: &[ModeLatents]) -> Result<f64> {
    if modes.is_empty() {
        return Err(Error::Input("intra_mode_var requires at least one mode".into()));
    }
    let mut total = 0.0;
    for (k, mode) in modes.iter().enumerate() {
        if mode.members.is_empty() {
            return Err(Error::Input(format!("mode {k} has no member latents")));
        }
        let mut acc = 0.0;
        for z in &mode.members {
            if z.len() != mode.center.len() {
                return Err(Error::Input("member/center dimension mismatch".into()));
            }
            let diff = z - &mode.center;
            acc += diff.dot(&diff);
        }
        total += acc / mode.members.len() as f64;
    }
    Ok(total / modes.len() as f64)
}

/// Variant of [`intra_mode_var`] that centers each mode on its member mean
/// instead of the mode-mean instance latent.
pub fn intra_mode_var_mean_centered(modes: &[ModeLatents]) -> Result<f64> {
    let recentered: Vec<ModeLatents> = modes
        .iter()
        .map(|m| {
            let mut mean = Array1::<f64>::zeros(m.members.first().map(|z| z.len()).unwrap_or(0));
            for z in &m.members {
                mean += z;
            }
            mean /= m.members.len().max(1) as f64;
            ModeLatents { center: mean, members: m.members.clone() }
        })
        .collect();
    intra_mode_var(&recentered)
}

/// Shannon entropy of a probability vector, natural log, `0 ln 0 = 0`.
pub fn predictive_entropy(p: &Array1<f64>) -> Result<f64> {
    let sum: f64 = p.sum();
    if (sum - 1.0).abs() > 1e-6 || p.iter().any(|v| *v < 0.0) {
        return Err(Error::Input(format!(
            "not a probability vector (sum {sum}, min {})",
            p.iter().cloned().fold(f64::INFINITY, f64::min)
        )));
    }
    let mut h = 0.0;
    for &v in p.iter() {
        if v > 0.0 {
            h -= v * v.ln();
        }
    }
    Ok(h)
}

/// Mean entropy over rows of an ensemble predictive matrix `[N, C]`.
pub fn mean_entropy_of_probs(probs: &Array2<f64>) -> Result<f64> {
    if probs.nrows() == 0 {
        return Err(Error::Input("empty predictive matrix".into()));
    }
    let mut total = 0.0;
    for row in probs.rows() {
        total += predictive_entropy(&row.to_owned())?;
    }
    Ok(total / probs.nrows() as f64)
}

/// Mean predictive entropy of the Bayesian model average of `instances` over
/// a dataset.
pub fn mean_predictive_entropy(
    instances: &[crate::nn::WeightInstance],
    data: &crate::data::DatasetSplit,
) -> Result<f64> {
    let probs = crate::nn::predictive_mc_dataset(instances, data)?;
    mean_entropy_of_probs(&probs)
}

/// Expected calibration error with equal-width confidence bins over the
/// max-probability prediction. Empty bins contribute zero.
pub fn ece(probs: &Array2<f64>, labels: &[usize], bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::Input("ece requires at least one bin".into()));
    }
    if probs.nrows() != labels.len() || probs.nrows() == 0 {
        return Err(Error::Input("prediction/label count mismatch or empty".into()));
    }
    let n = probs.nrows();
    let mut bin_conf = vec![0.0f64; bins];
    let mut bin_acc = vec![0.0f64; bins];
    let mut bin_count = vec![0usize; bins];
    for i in 0..n {
        let row = probs.row(i);
        let slice = row.as_slice().expect("contiguous row");
        let pred = argmax_tie_low(slice);
        let conf = slice[pred];
        let b = ((conf * bins as f64) as usize).min(bins - 1);
        bin_conf[b] += conf;
        bin_acc[b] += if pred == labels[i] { 1.0 } else { 0.0 };
        bin_count[b] += 1;
    }
    let mut e = 0.0;
    for b in 0..bins {
        if bin_count[b] > 0 {
            let c = bin_count[b] as f64;
            e += (c / n as f64) * (bin_acc[b] / c - bin_conf[b] / c).abs();
        }
    }
    Ok(e)
}

/// Standard Pearson correlation coefficient.
pub fn pearson_corr(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Input("pearson_corr needs two equal-length series of length >= 2".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "one of the series has zero variance".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Output of [`instance_centers`]: per-instance mean latents plus the
/// within/between distance samples and their histogram overlap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CentersReport {
    pub instance_ids: Vec<String>,
    pub centers: Vec<Vec<f64>>,
    /// Euclidean distance of each replicate FV latent to its own center.
    pub within: Vec<f64>,
    /// Euclidean distance of each replicate FV latent to one randomly chosen
    /// other instance center.
    pub between: Vec<f64>,
    /// Shared-bin histogram intersection of the two distance distributions.
    pub overlap_fraction: f64,
    pub mean_within: f64,
    pub mean_between: f64,
    /// Instances dropped because they had fewer than two replicates.
    pub excluded: Vec<String>,
}

const OVERLAP_BINS: usize = 50;

/// Histogram mass intersection over a shared equal-width bin grid.
pub fn histogram_overlap(a: &[f64], b: &[f64], bins: usize) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let hi = a.iter().chain(b.iter()).cloned().fold(0.0f64, f64::max).max(1e-300);
    let mut ha = vec![0.0f64; bins];
    let mut hb = vec![0.0f64; bins];
    for &v in a {
        let i = ((v / hi * bins as f64) as usize).min(bins - 1);
        ha[i] += 1.0 / a.len() as f64;
    }
    for &v in b {
        let i = ((v / hi * bins as f64) as usize).min(bins - 1);
        hb[i] += 1.0 / b.len() as f64;
    }
    ha.iter().zip(hb.iter()).map(|(x, y)| x.min(*y)).sum()
}

/// Computes per-instance centers from replicated FV latents (multiple AM
/// seeds per instance) and the within/between distance distributions.
pub fn instance_centers(
    replicates: &[(String, Vec<Array1<f64>>)],
    seed: u64,
) -> Result<CentersReport> {
    use rand::Rng;
    let mut kept: Vec<(String, &Vec<Array1<f64>>)> = Vec::new();
    let mut excluded = Vec::new();
    for (id, reps) in replicates {
        if reps.len() >= 2 {
            kept.push((id.clone(), reps));
        } else {
            log::warn!("instance {id} has {} replicate(s); excluded from center analysis", reps.len());
            excluded.push(id.clone());
        }
    }
    if kept.len() < 2 {
        return Err(Error::Input(
            "instance_centers needs at least two instances with >= 2 replicates".into(),
        ));
    }
    let d = kept[0].1[0].len();
    let mut centers: Vec<Array1<f64>> = Vec::with_capacity(kept.len());
    for (_, reps) in &kept {
        let mut mean = Array1::<f64>::zeros(d);
        for z in reps.iter() {
            if z.len() != d {
                return Err(Error::Input("latent dimension mismatch".into()));
            }
            mean += z;
        }
        centers.push(mean / reps.len() as f64);
    }
    let mut rng = crate::rng::rng_from_seed(seed);
    let mut within = Vec::new();
    let mut between = Vec::new();
    for (i, (_, reps)) in kept.iter().enumerate() {
        for z in reps.iter() {
            let dw = (z - &centers[i]).mapv(|v| v * v).sum().sqrt();
            within.push(dw);
            // one randomly chosen other center
            let mut j = rng.gen_range(0..kept.len() - 1);
            if j >= i {
                j += 1;
            }
            let db = (z - &centers[j]).mapv(|v| v * v).sum().sqrt();
            between.push(db);
        }
    }
    let overlap = histogram_overlap(&within, &between, OVERLAP_BINS);
    let mean_within = within.iter().sum::<f64>() / within.len() as f64;
    let mean_between = between.iter().sum::<f64>() / between.len() as f64;
    Ok(CentersReport {
        instance_ids: kept.iter().map(|(id, _)| id.clone()).collect(),
        centers: centers.iter().map(|c| c.to_vec()).collect(),
        within,
        between,
        overlap_fraction: overlap,
        mean_within,
        mean_between,
        excluded,
    })
}

/// Cosine similarity; both vectors must be nonzero.
pub fn cosine_similarity(a: &Array1<f64>, b: &Array1<f64>) -> Result<f64> {
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numerical("cosine similarity of a zero vector".into()));
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Distance used throughout the diversity metrics: `1 - cosine similarity`.
pub fn fv_distance(a: &Array1<f64>, b: &Array1<f64>) -> Result<f64> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

/// Inputs for the k-NN diversity-set sweep: per instance one latent vector
/// and its predictive distribution over an evaluation set.
pub struct KnnSweepInput<'a> {
    pub ids: &'a [String],
    pub latents: &'a [Array1<f64>],
    /// Per-instance predictive probabilities over the evaluation data `[N, C]`.
    pub probs: &'a [Array2<f64>],
}

/// Result of the sweep: per prefix size `E`, the FV variance of the prefix
/// latents and the mean predictive entropy of the prefix ensemble, averaged
/// over start points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnnSweep {
    pub prefix_sizes: Vec<usize>,
    pub fv_vars: Vec<f64>,
    pub mean_entropies: Vec<f64>,
    /// Orderings produced for each start instance (instance indices).
    pub orderings: Vec<Vec<usize>>,
}

/// Sorts instances by FV distance to each start instance (ties broken by
/// instance id), then evaluates `(fv_var, mean predictive entropy)` of every
/// prefix of size `E = 2..=T` and averages pointwise over start points.
pub fn knn_diversity_sweep(input: &KnnSweepInput<'_>, starts: &[usize]) -> Result<KnnSweep> {
    let t = input.latents.len();
    if t < 2 {
        return Err(Error::Input("knn sweep needs at least two instances".into()));
    }
    if input.ids.len() != t || input.probs.len() != t {
        return Err(Error::Input("ids/latents/probs length mismatch".into()));
    }
    if starts.is_empty() {
        return Err(Error::Input("knn sweep needs at least one start instance".into()));
    }
    let prefix_sizes: Vec<usize> = (2..=t).collect();
    let mut fv_acc = vec![0.0f64; prefix_sizes.len()];
    let mut ent_acc = vec![0.0f64; prefix_sizes.len()];
    let mut orderings = Vec::with_capacity(starts.len());

    for &s in starts {
        if s >= t {
            return Err(Error::Input(format!("start index {s} out of range")));
        }
        let mut order: Vec<usize> = (0..t).collect();
        let mut dists = Vec::with_capacity(t);
        for i in 0..t {
            dists.push(fv_distance(&input.latents[s], &input.latents[i])?);
        }
        order.sort_by(|&a, &b| {
            dists[a]
                .partial_cmp(&dists[b])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| input.ids[a].cmp(&input.ids[b]))
        });

        // incremental ensemble probabilities over the evaluation set
        let mut probs_sum = input.probs[order[0]].clone();
        for (ei, &e) in prefix_sizes.iter().enumerate() {
            probs_sum += &input.probs[order[e - 1]];
            let prefix_latents: Vec<Array1<f64>> =
                order[..e].iter().map(|&i| input.latents[i].clone()).collect();
            fv_acc[ei] += fv_var(&prefix_latents)?;
            let ens = &probs_sum / e as f64;
            ent_acc[ei] += mean_entropy_of_probs(&ens)?;
        }
        orderings.push(order);
    }
    let s = starts.len() as f64;
    Ok(KnnSweep {
        prefix_sizes,
        fv_vars: fv_acc.into_iter().map(|v| v / s).collect(),
        mean_entropies: ent_acc.into_iter().map(|v| v / s).collect(),
        orderings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;
    use rand::Rng;

    #[test]
    fn fv_var_hand_cases() {
        let same = vec![arr1(&[1.0, 2.0]); 4];
        assert_eq!(fv_var(&same).unwrap(), 0.0);
        let pair = vec![arr1(&[1.0, 0.0]), arr1(&[-1.0, 0.0])];
        assert!((fv_var(&pair).unwrap() - 1.0).abs() < 1e-15);
        assert!(fv_var(&[]).is_err());
    }

    #[test]
    fn fv_var_matches_two_pass_oracle() {
        let mut rng = crate::rng::rng_from_seed(8);
        let latents: Vec<Array1<f64>> = (0..5)
            .map(|_| Array1::from_shape_fn(7, |_| rng.gen_range(-2.0..2.0)))
            .collect();
        let got = fv_var(&latents).unwrap();
        // independent two-pass summation
        let t = latents.len() as f64;
        let mut mean = vec![0.0f64; 7];
        for z in &latents {
            for (m, v) in mean.iter_mut().zip(z.iter()) {
                *m += v / t;
            }
        }
        let mut acc = 0.0;
        for z in &latents {
            for (m, v) in mean.iter().zip(z.iter()) {
                acc += (v - m) * (v - m);
            }
        }
        assert!((got - acc / t).abs() < 1e-10);
    }

    #[test]
    fn fv_var_translation_invariant_scale_quadratic() {
        let mut rng = crate::rng::rng_from_seed(9);
        let latents: Vec<Array1<f64>> = (0..6)
            .map(|_| Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let base = fv_var(&latents).unwrap();
        let shift = arr1(&[3.0, -1.0, 2.0, 0.5]);
        let shifted: Vec<Array1<f64>> = latents.iter().map(|z| z + &shift).collect();
        assert!((fv_var(&shifted).unwrap() - base).abs() < 1e-10);
        let scaled: Vec<Array1<f64>> = latents.iter().map(|z| z * 3.0).collect();
        assert!((fv_var(&scaled).unwrap() - 9.0 * base).abs() < 1e-9);
    }

    #[test]
    fn inter_intra_hand_cases() {
        assert_eq!(inter_mode_var(&[arr1(&[2.0, 2.0])]).unwrap(), 0.0);
        let v = inter_mode_var(&[arr1(&[1.0, 0.0]), arr1(&[-1.0, 0.0])]).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        // identical center repeated K times
        let rep = vec![arr1(&[0.3, 0.7]); 5];
        assert!(inter_mode_var(&rep).unwrap() < 1e-30);

        let modes = vec![
            ModeLatents { center: arr1(&[0.0, 0.0]), members: vec![arr1(&[0.0, 0.0]); 3] },
            ModeLatents { center: arr1(&[5.0, 0.0]), members: vec![arr1(&[5.0, 0.0]); 2] },
        ];
        assert_eq!(intra_mode_var(&modes).unwrap(), 0.0);
        let spread = vec![ModeLatents {
            center: arr1(&[0.0]),
            members: vec![arr1(&[1.0]), arr1(&[-1.0])],
        }];
        assert!((intra_mode_var(&spread).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn entropy_known_values() {
        let u = Array1::from_elem(10, 0.1);
        assert!((predictive_entropy(&u).unwrap() - 10.0f64.ln()).abs() < 1e-12);
        let onehot = arr1(&[0.0, 1.0, 0.0]);
        assert_eq!(predictive_entropy(&onehot).unwrap(), 0.0);
        let half = arr1(&[0.5, 0.5, 0.0, 0.0]);
        assert!((predictive_entropy(&half).unwrap() - 2.0f64.ln()).abs() < 1e-12);
        assert!(predictive_entropy(&arr1(&[0.9, 0.2])).is_err());
    }

    #[test]
    fn entropy_bounds_hold_over_random_distributions() {
        let mut rng = crate::rng::rng_from_seed(12);
        for _ in 0..10_000 {
            let c = rng.gen_range(2..12usize);
            let mut p = Array1::<f64>::from_shape_fn(c, |_| rng.gen_range(0.0..1.0f64).max(1e-12));
            let s = p.sum();
            p /= s;
            let h = predictive_entropy(&p).unwrap();
            assert!(h >= 0.0 && h <= (c as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn ece_hand_cases() {
        // all predictions confidence 1.0 with accuracy 0.5 -> 0.5
        let mut probs = Array2::<f64>::zeros((4, 2));
        for i in 0..4 {
            probs[[i, 0]] = 1.0;
        }
        let labels = vec![0usize, 1, 0, 1];
        assert!((ece(&probs, &labels, 10).unwrap() - 0.5).abs() < 1e-12);

        // perfectly calibrated synthetic bin: confidence 0.75, accuracy 0.75
        let mut probs = Array2::<f64>::zeros((4, 2));
        for i in 0..4 {
            probs[[i, 0]] = 0.75;
            probs[[i, 1]] = 0.25;
        }
        let labels = vec![0usize, 0, 0, 1];
        assert!(ece(&probs, &labels, 10).unwrap() < 1e-12);
    }

    #[test]
    fn ece_matches_direct_binning_oracle() {
        let mut rng = crate::rng::rng_from_seed(21);
        let n = 200;
        let c = 4;
        let bins = 15;
        let mut probs = Array2::<f64>::zeros((n, c));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let mut row: Vec<f64> = (0..c).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
            for j in 0..c {
                probs[[i, j]] = row[j];
            }
            labels.push(rng.gen_range(0..c));
        }
        let got = ece(&probs, &labels, bins).unwrap();
        // direct per-sample binning oracle
        let mut per_bin: Vec<Vec<(f64, bool)>> = vec![Vec::new(); bins];
        for i in 0..n {
            let row: Vec<f64> = probs.row(i).to_vec();
            let mut best = 0;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            let conf = row[best];
            let mut b = (conf * bins as f64).floor() as usize;
            if b == bins {
                b -= 1;
            }
            per_bin[b].push((conf, best == labels[i]));
        }
        let mut oracle = 0.0;
        for bin in &per_bin {
            if bin.is_empty() {
                continue;
            }
            let conf: f64 = bin.iter().map(|(c, _)| c).sum::<f64>() / bin.len() as f64;
            let acc: f64 =
                bin.iter().filter(|(_, ok)| *ok).count() as f64 / bin.len() as f64;
            oracle += bin.len() as f64 / n as f64 * (acc - conf).abs();
        }
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn pearson_known_and_oracle() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson_corr(&xs, &ys).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson_corr(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(
            pearson_corr(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));

        let mut rng = crate::rng::rng_from_seed(30);
        let xs: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x + rng.gen_range(-0.5..0.5)).collect();
        let got = pearson_corr(&xs, &ys).unwrap();
        // direct covariance-ratio oracle
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
        let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>() / n;
        let vy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum::<f64>() / n;
        assert!((got - cov / (vx * vy).sqrt()).abs() < 1e-12);
        assert!(got.abs() <= 1.0);
    }

    #[test]
    fn cosine_and_distance() {
        let a = arr1(&[1.0, 1.0]);
        let b = arr1(&[1.0, 0.0]);
        assert!((cosine_similarity(&a, &b).unwrap() - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(fv_distance(&a, &a).unwrap().abs() < 1e-12);
        let orth = arr1(&[0.0, 2.0]);
        assert!((fv_distance(&b, &orth).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine_similarity(&a, &arr1(&[0.0, 0.0])).is_err());
        // scale invariance
        let mut rng = crate::rng::rng_from_seed(3);
        for _ in 0..50 {
            let x = Array1::from_shape_fn(5, |_| rng.gen_range(-1.0..1.0));
            let y = Array1::from_shape_fn(5, |_| rng.gen_range(-1.0..1.0));
            let s1 = cosine_similarity(&x, &y).unwrap();
            let s2 = cosine_similarity(&(x * 3.7), &(y * 0.2)).unwrap();
            assert!((s1 - s2).abs() < 1e-12);
        }
    }

    #[test]
    fn instance_centers_hand_cases() {
        // identical replicates -> all within distances zero
        let reps = vec![
            ("a".to_string(), vec![arr1(&[0.0, 0.0]), arr1(&[0.0, 0.0])]),
            ("b".to_string(), vec![arr1(&[10.0, 0.0]), arr1(&[10.0, 0.0])]),
        ];
        let report = instance_centers(&reps, 1).unwrap();
        assert!(report.within.iter().all(|d| *d == 0.0));
        assert!(report.between.iter().all(|d| (*d - 10.0).abs() < 1e-12));
        assert_eq!(report.overlap_fraction, 0.0);

        // far-separated centers with small replicate spread -> zero overlap
        let reps = vec![
            ("a".into(), vec![arr1(&[0.05, 0.0]), arr1(&[-0.05, 0.0]), arr1(&[0.0, 0.05])]),
            ("b".into(), vec![arr1(&[10.05, 0.0]), arr1(&[9.95, 0.0]), arr1(&[10.0, 0.05])]),
        ];
        let report = instance_centers(&reps, 2).unwrap();
        assert_eq!(report.overlap_fraction, 0.0);
        assert!(report.mean_between / report.mean_within > 50.0);
    }

    #[test]
    fn instance_centers_excludes_singletons() {
        let reps = vec![
            ("a".to_string(), vec![arr1(&[0.0]), arr1(&[0.2])]),
            ("single".to_string(), vec![arr1(&[5.0])]),
            ("b".to_string(), vec![arr1(&[1.0]), arr1(&[1.2])]),
        ];
        let report = instance_centers(&reps, 3).unwrap();
        assert_eq!(report.excluded, vec!["single".to_string()]);
        assert_eq!(report.instance_ids.len(), 2);
    }

    #[test]
    fn knn_sweep_orders_by_distance_and_nests() {
        // three latents with hand-assigned distances to the start
        let ids: Vec<String> = (0..4).map(|i| format!("i{i}")).collect();
        let latents = vec![
            arr1(&[1.0, 0.0]),
            arr1(&[1.0, 0.1]),
            arr1(&[1.0, 0.4]),
            arr1(&[0.0, 1.0]),
        ];
        let probs: Vec<Array2<f64>> = (0..4)
            .map(|i| {
                let mut p = Array2::<f64>::zeros((2, 2));
                p[[0, 0]] = 0.2 + 0.15 * i as f64;
                p[[0, 1]] = 1.0 - p[[0, 0]];
                p[[1, 0]] = 0.5;
                p[[1, 1]] = 0.5;
                p
            })
            .collect();
        let input = KnnSweepInput { ids: &ids, latents: &latents, probs: &probs };
        let sweep = knn_diversity_sweep(&input, &[0]).unwrap();
        assert_eq!(sweep.orderings[0], vec![0, 1, 2, 3]);
        assert_eq!(sweep.prefix_sizes, vec![2, 3, 4]);
        // E = T prefix is the full set: fv_var equals direct computation
        let full = fv_var(&latents).unwrap();
        assert!((sweep.fv_vars.last().unwrap() - full).abs() < 1e-12);
    }

    #[test]
    fn histogram_overlap_bounds() {
        let a: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let o = histogram_overlap(&a, &a, 20);
        assert!((o - 1.0).abs() < 1e-9);
        let b: Vec<f64> = (0..100).map(|i| 10.0 + i as f64 / 100.0).collect();
        assert!(histogram_overlap(&a, &b, 20) < 1e-12);
    }
}
