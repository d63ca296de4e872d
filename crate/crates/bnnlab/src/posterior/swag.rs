//! SWAG: a Gaussian fitted around a local solution from the trajectory of
//! constant-learning-rate SGD iterates. The covariance is the sum of a
//! diagonal and a low-rank part, `cov = (diag + D D^T / (R - 1)) / 2`.

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::nn::{train_from, NetworkConfig, Provenance, SnapshotSink, TrainSettings, WeightInstance};
use crate::rng::rng_from_seed;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// A Gaussian over a flattened parameter vector with covariance
/// `(diag + D D^T / (R - 1)) / 2`. The one-half scale is the recorded
/// convention; see `scale_convention`.
#[derive(Debug, Clone)]
pub struct LowRankGaussian {
    pub mean: Array1<f64>,
    /// Per-coordinate variance estimates, clamped at zero.
    pub diag: Array1<f64>,
    /// Centered deviation columns `[P, R]`.
    pub deviations: Array2<f64>,
    /// Identifier of the covariance scaling convention in force.
    pub scale_convention: String,
}

pub const HALF_SCALE_CONVENTION: &str = "half(diag + DDt/(R-1))";

impl LowRankGaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rank(&self) -> usize {
        self.deviations.ncols()
    }

    fn validate(&self) -> Result<()> {
        if self.diag.len() != self.dim() || self.deviations.nrows() != self.dim() {
            return Err(Error::Fit("low-rank Gaussian fields disagree on dimension".into()));
        }
        if self.diag.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::Fit("diagonal variances must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn low_rank_active(&self) -> bool {
        self.rank() > 0 && self.deviations.iter().any(|v| *v != 0.0)
    }

    /// One draw `mean + diag^(1/2) e1 / sqrt(2) + D e2 / sqrt(2 (R-1))`.
    pub fn sample_vector<R: Rng>(&self, rng: &mut R) -> Result<Array1<f64>> {
        self.validate()?;
        if self.low_rank_active() && self.rank() <= 1 {
            return Err(Error::Fit(
                "low-rank part needs at least 2 deviation columns for the 1/(R-1) scale".into(),
            ));
        }
        let mut draw = self.mean.clone();
        let half_sqrt = 0.5f64.sqrt();
        for i in 0..self.dim() {
            let e: f64 = StandardNormal.sample(rng);
            draw[i] += half_sqrt * self.diag[i].sqrt() * e;
        }
        if self.low_rank_active() {
            let r = self.rank();
            let scale = 1.0 / (2.0 * (r as f64 - 1.0)).sqrt();
            let e2 = Array1::from_shape_fn(r, |_| StandardNormal.sample(rng));
            draw.scaled_add(scale, &self.deviations.dot(&e2));
        }
        Ok(draw)
    }

    /// Dense analytic covariance; for oracle tests on small dimensions.
    pub fn covariance(&self) -> Array2<f64> {
        let p = self.dim();
        let mut cov = Array2::<f64>::zeros((p, p));
        for i in 0..p {
            cov[[i, i]] = 0.5 * self.diag[i];
        }
        if self.low_rank_active() {
            let r = self.rank() as f64;
            let ddt = self.deviations.dot(&self.deviations.t());
            cov.scaled_add(0.5 / (r - 1.0), &ddt);
        }
        cov
    }
}

/// Accumulates SGD snapshots into running first/second moments plus a ring of
/// the last `max_rank` snapshots.
pub struct SwagAccumulator {
    count: usize,
    mean: Array1<f64>,
    second: Array1<f64>,
    ring: VecDeque<Array1<f64>>,
    max_rank: usize,
}

impl SwagAccumulator {
    pub fn new(dim: usize, max_rank: usize) -> Self {
        Self {
            count: 0,
            mean: Array1::zeros(dim),
            second: Array1::zeros(dim),
            ring: VecDeque::with_capacity(max_rank + 1),
            max_rank,
        }
    }

    pub fn push(&mut self, snapshot: &Array1<f64>) {
        self.count += 1;
        let n = self.count as f64;
        // running mean / second moment
        ndarray::Zip::from(&mut self.mean).and(snapshot).for_each(|m, &x| {
            *m += (x - *m) / n;
        });
        ndarray::Zip::from(&mut self.second).and(snapshot).for_each(|s, &x| {
            *s += (x * x - *s) / n;
        });
        if self.max_rank > 0 {
            if self.ring.len() == self.max_rank {
                self.ring.pop_front();
            }
            self.ring.push_back(snapshot.clone());
        }
    }

    pub fn snapshots_seen(&self) -> usize {
        self.count
    }

    /// Finalizes the moments: variance is the second moment minus the squared
    /// mean (clamped at zero; clamps beyond 1e-6 logged), deviations are the
    /// last `R` snapshots centered on the final mean.
    pub fn finish(self) -> Result<LowRankGaussian> {
        if self.count < 2 {
            return Err(Error::Fit(format!(
                "SWAG needs at least 2 snapshots, saw {}",
                self.count
            )));
        }
        let dim = self.mean.len();
        let mut diag = Array1::<f64>::zeros(dim);
        let mut worst_clamp = 0.0f64;
        for i in 0..dim {
            let v = self.second[i] - self.mean[i] * self.mean[i];
            if v < 0.0 {
                worst_clamp = worst_clamp.max(-v);
                diag[i] = 0.0;
            } else {
                diag[i] = v;
            }
        }
        if worst_clamp > 1e-6 {
            log::warn!("SWAG variance clamped at zero by up to {worst_clamp:.3e}");
        }
        let r = self.ring.len();
        let mut deviations = Array2::<f64>::zeros((dim, r));
        for (j, snap) in self.ring.iter().enumerate() {
            for i in 0..dim {
                deviations[[i, j]] = snap[i] - self.mean[i];
            }
        }
        Ok(LowRankGaussian {
            mean: self.mean,
            diag,
            deviations,
            scale_convention: HALF_SCALE_CONVENTION.to_string(),
        })
    }
}

/// Collection-phase settings: how many snapshots, how often, and the constant
/// learning rate kept during collection.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwagCollectSettings {
    /// Number of snapshots to collect.
    pub cycles: usize,
    /// SGD steps between snapshots.
    pub snapshot_period: usize,
    pub learning_rate: f64,
    /// Maximum deviation columns retained.
    #[serde(default = "default_rank")]
    pub max_rank: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_rank() -> usize {
    20
}

fn default_batch() -> usize {
    32
}

/// A fitted SWAG posterior bound to its network configuration.
#[derive(Debug, Clone)]
pub struct SwagPosterior {
    pub config: NetworkConfig,
    pub gaussian: LowRankGaussian,
    /// Snapshots actually collected.
    pub snapshots: usize,
}

struct CollectSink {
    acc: SwagAccumulator,
    period: usize,
    limit: usize,
}

impl SnapshotSink for CollectSink {
    fn on_step(&mut self, step: usize, params: &crate::nn::NetParams) {
        if step % self.period == 0 && self.acc.snapshots_seen() < self.limit {
            self.acc.push(&params.flatten());
        }
    }
}

/// Continues SGD from a converged instance at a constant learning rate,
/// snapshotting every `snapshot_period` steps until `cycles` snapshots are in.
pub fn swag_collect(
    start: &WeightInstance,
    data: &DatasetSplit,
    settings: &SwagCollectSettings,
) -> Result<SwagPosterior> {
    if settings.cycles < 2 {
        return Err(Error::Fit("SWAG collection needs at least 2 snapshots".into()));
    }
    if !(settings.learning_rate > 0.0) {
        return Err(Error::Fit("SWAG collection learning rate must be positive".into()));
    }
    if settings.snapshot_period == 0 {
        return Err(Error::Fit("snapshot period must be positive".into()));
    }
    let dim = start.config.arch().param_count();
    let steps_needed = settings.cycles * settings.snapshot_period;
    let steps_per_epoch = data.len().div_ceil(settings.batch_size);
    let epochs = steps_needed.div_ceil(steps_per_epoch);
    let mut sink = CollectSink {
        acc: SwagAccumulator::new(dim, settings.max_rank),
        period: settings.snapshot_period,
        limit: settings.cycles,
    };
    let train_settings = TrainSettings {
        epochs,
        batch_size: settings.batch_size,
        learning_rate: settings.learning_rate,
        momentum: settings.momentum,
        weight_decay: settings.weight_decay,
        hflip: false,
        dropout: 0.0,
        seed: settings.seed,
    };
    train_from(start, data, &train_settings, &mut sink)?;
    let snapshots = sink.acc.snapshots_seen();
    let gaussian = sink.acc.finish()?;
    Ok(SwagPosterior { config: start.config.clone(), gaussian, snapshots })
}

/// One SWAG weight draw, deterministic per seed.
pub fn swag_sample(posterior: &SwagPosterior, seed: u64) -> Result<WeightInstance> {
    let mut rng = rng_from_seed(seed);
    let flat = posterior.gaussian.sample_vector(&mut rng)?;
    WeightInstance::from_flat(
        &posterior.config,
        flat.as_slice().expect("contiguous"),
        Provenance::new("swag", seed),
    )
}

impl SwagPosterior {
    pub fn to_container(&self) -> Result<crate::io::ArrayContainer> {
        let mut c = crate::io::ArrayContainer::new(
            crate::io::ContainerKind::Posterior,
            serde_json::json!({
                "type": "swag",
                "config": self.config,
                "config_digest": self.config.digest(),
                "dim": self.gaussian.dim(),
                "rank": self.gaussian.rank(),
                "scale_convention": self.gaussian.scale_convention,
                "fit": { "snapshots": self.snapshots },
            }),
        );
        c.insert("mean", self.gaussian.mean.clone());
        c.insert("diag", self.gaussian.diag.clone());
        c.insert("deviations", self.gaussian.deviations.clone());
        Ok(c)
    }

    pub fn from_container(c: &crate::io::ArrayContainer) -> Result<Self> {
        let config = super::config_from_meta(&c.meta)?;
        let gaussian = LowRankGaussian {
            mean: c.get1("mean")?,
            diag: c.get1("diag")?,
            deviations: c.get2("deviations")?,
            scale_convention: c.meta["scale_convention"].as_str().unwrap_or_default().to_string(),
        };
        gaussian.validate()?;
        let snapshots = c.meta["fit"]["snapshots"].as_u64().unwrap_or(0) as usize;
        Ok(Self { config, gaussian, snapshots })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rel_frobenius;
    use ndarray::arr1;

    #[test]
    fn identical_snapshots_collapse() {
        let snap = arr1(&[1.0, -2.0, 3.0]);
        let mut acc = SwagAccumulator::new(3, 4);
        for _ in 0..6 {
            acc.push(&snap);
        }
        let g = acc.finish().unwrap();
        assert_eq!(g.mean, snap);
        assert!(g.diag.iter().all(|v| *v < 1e-12));
        assert!(g.deviations.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn two_opposite_snapshots_moments() {
        let theta = arr1(&[1.0, 2.0, -0.5]);
        let mut acc = SwagAccumulator::new(3, 2);
        acc.push(&theta);
        acc.push(&(-&theta));
        let g = acc.finish().unwrap();
        assert!(g.mean.iter().all(|v| v.abs() < 1e-15));
        for (d, t) in g.diag.iter().zip(theta.iter()) {
            assert!((d - t * t).abs() < 1e-12, "diag should be theta^2");
        }
    }

    #[test]
    fn fewer_than_two_snapshots_is_a_fit_error() {
        let mut acc = SwagAccumulator::new(2, 2);
        acc.push(&arr1(&[0.0, 0.0]));
        assert!(matches!(acc.finish(), Err(Error::Fit(_))));
    }

    #[test]
    fn synthetic_trajectory_recovers_moments() {
        // 50 snapshots from a known diagonal Gaussian; mean/diag within 15%.
        let mut rng = rng_from_seed(1234);
        let dim = 10;
        let mu = Array1::from_shape_fn(dim, |i| 1.0 + i as f64 * 0.2);
        let sigma = Array1::from_shape_fn(dim, |i| 0.3 + 0.02 * i as f64);
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
        let truth_var = sigma.mapv(|s| s * s);
        let var_err = (&g.diag - &truth_var).mapv(|v| v * v).sum().sqrt()
            / truth_var.mapv(|v| v * v).sum().sqrt();
        assert!(mean_err < 0.15, "mean error {mean_err}");
        assert!(var_err < 0.15, "variance error {var_err}");
    }

    #[test]
    fn zero_posterior_returns_mean() {
        let g = LowRankGaussian {
            mean: arr1(&[3.0, -1.0]),
            diag: arr1(&[0.0, 0.0]),
            deviations: Array2::zeros((2, 0)),
            scale_convention: HALF_SCALE_CONVENTION.into(),
        };
        let mut rng = rng_from_seed(5);
        let s = g.sample_vector(&mut rng).unwrap();
        assert_eq!(s, g.mean);
    }

    #[test]
    fn rank_one_nonzero_deviation_errors() {
        let g = LowRankGaussian {
            mean: arr1(&[0.0]),
            diag: arr1(&[1.0]),
            deviations: Array2::from_elem((1, 1), 0.5),
            scale_convention: HALF_SCALE_CONVENTION.into(),
        };
        let mut rng = rng_from_seed(5);
        assert!(matches!(g.sample_vector(&mut rng), Err(Error::Fit(_))));
    }

    fn empirical_covariance(samples: &[Array1<f64>]) -> Array2<f64> {
        let n = samples.len() as f64;
        let dim = samples[0].len();
        let mut mean = Array1::<f64>::zeros(dim);
        for s in samples {
            mean += s;
        }
        mean /= n;
        let mut cov = Array2::<f64>::zeros((dim, dim));
        for s in samples {
            let d = s - &mean;
            for i in 0..dim {
                for j in 0..dim {
                    cov[[i, j]] += d[i] * d[j];
                }
            }
        }
        cov / (n - 1.0)
    }

    #[test]
    fn diagonal_only_sampling_covariance() {
        let dim = 20;
        let mut rng = rng_from_seed(77);
        let diag = Array1::from_shape_fn(dim, |_| rng.gen_range(0.2..2.0));
        let g = LowRankGaussian {
            mean: Array1::zeros(dim),
            diag: diag.clone(),
            deviations: Array2::zeros((dim, 0)),
            scale_convention: HALF_SCALE_CONVENTION.into(),
        };
        let samples: Vec<Array1<f64>> =
            (0..10_000).map(|i| g.sample_vector(&mut rng_from_seed(9000 + i)).unwrap()).collect();
        let emp = empirical_covariance(&samples);
        let analytic = g.covariance();
        let err = rel_frobenius(&emp, &analytic);
        assert!(err < 0.10, "relative Frobenius error {err}");
    }

    #[test]
    fn full_form_sampling_covariance() {
        let dim = 20;
        let rank = 5;
        let mut rng = rng_from_seed(78);
        let diag = Array1::from_shape_fn(dim, |_| rng.gen_range(0.2..1.0));
        let deviations = Array2::from_shape_fn((dim, rank), |_| rng.gen_range(-1.0..1.0));
        let g = LowRankGaussian {
            mean: Array1::from_shape_fn(dim, |_| rng.gen_range(-1.0..1.0)),
            diag,
            deviations,
            scale_convention: HALF_SCALE_CONVENTION.into(),
        };
        let samples: Vec<Array1<f64>> =
            (0..10_000).map(|i| g.sample_vector(&mut rng_from_seed(31_000 + i)).unwrap()).collect();
        let emp = empirical_covariance(&samples);
        let analytic = g.covariance();
        let err = rel_frobenius(&emp, &analytic);
        assert!(err < 0.10, "relative Frobenius error {err}");
    }
}
