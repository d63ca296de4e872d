//! MAP training: SGD with momentum, L2 weight decay (the Gaussian prior
//! term), optional horizontal-flip augmentation and optional unit dropout.

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::nn::config::NetworkConfig;
use crate::nn::engine::{softmax_rows, BackOpts, BackSeed, NetParams};
use crate::nn::model::{build_model, Provenance, WeightInstance};
use crate::rng::rng_from_seed;
use ndarray::{Array2, Array4, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// L2 penalty coefficient; interpreted as the Gaussian prior precision
    /// scale of the MAP objective.
    #[serde(default)]
    pub weight_decay: f64,
    /// Random horizontal flip during training.
    #[serde(default)]
    pub hflip: bool,
    /// Unit dropout rate applied to every conv block except the last.
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch() -> usize {
    32
}

fn default_momentum() -> f64 {
    0.9
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            hflip: false,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) && self.epochs > 0 && self.learning_rate != 0.0 {
            return Err(Error::Config("learning rate must be nonnegative and finite".into()));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::Config("learning rate must be >= 0".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout rate must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Loss per epoch, as logged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epoch_losses: Vec<f64>,
}

/// Observer over SGD iterates; SWAG hooks in here during its collection phase.
pub trait SnapshotSink {
    fn on_step(&mut self, step: usize, params: &NetParams);
}

pub struct NoSink;

impl SnapshotSink for NoSink {
    fn on_step(&mut self, _step: usize, _params: &NetParams) {}
}

/// Cross-entropy of softmax outputs against one-hot labels, averaged over the
/// batch, plus the logit gradient.
fn ce_loss_and_grad(logits: &Array2<f64>, labels: &Array2<f64>) -> (f64, Array2<f64>) {
    let probs = softmax_rows(logits);
    let b = logits.nrows() as f64;
    let mut loss = 0.0;
    for (p_row, y_row) in probs.rows().into_iter().zip(labels.rows()) {
        for (p, y) in p_row.iter().zip(y_row.iter()) {
            if *y > 0.0 {
                loss -= y * p.max(1e-300).ln();
            }
        }
    }
    let grad = (&probs - labels) / b;
    (loss / b, grad)
}

/// Trains from an explicit starting point. Returns the trained instance and
/// the per-epoch loss log. `sink` observes the parameters after every SGD
/// step (used by SWAG collection).
pub fn train_from(
    start: &WeightInstance,
    data: &DatasetSplit,
    settings: &TrainSettings,
    sink: &mut dyn SnapshotSink,
) -> Result<(WeightInstance, TrainingLog)> {
    settings.validate()?;
    if data.is_empty() {
        return Err(Error::Input("training data is empty".into()));
    }
    let config = &start.config;
    let (c, h, w) = data.image_shape();
    let s = config.input_shape;
    if (c, h, w) != (s.channels, s.height, s.width) {
        return Err(Error::Input(format!(
            "dataset images {c}x{h}x{w} do not match configured input {}x{}x{}",
            s.channels, s.height, s.width
        )));
    }
    if data.class_count() != config.class_count {
        return Err(Error::Input("dataset class count does not match configuration".into()));
    }

    let arch = config.arch();
    let mut params = start.params.clone();
    let mut velocity = NetParams::zeros_like(&arch);
    let mut rng = rng_from_seed(settings.seed ^ 0x5eed_7a1e);
    let mut log = TrainingLog { epoch_losses: Vec::with_capacity(settings.epochs) };
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;

    for epoch in 0..settings.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0.0;
        for chunk in order.chunks(settings.batch_size) {
            let bsz = chunk.len();
            let mut x = Array4::<f64>::zeros((bsz, c, h, w));
            let mut y = Array2::<f64>::zeros((bsz, data.class_count()));
            for (row, &i) in chunk.iter().enumerate() {
                let mut img = data.image(i).to_owned();
                if settings.hflip && rng.gen_bool(0.5) {
                    img.invert_axis(Axis(2));
                }
                x.index_axis_mut(Axis(0), row).assign(&img);
                y.row_mut(row).assign(&data.labels().row(i));
            }
            let masks = if settings.dropout > 0.0 && arch.convs.len() > 1 {
                let mut ms = Vec::with_capacity(arch.convs.len());
                for (bi, cdim) in arch.convs.iter().enumerate() {
                    let mut m = Array2::<f64>::from_elem((bsz, cdim.out_channels), 1.0);
                    if bi + 1 < arch.convs.len() {
                        for v in m.iter_mut() {
                            if rng.gen_bool(settings.dropout) {
                                *v = 0.0;
                            }
                        }
                    }
                    ms.push(m);
                }
                Some(ms)
            } else {
                None
            };

            let trace = arch.forward(&params, &x, masks);
            let (loss, dlogits) = ce_loss_and_grad(trace.output(), &y);
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("loss became non-finite ({loss})"),
                });
            }
            epoch_loss += loss;
            batches += 1.0;
            let out = arch.backward(
                &params,
                &trace,
                BackSeed::Output(dlogits),
                BackOpts { weight_grads: true, ..Default::default() },
            );
            let mut grads = out.grads.expect("weight gradients requested");
            if settings.weight_decay > 0.0 {
                grads.scaled_add(settings.weight_decay, &params);
            }
            velocity.scale(settings.momentum);
            velocity.scaled_add(1.0, &grads);
            params.scaled_add(-settings.learning_rate, &velocity);
            step += 1;
            sink.on_step(step, &params);
        }
        let mean_loss = if batches > 0.0 { epoch_loss / batches } else { 0.0 };
        log::info!("epoch {epoch}: loss {mean_loss:.6}");
        log.epoch_losses.push(mean_loss);
    }

    let trained = WeightInstance::new(
        config.clone(),
        params,
        Provenance::new("map", settings.seed),
    )?;
    Ok((trained, log))
}

/// MAP training from a fresh initialization (seeded from the settings).
pub fn train_map(
    config: &NetworkConfig,
    data: &DatasetSplit,
    settings: &TrainSettings,
) -> Result<(WeightInstance, TrainingLog)> {
    let init = build_model(config, settings.seed)?;
    train_from(&init, data, settings, &mut NoSink)
}

/// Mean cross-entropy of an instance over a dataset, without gradient work.
pub fn dataset_loss(instance: &WeightInstance, data: &DatasetSplit) -> Result<f64> {
    let probs = instance.predict_probs_batch(data.images())?;
    let mut loss = 0.0;
    for i in 0..data.len() {
        loss -= probs[[i, data.label_index(i)]].max(1e-300).ln();
    }
    Ok(loss / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_digits;
    use crate::nn::config::{ConvBlockSpec, ImageShape};
    use crate::nn::engine::Act;
    use crate::nn::model::instance_accuracy;

    fn cfg() -> NetworkConfig {
        NetworkConfig {
            input_shape: ImageShape { height: 28, width: 28, channels: 1 },
            class_count: 10,
            blocks: vec![
                ConvBlockSpec { base_channels: 12, kernel: 3, pool: true },
                ConvBlockSpec { base_channels: 24, kernel: 3, pool: true },
                ConvBlockSpec { base_channels: 48, kernel: 3, pool: false },
            ],
            width_factor: 1.0,
            activation: Act::ReLU,
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = synth_digits(8, 28, 1).unwrap();
        let settings = TrainSettings { epochs: 0, seed: 3, ..Default::default() };
        let init = build_model(&cfg(), 3).unwrap();
        let (trained, log) = train_map(&cfg(), &data, &settings).unwrap();
        assert_eq!(trained.params, init.params);
        assert!(log.epoch_losses.is_empty());
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let data = synth_digits(8, 28, 1).unwrap();
        let settings = TrainSettings {
            epochs: 2,
            learning_rate: 0.0,
            weight_decay: 0.0,
            seed: 3,
            ..Default::default()
        };
        let init = build_model(&cfg(), 3).unwrap();
        let (trained, _) = train_map(&cfg(), &data, &settings).unwrap();
        assert_eq!(trained.params, init.params);
    }

    #[test]
    fn overfits_small_subset() {
        let data = synth_digits(32, 28, 2).unwrap();
        let settings = TrainSettings {
            epochs: 50,
            batch_size: 8,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 5,
            ..Default::default()
        };
        let (trained, log) = train_map(&cfg(), &data, &settings).unwrap();
        let acc = instance_accuracy(&trained, &data).unwrap();
        assert_eq!(acc, 1.0, "should reach 100% training accuracy, got {acc}");
        let first = log.epoch_losses[0];
        let last = *log.epoch_losses.last().unwrap();
        assert!(
            last <= 0.1 * first,
            "loss should drop by >= 90% on the overfit check: {first} -> {last}"
        );
    }
}
