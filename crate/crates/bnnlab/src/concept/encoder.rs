//! The contrastive concept encoder: a small conv trunk up to global average
//! pooling (the latent space) plus a dense-ReLU-dense projection head used
//! only during training. Distances between feature visualizations are
//! measured on trunk outputs.

use crate::concept::augment::{augment, AugmentationPolicy};
use crate::concept::ntxent::nt_xent_loss_grad;
use crate::error::{Error, Result};
use crate::io::{ArrayContainer, ContainerKind};
use crate::nn::engine::{Act, Arch, BackOpts, BackSeed, ConvDim, NetParams};
use crate::rng::{child_seed, rng_from_seed};
use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_side: usize,
    /// Conv trunk channels; a 2x2 mean pool follows every block. The last
    /// entry is the latent dimension Z.
    pub trunk_channels: Vec<usize>,
    /// Projection head hidden width.
    pub head_hidden: usize,
    /// Projection head output width (the space the loss acts on).
    pub head_out: usize,
    #[serde(default = "default_tau")]
    pub temperature: f64,
    /// Augmented views per sample per epoch (M).
    #[serde(default = "default_views")]
    pub views_per_sample: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub augment: AugmentationPolicy,
    #[serde(default)]
    pub seed: u64,
}

fn default_tau() -> f64 {
    0.5
}

fn default_views() -> usize {
    2
}

fn default_batch() -> usize {
    256
}

fn default_epochs() -> usize {
    150
}

fn default_lr() -> f64 {
    0.05
}

fn default_momentum() -> f64 {
    0.9
}

impl EncoderConfig {
    /// A small default encoder for `side`-pixel corpora.
    pub fn for_side(side: usize) -> Self {
        Self {
            input_side: side,
            trunk_channels: vec![16, 32, 64],
            head_hidden: 64,
            head_out: 32,
            temperature: 0.5,
            views_per_sample: 2,
            batch_size: 256,
            epochs: 150,
            learning_rate: 0.05,
            momentum: 0.9,
            augment: AugmentationPolicy::default(),
            seed: 0,
        }
    }

    pub fn latent_dim(&self) -> usize {
        *self.trunk_channels.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim() < 2 {
            return Err(Error::Config("latent dimension must be at least 2".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.views_per_sample < 2 {
            return Err(Error::Config("need at least 2 views per sample".into()));
        }
        if self.trunk_channels.is_empty() {
            return Err(Error::Config("trunk needs at least one block".into()));
        }
        if self.input_side >> self.trunk_channels.len() == 0 {
            return Err(Error::Config(format!(
                "input side {} cannot be pooled {} times",
                self.input_side,
                self.trunk_channels.len()
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        Ok(())
    }

    pub fn arch(&self) -> Arch {
        Arch {
            input_channels: 3,
            convs: self
                .trunk_channels
                .iter()
                .map(|&c| ConvDim { out_channels: c, kernel: 3, pool: true })
                .collect(),
            activation: Act::ReLU,
            head: vec![self.head_hidden, self.head_out],
        }
    }

    pub fn digest(&self) -> String {
        crate::io::sha256_hex(serde_json::to_string(self).expect("serializes").as_bytes())
    }
}

/// Trained encoder parameters.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub params: NetParams,
}

fn init_params(config: &EncoderConfig) -> NetParams {
    let arch = config.arch();
    let mut rng = rng_from_seed(child_seed(config.seed, "encoder-init", 0));
    let mut params = NetParams::zeros_like(&arch);
    for (i, (w, _)) in params.convs.iter_mut().enumerate() {
        let fan_in = (arch.conv_in_channels(i) * 9) as f64;
        let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
        for v in w.iter_mut() {
            *v = dist.sample(&mut rng);
        }
    }
    for (j, (w, _)) in params.heads.iter_mut().enumerate() {
        let fan_in = arch.head_in_dim(j) as f64;
        let dist = Normal::new(0.0, (1.0 / fan_in).sqrt()).expect("valid std");
        for v in w.iter_mut() {
            *v = dist.sample(&mut rng);
        }
    }
    params
}

/// Trains the encoder on an FV corpus with the NT-Xent objective. Returns the
/// parameters and the per-epoch loss log. Deterministic per config seed.
pub fn train_encoder(corpus: &[Array3<f64>], config: &EncoderConfig) -> Result<(EncoderParams, Vec<f64>)> {
    config.validate()?;
    if corpus.len() < 2 * config.batch_size {
        return Err(Error::Input(format!(
            "corpus size {} is below 2 x batch size {}",
            corpus.len(),
            config.batch_size
        )));
    }
    let side = config.input_side;
    for (i, img) in corpus.iter().enumerate() {
        if img.shape() != [3, side, side] {
            return Err(Error::Input(format!(
                "corpus image {i} has shape {:?}, expected [3, {side}, {side}]",
                img.shape()
            )));
        }
    }
    let arch = config.arch();
    let mut params = init_params(config);
    let mut velocity = NetParams::zeros_like(&arch);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut shuffle_rng = rng_from_seed(child_seed(config.seed, "encoder-shuffle", 0));
    let m = config.views_per_sample;
    let mut losses = Vec::with_capacity(config.epochs);
    let mut aug_counter: u64 = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0.0;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let bm = chunk.len() * m;
            let mut x = Array4::<f64>::zeros((bm, 3, side, side));
            let mut origins = Vec::with_capacity(bm);
            for (oi, &idx) in chunk.iter().enumerate() {
                for view in 0..m {
                    let seed = child_seed(config.seed, "encoder-aug", aug_counter);
                    aug_counter += 1;
                    let v = augment(&corpus[idx], &config.augment, seed);
                    x.index_axis_mut(Axis(0), oi * m + view).assign(&v);
                    origins.push(oi);
                }
            }
            let trace = arch.forward(&params, &x, None);
            let (loss, d_out) =
                nt_xent_loss_grad(trace.output(), &origins, config.temperature)?;
            if !loss.is_finite() {
                return Err(Error::Training { epoch, message: format!("loss became {loss}") });
            }
            epoch_loss += loss;
            batches += 1.0;
            let out = arch.backward(
                &params,
                &trace,
                BackSeed::Output(d_out),
                BackOpts { weight_grads: true, ..Default::default() },
            );
            let grads = out.grads.expect("weight gradients requested");
            velocity.scale(config.momentum);
            velocity.scaled_add(1.0, &grads);
            params.scaled_add(-config.learning_rate, &velocity);
        }
        let mean = if batches > 0.0 { epoch_loss / batches } else { 0.0 };
        log::info!("encoder epoch {epoch}: loss {mean:.6}");
        losses.push(mean);
    }
    Ok((EncoderParams { config: config.clone(), params }, losses))
}

impl EncoderParams {
    /// Latent concept vector of one image: trunk features after global
    /// average pooling. No augmentation is applied.
    pub fn embed(&self, image: &Array3<f64>) -> Result<Array1<f64>> {
        let side = self.config.input_side;
        if image.shape() != [3, side, side] {
            return Err(Error::Input(format!(
                "expected a 3x{side}x{side} image, got {:?}",
                image.shape()
            )));
        }
        let batch = image.to_owned().insert_axis(Axis(0));
        let trace = self.config.arch().forward(&self.params, &batch, None);
        Ok(trace.features.row(0).to_owned())
    }

    /// Batch embedding, identical to one-by-one [`embed`] within 1e-6.
    pub fn embed_batch(&self, images: &[Array3<f64>]) -> Result<Array2<f64>> {
        let side = self.config.input_side;
        let mut x = Array4::<f64>::zeros((images.len(), 3, side, side));
        for (i, img) in images.iter().enumerate() {
            if img.shape() != [3, side, side] {
                return Err(Error::Input(format!("image {i} has wrong shape")));
            }
            x.index_axis_mut(Axis(0), i).assign(img);
        }
        let trace = self.config.arch().forward(&self.params, &x, None);
        Ok(trace.features.clone())
    }

    /// Projection-head output used by the training loss; exposed for
    /// inspection.
    pub fn project(&self, image: &Array3<f64>) -> Result<Array1<f64>> {
        let batch = image.to_owned().insert_axis(Axis(0));
        let trace = self.config.arch().forward(&self.params, &batch, None);
        Ok(trace.output().row(0).to_owned())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = ArrayContainer::new(
            ContainerKind::Encoder,
            serde_json::json!({
                "config": self.config,
                "config_digest": self.config.digest(),
            }),
        );
        crate::nn::model::params_into_container(&mut c, "", &self.params);
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = ArrayContainer::load(path)?;
        if c.kind != ContainerKind::Encoder {
            return Err(Error::Format(format!("{}: not an encoder container", path.display())));
        }
        let config: EncoderConfig = serde_json::from_value(c.meta["config"].clone())?;
        config.validate()?;
        let params = crate::nn::model::params_from_container(&c, "", &config.arch())?;
        Ok(Self { config, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_config(corpus: usize) -> EncoderConfig {
        EncoderConfig {
            input_side: 16,
            trunk_channels: vec![6, 12],
            head_hidden: 12,
            head_out: 8,
            temperature: 0.5,
            views_per_sample: 2,
            batch_size: corpus / 2,
            epochs: 8,
            learning_rate: 0.05,
            momentum: 0.9,
            augment: AugmentationPolicy::default(),
            seed: 3,
        }
    }

    /// Vertical stripes vs centered blobs, with nuisance phase/position.
    fn synthetic_family_corpus(n_per: usize, seed: u64) -> (Vec<Array3<f64>>, Vec<usize>) {
        let mut rng = rng_from_seed(seed);
        let mut images = Vec::new();
        let mut family = Vec::new();
        for i in 0..2 * n_per {
            let fam = i % 2;
            let mut img = Array3::<f64>::zeros((3, 16, 16));
            if fam == 0 {
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                for y in 0..16 {
                    for x in 0..16 {
                        let v = 0.5 + 0.4 * ((x as f64) * 0.9 + phase).sin();
                        img[[0, y, x]] = v;
                        img[[1, y, x]] = v * 0.8;
                        img[[2, y, x]] = 0.2;
                    }
                }
            } else {
                let cy = rng.gen_range(5.0..11.0);
                let cx = rng.gen_range(5.0..11.0);
                for y in 0..16 {
                    for x in 0..16 {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        let v = 0.15 + 0.8 * (-d2 / 8.0).exp();
                        img[[0, y, x]] = 0.2;
                        img[[1, y, x]] = v * 0.7;
                        img[[2, y, x]] = v;
                    }
                }
            }
            for v in img.iter_mut() {
                *v = (*v + rng.gen_range(-0.03..0.03)).clamp(0.0, 1.0);
            }
            images.push(img);
            family.push(fam);
        }
        (images, family)
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (corpus, _) = synthetic_family_corpus(8, 1);
        let mut cfg = tiny_config(corpus.len());
        cfg.epochs = 0;
        let (enc, losses) = train_encoder(&corpus, &cfg).unwrap();
        assert!(losses.is_empty());
        assert_eq!(enc.params, init_params(&cfg));
    }

    #[test]
    fn training_is_deterministic() {
        let (corpus, _) = synthetic_family_corpus(6, 2);
        let mut cfg = tiny_config(corpus.len());
        cfg.epochs = 2;
        let (a, la) = train_encoder(&corpus, &cfg).unwrap();
        let (b, lb) = train_encoder(&corpus, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(la, lb);
    }

    #[test]
    fn small_corpus_is_rejected() {
        let (corpus, _) = synthetic_family_corpus(2, 3);
        let mut cfg = tiny_config(corpus.len());
        cfg.batch_size = corpus.len();
        assert!(train_encoder(&corpus, &cfg).is_err());
    }

    #[test]
    fn embed_is_deterministic_and_batch_consistent() {
        let (corpus, _) = synthetic_family_corpus(6, 4);
        let cfg = tiny_config(corpus.len());
        let (enc, _) = train_encoder(&corpus, &cfg).unwrap();
        let a = enc.embed(&corpus[0]).unwrap();
        let b = enc.embed(&corpus[0]).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
        assert!(a.dot(&a) > 0.0, "trained embedding should be nonzero");
        let batch = enc.embed_batch(&corpus[..4].to_vec()).unwrap();
        for i in 0..4 {
            let single = enc.embed(&corpus[i]).unwrap();
            let diff = (&batch.row(i).to_owned() - &single)
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-6);
        }
    }

    #[test]
    fn loss_drops_below_coincident_baseline_and_families_separate() {
        let (corpus, family) = synthetic_family_corpus(10, 5);
        let mut cfg = tiny_config(corpus.len());
        cfg.epochs = 30;
        cfg.batch_size = 10;
        let (enc, losses) = train_encoder(&corpus, &cfg).unwrap();
        // baseline: all embeddings coincident -> ln(#negatives per anchor)
        let baseline = ((cfg.batch_size - 1) * cfg.views_per_sample) as f64;
        let final_loss = *losses.last().unwrap();
        assert!(
            final_loss < baseline.ln(),
            "final loss {final_loss} should be below ln({baseline})"
        );

        // held-out family separation
        let (held, held_family) = synthetic_family_corpus(5, 99);
        let latents: Vec<Array1<f64>> =
            held.iter().map(|v| enc.embed(v).unwrap()).collect();
        let mut within = Vec::new();
        let mut cross = Vec::new();
        for i in 0..latents.len() {
            for j in (i + 1)..latents.len() {
                let s = crate::metrics::cosine_similarity(&latents[i], &latents[j]).unwrap();
                if held_family[i] == held_family[j] {
                    within.push(s);
                } else {
                    cross.push(s);
                }
            }
        }
        let mw = within.iter().sum::<f64>() / within.len() as f64;
        let mc = cross.iter().sum::<f64>() / cross.len() as f64;
        assert!(mw > mc, "within-family sim {mw} should exceed cross-family {mc}");
        let _ = family;
    }

    #[test]
    fn encoder_file_roundtrip() {
        let (corpus, _) = synthetic_family_corpus(6, 8);
        let mut cfg = tiny_config(corpus.len());
        cfg.epochs = 1;
        let (enc, _) = train_encoder(&corpus, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("encoder.blab");
        enc.save(&p).unwrap();
        let back = EncoderParams::load(&p).unwrap();
        assert_eq!(back.config, enc.config);
        assert_eq!(back.params, enc.params);
    }
}
