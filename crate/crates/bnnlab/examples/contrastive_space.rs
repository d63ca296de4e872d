//! Train the contrastive concept encoder on a small corpus of feature
//! visualizations and inspect the learned latent space.
//!
//! ```bash
//! cargo run --release --example contrastive_space
//! ```

use bnnlab::concept::{augment, train_encoder, AugmentationPolicy, EncoderConfig};
use bnnlab::data::synth_digits;
use bnnlab::fv::{activation_maximize, AmConfig, AmObjective, TransformSet};
use bnnlab::metrics::{cosine_similarity, fv_distance};
use bnnlab::nn::{train_map, ConvBlockSpec, ImageShape, NetworkConfig, TrainSettings};
use bnnlab::posterior::{mcdo_fit, mcdo_sample};

fn main() -> bnnlab::Result<()> {
    env_logger::init();
    let train = synth_digits(1200, 28, 1)?.expand_to_rgb()?;
    let config = NetworkConfig {
        input_shape: ImageShape { height: 28, width: 28, channels: 3 },
        class_count: 10,
        blocks: vec![
            ConvBlockSpec { base_channels: 10, kernel: 3, pool: true },
            ConvBlockSpec { base_channels: 20, kernel: 3, pool: true },
            ConvBlockSpec { base_channels: 40, kernel: 3, pool: false },
        ],
        width_factor: 1.0,
        activation: bnnlab::nn::Act::ReLU,
    };
    let mut settings = TrainSettings {
        epochs: 8,
        learning_rate: 0.1,
        weight_decay: 1e-4,
        seed: 2,
        ..Default::default()
    };
    settings.dropout = 0.1;
    let (base, _) = train_map(&config, &train, &settings)?;
    let posterior = mcdo_fit(&base, 0.1)?;

    // a small FV corpus: 12 instances, 2 AM restarts each
    let am = AmConfig {
        steps: 64,
        step_size: 0.05,
        image_side: 32,
        transforms: TransformSet::defaults_for_side(32),
        frequency_space: true,
        color: bnnlab::fv::ColorTransform::from_channel_covariance(&train.channel_covariance()?)?,
        seed: 0,
    };
    let objective = AmObjective::ClassLogit { class: 4 };
    let mut corpus = Vec::new();
    let mut owner = Vec::new();
    for t in 0..12u64 {
        let inst = mcdo_sample(&posterior, 100 + t)?;
        for s in 0..2u64 {
            let fv = activation_maximize(&inst, &objective, &am.with_seed(1000 + t * 2 + s))?;
            corpus.push(fv.image);
            owner.push(t);
        }
    }
    println!("corpus: {} FVs from 12 instances", corpus.len());

    let enc_cfg = EncoderConfig {
        input_side: 32,
        trunk_channels: vec![12, 24, 48],
        head_hidden: 48,
        head_out: 24,
        epochs: 40,
        batch_size: 12,
        seed: 9,
        ..EncoderConfig::for_side(32)
    };
    let (encoder, losses) = train_encoder(&corpus, &enc_cfg)?;
    println!(
        "encoder loss: {:.4} -> {:.4} (coincident-embedding baseline {:.4})",
        losses.first().unwrap(),
        losses.last().unwrap(),
        (((enc_cfg.batch_size - 1) * enc_cfg.views_per_sample) as f64).ln()
    );

    // same-instance FVs should sit closer than different-instance FVs
    let latents: Vec<_> = corpus.iter().map(|v| encoder.embed(v)).collect::<bnnlab::Result<Vec<_>>>()?;
    let mut same = Vec::new();
    let mut diff = Vec::new();
    for i in 0..latents.len() {
        for j in (i + 1)..latents.len() {
            let d = fv_distance(&latents[i], &latents[j])?;
            if owner[i] == owner[j] {
                same.push(d);
            } else {
                diff.push(d);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("mean cosine distance, same instance:      {:.4}", mean(&same));
    println!("mean cosine distance, different instance: {:.4}", mean(&diff));

    // augmentations preserve the neighborhood
    let policy = AugmentationPolicy::default();
    let v0 = &corpus[0];
    let aug = augment(v0, &policy, 5);
    let s = cosine_similarity(&encoder.embed(v0)?, &encoder.embed(&aug)?)?;
    println!("similarity of an FV to its own augmentation: {s:.4}");
    Ok(())
}
