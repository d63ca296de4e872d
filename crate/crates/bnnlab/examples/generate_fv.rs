//! Generate feature visualizations for a trained classifier by activation
//! maximization in the decorrelated, whitened frequency space, and export
//! them as PNGs.
//!
//! ```bash
//! cargo run --release --example generate_fv
//! ```

use bnnlab::data::synth_digits;
use bnnlab::fv::{activation_maximize, save_fv, AmConfig, AmObjective, ColorTransform, TransformSet};
use bnnlab::nn::{train_map, ConvBlockSpec, ImageShape, NetworkConfig, TrainSettings};

fn main() -> bnnlab::Result<()> {
    env_logger::init();
    let train = synth_digits(1500, 28, 1)?.expand_to_rgb()?;
    let config = NetworkConfig {
        input_shape: ImageShape { height: 28, width: 28, channels: 3 },
        class_count: 10,
        blocks: vec![
            ConvBlockSpec { base_channels: 12, kernel: 3, pool: true },
            ConvBlockSpec { base_channels: 24, kernel: 3, pool: true },
            ConvBlockSpec { base_channels: 48, kernel: 3, pool: false },
        ],
        width_factor: 1.0,
        activation: bnnlab::nn::Act::ReLU,
    };
    let settings = TrainSettings {
        epochs: 8,
        learning_rate: 0.1,
        weight_decay: 1e-4,
        seed: 3,
        ..Default::default()
    };
    let (model, _) = train_map(&config, &train, &settings)?;

    // color decorrelation from the training set's channel covariance
    let color = ColorTransform::from_channel_covariance(&train.channel_covariance()?)?;
    let am = AmConfig {
        steps: 256,
        step_size: 0.05,
        image_side: 64,
        transforms: TransformSet::defaults_for_side(64),
        frequency_space: true,
        color,
        seed: 1,
    };

    let out = std::env::temp_dir().join("bnnlab-example-fvs");
    for class in [0usize, 3, 8] {
        let t0 = std::time::Instant::now();
        let fv = activation_maximize(&model, &AmObjective::ClassLogit { class }, &am)?;
        let (png, _) = save_fv(&fv, &out)?;
        println!(
            "class {class}: objective {:.4} in {:.1?} -> {}",
            fv.final_objective,
            t0.elapsed(),
            png.display()
        );
    }

    // a channel objective on the last conv block
    let fv = activation_maximize(&model, &AmObjective::Channel { block: 2, channel: 5 }, &am)?;
    let (png, _) = save_fv(&fv, &out)?;
    println!("channel 5 of block 2: objective {:.4} -> {}", fv.final_objective, png.display());
    Ok(())
}
