//! Train a desk-scale classifier on the procedural digit dataset and
//! evaluate it.
//!
//! ```bash
//! cargo run --release --example train_classifier
//! ```

use bnnlab::data::synth_digits;
use bnnlab::nn::{
    instance_accuracy, train_map, ConvBlockSpec, ImageShape, NetworkConfig, TrainSettings,
};

fn main() -> bnnlab::Result<()> {
    env_logger::init();
    let train = synth_digits(2000, 28, 1)?.expand_to_rgb()?;
    let test = synth_digits(400, 28, 2)?.expand_to_rgb()?;

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
    println!("parameters: {}", config.parameter_count());

    let settings = TrainSettings {
        epochs: 8,
        batch_size: 32,
        learning_rate: 0.1,
        momentum: 0.9,
        weight_decay: 1e-4,
        seed: 3,
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let (model, log) = train_map(&config, &train, &settings)?;
    println!(
        "trained in {:.1?}; loss {:.4} -> {:.4}",
        t0.elapsed(),
        log.epoch_losses.first().unwrap(),
        log.epoch_losses.last().unwrap()
    );
    println!("train accuracy: {:.4}", instance_accuracy(&model, &train)?);
    println!("test accuracy:  {:.4}", instance_accuracy(&model, &test)?);

    // save and reload: bit-exact round trip
    let dir = std::env::temp_dir().join("bnnlab-example-train");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("map.blab");
    model.save(&path)?;
    let back = bnnlab::nn::WeightInstance::load(&path)?;
    assert_eq!(back.params, model.params);
    println!("weights saved to {}", path.display());
    Ok(())
}
