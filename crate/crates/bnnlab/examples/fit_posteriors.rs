//! Fit all four approximate posteriors around one small classifier and draw
//! weight instances from each.
//!
//! ```bash
//! cargo run --release --example fit_posteriors
//! ```

use bnnlab::data::synth_digits;
use bnnlab::nn::{instance_accuracy, train_map, ConvBlockSpec, ImageShape, NetworkConfig, TrainSettings};
use bnnlab::posterior::{
    kfac_fit, mcdo_fit, multiswag_fit, swag_collect, KfacSampler, Posterior, SwagCollectSettings,
};

fn main() -> bnnlab::Result<()> {
    env_logger::init();
    let train = synth_digits(800, 28, 1)?.expand_to_rgb()?;
    let test = synth_digits(200, 28, 2)?.expand_to_rgb()?;
    let config = NetworkConfig {
        input_shape: ImageShape { height: 28, width: 28, channels: 3 },
        class_count: 10,
        blocks: vec![
            ConvBlockSpec { base_channels: 8, kernel: 3, pool: true },
            ConvBlockSpec { base_channels: 16, kernel: 3, pool: true },
            ConvBlockSpec { base_channels: 32, kernel: 3, pool: false },
        ],
        width_factor: 1.0,
        activation: bnnlab::nn::Act::ReLU,
    };
    let settings = TrainSettings {
        epochs: 6,
        learning_rate: 0.1,
        weight_decay: 1e-4,
        seed: 5,
        ..Default::default()
    };

    // MAP for KFAC / SWAG; a dropout-trained MAP for MCDO
    let (map, _) = train_map(&config, &train, &settings)?;
    println!("map test accuracy: {:.4}", instance_accuracy(&map, &test)?);

    // Monte-Carlo dropout
    let mut with_dropout = settings.clone();
    with_dropout.dropout = 0.1;
    let (mcdo_base, _) = train_map(&config, &train, &with_dropout)?;
    let mcdo = mcdo_fit(&mcdo_base, 0.1)?;
    let inst = bnnlab::posterior::mcdo_sample(&mcdo, 7)?;
    println!("mcdo draw {}: accuracy {:.4}", inst.provenance.id(), instance_accuracy(&inst, &test)?);

    // KFAC Laplace
    let kfac = kfac_fit(&map, &train.take(256)?, 1.0)?;
    let sampler = KfacSampler::prepare(&kfac)?;
    let inst = sampler.sample(7)?;
    println!("kfac draw {}: accuracy {:.4}", inst.provenance.id(), instance_accuracy(&inst, &test)?);

    // SWAG
    let collect = SwagCollectSettings {
        cycles: 30,
        snapshot_period: 5,
        learning_rate: 0.02,
        max_rank: 20,
        batch_size: 32,
        momentum: 0.9,
        weight_decay: 1e-4,
        seed: 11,
    };
    let swag = swag_collect(&map, &train, &collect)?;
    let inst = bnnlab::posterior::swag_sample(&swag, 7)?;
    println!("swag draw {}: accuracy {:.4}", inst.provenance.id(), instance_accuracy(&inst, &test)?);

    // MultiSWAG with 3 components
    let multi = multiswag_fit(&config, &train, 3, &settings, &collect, 99)?;
    for seed in 0..3 {
        let inst = bnnlab::posterior::multiswag_sample(&multi, seed)?;
        println!(
            "multiswag draw {} (mode {}): accuracy {:.4}",
            inst.provenance.id(),
            inst.provenance.component.unwrap(),
            instance_accuracy(&inst, &test)?
        );
    }

    // posterior files round-trip
    let dir = std::env::temp_dir().join("bnnlab-example-posteriors");
    std::fs::create_dir_all(&dir)?;
    for (name, p) in [
        ("mcdo", Posterior::Dropout(mcdo)),
        ("kfac", Posterior::Kfac(kfac)),
        ("swag", Posterior::Swag(swag)),
        ("multiswag", Posterior::MultiSwag(multi)),
    ] {
        let path = dir.join(format!("{name}.blab"));
        p.save(&path)?;
        let back = Posterior::load(&path)?;
        assert_eq!(back.method(), p.method());
        println!("saved {}", path.display());
    }
    Ok(())
}
