use bnnlab::data::synth_digits;
use bnnlab::nn::*;

fn main() {
    // 3-block net, receptive field ~15px
    let cfg = NetworkConfig {
        input_shape: ImageShape { height: 28, width: 28, channels: 1 },
        class_count: 10,
        blocks: vec![
            ConvBlockSpec { base_channels: 12, kernel: 3, pool: true },
            ConvBlockSpec { base_channels: 24, kernel: 3, pool: true },
            ConvBlockSpec { base_channels: 48, kernel: 3, pool: false },
        ],
        width_factor: 1.0,
        activation: Act::ReLU,
    };
    let data = synth_digits(32, 28, 2).unwrap();
    for lr in [0.05, 0.1, 0.2] {
        let settings = TrainSettings {
            epochs: 60, batch_size: 8, learning_rate: lr, momentum: 0.9,
            weight_decay: 0.0, hflip: false, dropout: 0.0, seed: 5,
        };
        let (trained, log) = train_map(&cfg, &data, &settings).unwrap();
        let acc = instance_accuracy(&trained, &data).unwrap();
        println!("overfit lr {lr}: first {:.4} last {:.6} acc {acc}", log.epoch_losses[0], log.epoch_losses.last().unwrap());
    }
    // richer run: 1000 train, 400 test
    let train = synth_digits(1000, 28, 100).unwrap();
    let test = synth_digits(400, 28, 101).unwrap();
    let t0 = std::time::Instant::now();
    let settings = TrainSettings {
        epochs: 12, batch_size: 32, learning_rate: 0.1, momentum: 0.9,
        weight_decay: 1e-4, hflip: false, dropout: 0.0, seed: 7,
    };
    let (trained, log) = train_map(&cfg, &train, &settings).unwrap();
    println!("1000-sample: {:?}s losses {:.3} -> {:.3}, train acc {:.3}, test acc {:.3}",
        t0.elapsed().as_secs(), log.epoch_losses[0], log.epoch_losses.last().unwrap(),
        instance_accuracy(&trained, &train).unwrap(), instance_accuracy(&trained, &test).unwrap());
}
