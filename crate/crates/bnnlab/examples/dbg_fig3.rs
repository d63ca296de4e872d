use bnnlab::pipeline::{run_experiment, ExperimentConfig};

const TOML: &str = r#"
master_seed = 11

[dataset]
kind = "synth-digits"
train = 1200
test = 400
side = 28

[network]
blocks = [
  { base_channels = 32, pool = true },
  { base_channels = 64, pool = true },
  { base_channels = 128 },
]
width_factors = [1.0]

[train]
epochs = 8
learning_rate = 0.1
batch_size = 32
weight_decay = 1e-4

[posterior]
methods = ["mcdo"]
mcdo_rates = [0.05]
instances = 30
swag = { cycles = 20, snapshot_period = 10, learning_rate = 0.02 }

[am]
steps = 160
image_side = 32
seeds_per_instance = 3

[encoder]
trunk_channels = [16, 32, 64]
head_hidden = 64
head_out = 32
batch_size = 16
epochs = 100

[metrics]
eval_samples = 256
knn_starts = 0
"#;

fn main() {
    env_logger::init();
    let cfg = ExperimentConfig::from_toml_str(TOML).unwrap();
    let dir = std::path::PathBuf::from("/tmp/bnnlab-fig3");
    let _ = std::fs::remove_dir_all(&dir);
    let t0 = std::time::Instant::now();
    run_experiment(&cfg, &dir).unwrap();
    println!("elapsed: {:?}", t0.elapsed());
    let report = bnnlab::pipeline::MetricsReport::load(&dir).unwrap();
    let g = &report.groups[0];
    println!("acc {:.3} entropy {:.3} fvvar {:.4}", g.ensemble_accuracy, g.mean_predictive_entropy, g.fv_var);
    if let Some(c) = &g.centers {
        println!("overlap {:.4} mean_within {:.4} mean_between {:.4} ratio {:.2}",
            c.overlap_fraction, c.mean_within, c.mean_between, c.mean_between / c.mean_within);
    }
}
