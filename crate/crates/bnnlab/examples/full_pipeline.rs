//! Minimal end-to-end run: train, fit a dropout posterior, sample instances,
//! generate feature visualizations, learn the concept space, compute metrics
//! and render the report — all from one embedded config into a run directory.
//!
//! ```bash
//! cargo run --release --example full_pipeline
//! ```

use bnnlab::pipeline::{run_experiment, ExperimentConfig, MetricsReport};

const CONFIG: &str = r#"
master_seed = 42

[dataset]
kind = "synth-digits"
train = 600
test = 200
side = 28

[network]
blocks = [
  { base_channels = 8, pool = true },
  { base_channels = 16, pool = true },
  { base_channels = 32 },
]
width_factors = [1.0]

[train]
epochs = 5
learning_rate = 0.1
batch_size = 32
weight_decay = 1e-4

[posterior]
methods = ["mcdo", "kfac"]
mcdo_rates = [0.1]
damping = 1.0
instances = 8
swag = { cycles = 10, snapshot_period = 5, learning_rate = 0.02 }

[am]
steps = 48
image_side = 32
seeds_per_instance = 2

[encoder]
trunk_channels = [8, 16, 32]
head_hidden = 32
head_out = 16
batch_size = 16
epochs = 25

[metrics]
eval_samples = 128
knn_starts = 4
"#;

fn main() -> bnnlab::Result<()> {
    env_logger::init();
    let config = ExperimentConfig::from_toml_str(CONFIG)?;
    let run_dir = std::env::temp_dir().join("bnnlab-example-run");
    let _ = std::fs::remove_dir_all(&run_dir);

    let t0 = std::time::Instant::now();
    let manifest = run_experiment(&config, &run_dir)?;
    println!("pipeline finished in {:.1?}", t0.elapsed());
    for s in &manifest.stages {
        println!("  {:<24} {}", s.name, s.status);
    }
    println!("{} artifacts indexed; manifest verifies: {}",
        manifest.artifacts.len(),
        manifest.verify(&run_dir)?.is_empty()
    );

    let report = MetricsReport::load(&run_dir)?;
    for g in &report.groups {
        println!(
            "group {:<12} FVVar {:.5}  entropy {:.4}  accuracy {:.4}  ece {:.4}",
            g.method, g.fv_var, g.mean_predictive_entropy, g.ensemble_accuracy, g.ensemble_ece
        );
        if let Some(c) = &g.centers {
            println!(
                "    within/between overlap {:.4}, between/within ratio {:.2}",
                c.overlap_fraction,
                c.mean_between / c.mean_within
            );
        }
        if let Some(r) = g.knn_correlation {
            println!("    diversity-uncertainty correlation r = {r:.4}");
        }
    }
    println!("plots and CSVs under {}", run_dir.display());
    Ok(())
}
