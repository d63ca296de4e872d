//! `lab`: drives experiments from TOML configs and re-runs individual stages
//! on existing run directories.
//!
//! Exit codes: 0 success, 2 configuration error, 3 stage failure.

use bnnlab::error::Error;
use bnnlab::fv::{activation_maximize, am_sweep, save_fv, AmGridPoint, AmObjective};
use bnnlab::nn::WeightInstance;
use bnnlab::pipeline::{
    self, enumerate_groups, render_report, run_patch_experiment, ExperimentConfig,
    PatchExperimentConfig,
};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "lab", version, about = "Posterior-diversity laboratory for desk-scale Bayesian classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment from a config file.
    Run {
        /// Experiment config (TOML).
        config: PathBuf,
        /// Run directory (defaults to the config's `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Posterior stages on an existing or fresh run directory.
    Posterior {
        #[command(subcommand)]
        cmd: PosteriorCmd,
    },
    /// Feature-visualization stages.
    Fv {
        #[command(subcommand)]
        cmd: FvCmd,
    },
    /// Concept-encoder stages.
    Encoder {
        #[command(subcommand)]
        cmd: EncoderCmd,
    },
    /// Embed the run's FV corpus with its trained encoder.
    Embed {
        #[arg(long)]
        run: PathBuf,
        /// Embed an external directory of PNGs instead of the run corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Recompute the metrics report of a run directory.
    Metrics {
        /// Run directory holding the artifacts.
        #[arg(long = "report")]
        run: PathBuf,
    },
    /// Cluster the run's instance latents.
    Cluster {
        #[arg(long)]
        run: PathBuf,
        /// Fixed cluster count; omit to select by silhouette.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render plots, CSV exports and the summary for a run.
    Report { run: PathBuf },
    /// Run the decision-manipulation recipe on the synthetic patch dataset.
    Manipulate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dropout rate of the sampled instances.
        #[arg(long, default_value_t = 0.3)]
        rate: f64,
        #[arg(long, default_value_t = 24)]
        instances: usize,
        /// Write the outcome as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PosteriorCmd {
    /// Fit one posterior group into the run directory.
    Fit(PosteriorFitArgs),
    /// Draw instances from a fitted posterior group.
    Sample(PosteriorSampleArgs),
}

#[derive(Args)]
struct PosteriorFitArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    run: PathBuf,
    /// kfac | mcdo | swag | multiswag
    #[arg(long)]
    method: String,
    /// Width factor (defaults to the first of the config grid).
    #[arg(long)]
    width: Option<f64>,
    /// Dropout rate for mcdo (defaults to the first configured rate).
    #[arg(long)]
    rate: Option<f64>,
}

#[derive(Args)]
struct PosteriorSampleArgs {
    #[arg(long)]
    run: PathBuf,
    /// Group tag, e.g. `mcdo-5-b1`, `multiswag-k5-b1`.
    #[arg(long)]
    method: String,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum FvCmd {
    /// Generate one feature visualization for a sampled instance.
    Generate(FvGenerateArgs),
    /// Run an AM hyperparameter sweep for one instance.
    Sweep(FvSweepArgs),
}

#[derive(Args)]
struct FvGenerateArgs {
    #[arg(long)]
    run: PathBuf,
    /// Instance weight file (path under `weights/`) or instance id.
    #[arg(long)]
    instance: String,
    /// Class logit to maximize.
    #[arg(long)]
    class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 512)]
    steps: usize,
    #[arg(long, default_value_t = 0.05)]
    step_size: f64,
    #[arg(long, default_value_t = 128)]
    side: usize,
}

#[derive(Args)]
struct FvSweepArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    instance: String,
    #[arg(long)]
    class: usize,
    /// Step sizes of the grid.
    #[arg(long, value_delimiter = ',', default_values_t = [0.005, 0.05, 0.5])]
    alphas: Vec<f64>,
    /// Step counts of the grid.
    #[arg(long, value_delimiter = ',', default_values_t = [128, 512])]
    steps: Vec<usize>,
    /// Initial-point seeds of the grid.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2])]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 128)]
    side: usize,
}

#[derive(Subcommand)]
enum EncoderCmd {
    /// Train the contrastive encoder on the run's FV corpus.
    Train {
        #[arg(long)]
        run: PathBuf,
        /// Experiment config (defaults to `<run>/config.toml`).
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn find_instance_file(run: &std::path::Path, instance: &str) -> Result<PathBuf, Error> {
    let direct = run.join(instance);
    if direct.exists() {
        return Ok(direct);
    }
    let as_path = PathBuf::from(instance);
    if as_path.exists() {
        return Ok(as_path);
    }
    // search weights/ for a file whose stem or stored provenance id matches
    let mut stack = vec![run.join("weights")];
    while let Some(dir) = stack.pop() {
        if !dir.exists() {
            continue;
        }
        for entry in std::fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().map(|e| e == "blab").unwrap_or(false) {
                if p.file_stem().map(|s| s == instance).unwrap_or(false) {
                    return Ok(p);
                }
                if let Ok(w) = WeightInstance::load(&p) {
                    if w.provenance.id() == instance {
                        return Ok(p);
                    }
                }
            }
        }
    }
    Err(Error::Input(format!("no instance '{instance}' under {}", run.display())))
}

fn run_command(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let run_dir = out.or_else(|| cfg.output_dir.clone()).ok_or_else(|| {
                Error::Config("no output directory: pass --out or set output_dir".into())
            })?;
            let manifest = pipeline::run_experiment(&cfg, &run_dir)?;
            println!(
                "run complete: {} artifacts in {}",
                manifest.artifacts.len(),
                run_dir.display()
            );
            for s in &manifest.stages {
                println!("  stage {:<24} {}", s.name, s.status);
            }
        }
        Command::Posterior { cmd } => match cmd {
            PosteriorCmd::Fit(a) => {
                let cfg = ExperimentConfig::from_file(&a.config)?;
                let method: pipeline::Method = a.method.parse()?;
                let width = a.width.unwrap_or(cfg.network.width_factors[0]);
                let spec = enumerate_groups(&cfg)
                    .into_iter()
                    .find(|g| {
                        g.method == method
                            && (g.width - width).abs() < 1e-12
                            && a.rate.map(|r| g.rate == Some(r)).unwrap_or(true)
                    })
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "method '{}' with width {width} is not part of the config grid",
                            a.method
                        ))
                    })?;
                let (train, _) = cfg.dataset.load(cfg.master_seed)?;
                let posterior = pipeline::fit_group_posterior(&cfg, &spec, &train, cfg.master_seed)?;
                std::fs::create_dir_all(a.run.join("posteriors"))?;
                std::fs::write(
                    a.run.join("config.toml"),
                    toml::to_string_pretty(&cfg).map_err(|e| Error::Serde(e.to_string()))?,
                )?;
                let path = a.run.join("posteriors").join(format!("{}.blab", spec.tag()));
                posterior.save(&path)?;
                println!("fitted {} -> {}", spec.tag(), path.display());
            }
            PosteriorCmd::Sample(a) => {
                let path = a.run.join("posteriors").join(format!("{}.blab", a.method));
                let posterior = bnnlab::posterior::Posterior::load(&path)?;
                let dir = a.run.join("weights").join(&a.method);
                std::fs::create_dir_all(&dir)?;
                for t in 0..a.count {
                    let seed = bnnlab::rng::child_seed(a.seed, "cli-sample", t as u64);
                    let inst = posterior.sample(seed)?;
                    let file = dir.join(format!("s{seed}.blab"));
                    inst.save(&file)?;
                    println!("{} -> {}", inst.provenance.id(), file.display());
                }
            }
        },
        Command::Fv { cmd } => match cmd {
            FvCmd::Generate(a) => {
                let file = find_instance_file(&a.run, &a.instance)?;
                let inst = WeightInstance::load(&file)?;
                let mut am = bnnlab::fv::AmConfig::for_side(a.side);
                am.steps = a.steps;
                am.step_size = a.step_size;
                am.seed = a.seed;
                let fv =
                    activation_maximize(&inst, &AmObjective::ClassLogit { class: a.class }, &am)?;
                let (png, _) = save_fv(&fv, &a.run.join("fvs").join("cli"))?;
                println!("{} (objective {:.6})", png.display(), fv.final_objective);
            }
            FvCmd::Sweep(a) => {
                let file = find_instance_file(&a.run, &a.instance)?;
                let inst = WeightInstance::load(&file)?;
                let base = bnnlab::fv::AmConfig::for_side(a.side);
                let mut grid = Vec::new();
                for &steps in &a.steps {
                    for &alpha in &a.alphas {
                        for &seed in &a.seeds {
                            grid.push(AmGridPoint { steps, step_size: alpha, seed });
                        }
                    }
                }
                let fvs =
                    am_sweep(&inst, &AmObjective::ClassLogit { class: a.class }, &base, &grid)?;
                let dir = a.run.join("fvs").join("sweep");
                for fv in &fvs {
                    let tagged = dir.join(format!(
                        "steps{}-alpha{}-seed{}",
                        fv.config.steps, fv.config.step_size, fv.init_seed
                    ));
                    let (png, _) = save_fv(fv, &tagged)?;
                    println!("{}", png.display());
                }
            }
        },
        Command::Encoder { cmd } => match cmd {
            EncoderCmd::Train { run, config } => {
                let cfg_path = config.unwrap_or_else(|| run.join("config.toml"));
                let cfg = ExperimentConfig::from_file(&cfg_path)?;
                let corpus = pipeline::run::load_fv_corpus(&run)?;
                if corpus.is_empty() {
                    return Err(Error::Input(format!("no FV images under {}", run.display())));
                }
                let images: Vec<_> = corpus.into_iter().map(|(_, img)| img).collect();
                let mut enc_cfg = cfg.encoder.to_encoder_config(
                    cfg.am.image_side,
                    bnnlab::rng::child_seed(cfg.master_seed, "encoder", 0),
                );
                enc_cfg.batch_size = enc_cfg.batch_size.min((images.len() / 2).max(2));
                let (enc, losses) = bnnlab::concept::train_encoder(&images, &enc_cfg)?;
                enc.save(&run.join("encoder.blab"))?;
                println!(
                    "encoder trained on {} FVs; final loss {:.6}",
                    images.len(),
                    losses.last().copied().unwrap_or(f64::NAN)
                );
            }
        },
        Command::Embed { run, corpus } => {
            let enc = bnnlab::concept::EncoderParams::load(&run.join("encoder.blab"))?;
            let sources = match corpus {
                Some(dir) => {
                    let mut out = Vec::new();
                    for entry in std::fs::read_dir(&dir)? {
                        let p = entry?.path();
                        if p.extension().map(|e| e == "png").unwrap_or(false) {
                            out.push((p.clone(), bnnlab::io::load_png(&p)?));
                        }
                    }
                    out.sort_by(|a, b| a.0.cmp(&b.0));
                    out
                }
                None => pipeline::run::load_fv_corpus(&run)?,
            };
            if sources.is_empty() {
                return Err(Error::Input("no images to embed".into()));
            }
            std::fs::create_dir_all(run.join("latents"))?;
            let mut rows = Vec::new();
            for (path, img) in &sources {
                let z = enc.embed(img)?;
                let mut row = vec![path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()];
                row.extend(z.iter().map(|v| bnnlab::io::fmt_f64(*v)));
                rows.push(row);
            }
            let z_dim = enc.config.latent_dim();
            let mut header = vec!["fv_id".to_string()];
            header.extend((1..=z_dim).map(|i| format!("z{i}")));
            let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
            let out = run.join("latents").join("cli_latents.csv");
            bnnlab::io::write_csv(&out, &header_refs, &rows)?;
            println!("embedded {} images -> {}", sources.len(), out.display());
        }
        Command::Metrics { run } => {
            let report = pipeline::recompute_metrics(&run)?;
            println!("metrics recomputed: {} groups", report.groups.len());
            for g in &report.groups {
                println!(
                    "  {} width {}: FVVar {:.6}, entropy {:.6}, acc {:.4}, ece {:.4}",
                    g.method,
                    g.width_factor,
                    g.fv_var,
                    g.mean_predictive_entropy,
                    g.ensemble_accuracy,
                    g.ensemble_ece
                );
            }
        }
        Command::Cluster { run, k, seed } => {
            let report = pipeline::MetricsReport::load(&run)?;
            for g in &report.groups {
                if g.embedding_2d.len() < 3 {
                    println!("{}: too few instances to cluster", g.method);
                    continue;
                }
                let mut m = ndarray::Array2::<f64>::zeros((g.embedding_2d.len(), 2));
                for (i, (x, y)) in g.embedding_2d.iter().enumerate() {
                    m[[i, 0]] = *x;
                    m[[i, 1]] = *y;
                }
                match k {
                    Some(k) => {
                        let res = pipeline::cluster_kmeans(&m, k, seed)?;
                        println!("{}: k={k} inertia {:.6}", g.method, res.inertia);
                    }
                    None => {
                        let hi = (g.embedding_2d.len() - 1).min(8);
                        let sel = pipeline::select_k(&m, 2..=hi, seed)?;
                        println!(
                            "{}: recommended k = {}{} scores {:?}",
                            g.method,
                            sel.recommended_k,
                            if sel.low_confidence { " (low confidence)" } else { "" },
                            sel.scores
                        );
                    }
                }
            }
        }
        Command::Report { run } => {
            let outcome = render_report(&run)?;
            println!("emitted {} plots, {} csv files", outcome.plots.len(), outcome.csvs.len());
            for n in &outcome.notices {
                println!("  notice: {n}");
            }
        }
        Command::Manipulate { seed, rate, instances, out } => {
            let cfg = PatchExperimentConfig {
                master_seed: seed,
                dropout_rate: rate,
                instance_count: instances,
                ..Default::default()
            };
            let outcome = run_patch_experiment(&cfg)?;
            let json = serde_json::to_string_pretty(&outcome)?;
            println!("{json}");
            if let Some(path) = out {
                std::fs::write(&path, &json)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run_command(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
