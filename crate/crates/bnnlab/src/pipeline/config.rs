//! Experiment configuration: a strict TOML schema (unknown keys rejected)
//! describing the dataset, network grid, posterior methods, AM, encoder and
//! metric settings of one run. The master seed fully determines every
//! downstream seed through `rng::child_seed`.

use crate::concept::EncoderConfig;
use crate::data::{self, DatasetSplit};
use crate::error::{Error, Result};
use crate::fv::TransformSet;
use crate::nn::{ConvBlockSpec, ImageShape, NetworkConfig, TrainSettings};
use crate::posterior::SwagCollectSettings;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Environment variable naming the data cache root for file-backed datasets.
pub const DATA_ROOT_ENV: &str = "BNNLAB_DATA_ROOT";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    /// Procedural glyph digits (MNIST shape).
    SynthDigits,
    /// Procedural oriented textures (CIFAR shape).
    SynthTextures,
    /// Two-class patch/tint data for the manipulation recipe.
    SynthPatch,
    /// IDX image/label pairs (`train-images.idx3-ubyte` etc. under `path`).
    Idx,
    /// CIFAR-10 binary batches under `path`.
    Cifar,
    /// Directory of per-class PNG folders under `path`.
    PngDir,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Synthetic sample counts.
    #[serde(default = "default_train_n")]
    pub train: usize,
    #[serde(default = "default_test_n")]
    pub test: usize,
    /// Synthetic image side.
    #[serde(default = "default_side")]
    pub side: usize,
    /// Path for file-backed kinds, absolute or relative to `BNNLAB_DATA_ROOT`.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Expand grayscale to rgb (required for feature visualization).
    #[serde(default = "default_true")]
    pub rgb: bool,
    /// Patch dataset knobs.
    #[serde(default = "default_patch_prob")]
    pub patch_prob: f64,
    #[serde(default = "default_patch_prob")]
    pub tint_prob: f64,
}

fn default_train_n() -> usize {
    2000
}

fn default_test_n() -> usize {
    400
}

fn default_side() -> usize {
    28
}

fn default_true() -> bool {
    true
}

fn default_patch_prob() -> f64 {
    0.65
}

impl DatasetConfig {
    fn resolve_path(&self) -> Result<PathBuf> {
        let p = self
            .path
            .as_ref()
            .ok_or_else(|| Error::Config("dataset kind requires a path".into()))?;
        if p.is_absolute() {
            return Ok(p.clone());
        }
        match std::env::var(DATA_ROOT_ENV) {
            Ok(root) => Ok(Path::new(&root).join(p)),
            Err(_) => Ok(p.clone()),
        }
    }

    /// Loads or generates the train and test splits.
    pub fn load(&self, master_seed: u64) -> Result<(DatasetSplit, DatasetSplit)> {
        let train_seed = crate::rng::child_seed(master_seed, "dataset-train", 0);
        let test_seed = crate::rng::child_seed(master_seed, "dataset-test", 0);
        let (train, test) = match self.kind {
            DatasetKind::SynthDigits => (
                data::synth_digits(self.train, self.side, train_seed)?,
                data::synth_digits(self.test, self.side, test_seed)?,
            ),
            DatasetKind::SynthTextures => (
                data::synth_textures(self.train, self.side, train_seed)?,
                data::synth_textures(self.test, self.side, test_seed)?,
            ),
            DatasetKind::SynthPatch => {
                let spec = data::PatchSpec { side: self.side, ..Default::default() };
                let (train, _) = data::synth_patch_dataset(
                    self.train,
                    train_seed,
                    spec,
                    self.patch_prob,
                    self.tint_prob,
                )?;
                let (test, _) = data::synth_patch_dataset(
                    self.test,
                    test_seed,
                    spec,
                    self.patch_prob,
                    self.tint_prob,
                )?;
                (train, test)
            }
            DatasetKind::Idx => {
                let root = self.resolve_path()?;
                let train = data::load_idx_split(
                    &root.join("train-images.idx3-ubyte"),
                    &root.join("train-labels.idx1-ubyte"),
                    10,
                )?
                .take(self.train)?;
                let test = data::load_idx_split(
                    &root.join("t10k-images.idx3-ubyte"),
                    &root.join("t10k-labels.idx1-ubyte"),
                    10,
                )?
                .take(self.test)?;
                (train, test)
            }
            DatasetKind::Cifar => {
                let root = self.resolve_path()?;
                let mut train_paths = Vec::new();
                for i in 1..=5 {
                    let p = root.join(format!("data_batch_{i}.bin"));
                    if p.exists() {
                        train_paths.push(p);
                    }
                }
                if train_paths.is_empty() {
                    return Err(Error::Config(format!(
                        "no data_batch_*.bin under {}",
                        root.display()
                    )));
                }
                let refs: Vec<&Path> = train_paths.iter().map(|p| p.as_path()).collect();
                let train = data::load_cifar_batches(&refs, 10)?.take(self.train)?;
                let test =
                    data::load_cifar_batches(&[&root.join("test_batch.bin")], 10)?.take(self.test)?;
                (train, test)
            }
            DatasetKind::PngDir => {
                let root = self.resolve_path()?;
                let all = data::load_png_directory(&root)?;
                let n = all.len();
                let test_n = self.test.min(n / 5).max(1);
                let train = all.select(&(test_n..n.min(test_n + self.train)).collect::<Vec<_>>())?;
                let test = all.select(&(0..test_n).collect::<Vec<_>>())?;
                (train, test)
            }
        };
        if self.rgb {
            Ok((train.expand_to_rgb()?, test.expand_to_rgb()?))
        } else {
            Ok((train, test))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub blocks: Vec<ConvBlockSpec>,
    /// Width factor grid; one experiment group per factor.
    #[serde(default = "default_widths")]
    pub width_factors: Vec<f64>,
}

fn default_widths() -> Vec<f64> {
    vec![1.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kfac,
    Mcdo,
    Swag,
    Multiswag,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Kfac => "kfac",
            Method::Mcdo => "mcdo",
            Method::Swag => "swag",
            Method::Multiswag => "multiswag",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kfac" => Ok(Method::Kfac),
            "mcdo" => Ok(Method::Mcdo),
            "swag" => Ok(Method::Swag),
            "multiswag" => Ok(Method::Multiswag),
            other => Err(Error::Config(format!("unknown posterior method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorSection {
    pub methods: Vec<Method>,
    /// Dropout rates; one experiment group per rate.
    #[serde(default = "default_rates")]
    pub mcdo_rates: Vec<f64>,
    /// MultiSWAG component count K.
    #[serde(default = "default_k")]
    pub k: usize,
    /// SWAG deviation rank R.
    #[serde(default = "default_rank")]
    pub max_rank: usize,
    /// KFAC damping.
    #[serde(default = "default_damping")]
    pub damping: f64,
    /// Samples of the training set used for the KFAC fit.
    #[serde(default = "default_kfac_samples")]
    pub kfac_fit_samples: usize,
    /// Instances drawn per group (T).
    #[serde(default = "default_instances")]
    pub instances: usize,
    /// SWAG collection phase.
    pub swag: SwagCollectSettings,
}

fn default_rates() -> Vec<f64> {
    vec![0.05]
}

fn default_k() -> usize {
    10
}

fn default_rank() -> usize {
    20
}

fn default_damping() -> f64 {
    1e-3
}

fn default_kfac_samples() -> usize {
    512
}

fn default_instances() -> usize {
    30
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmSection {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    pub image_side: usize,
    /// AM restarts per instance (Fig.-3 style replicates).
    #[serde(default = "default_seeds_per_instance")]
    pub seeds_per_instance: usize,
    /// Class logit to maximize.
    #[serde(default)]
    pub target_class: usize,
    #[serde(default)]
    pub transforms: Option<TransformSet>,
    #[serde(default = "default_true")]
    pub frequency_space: bool,
}

fn default_steps() -> usize {
    128
}

fn default_step_size() -> f64 {
    0.05
}

fn default_seeds_per_instance() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    pub trunk_channels: Vec<usize>,
    pub head_hidden: usize,
    pub head_out: usize,
    #[serde(default = "default_tau")]
    pub temperature: f64,
    #[serde(default = "default_views")]
    pub views_per_sample: usize,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "default_enc_lr")]
    pub learning_rate: f64,
}

fn default_tau() -> f64 {
    0.5
}

fn default_views() -> usize {
    2
}

fn default_enc_lr() -> f64 {
    0.05
}

impl EncoderSection {
    pub fn to_encoder_config(&self, side: usize, seed: u64) -> EncoderConfig {
        EncoderConfig {
            input_side: side,
            trunk_channels: self.trunk_channels.clone(),
            head_hidden: self.head_hidden,
            head_out: self.head_out,
            temperature: self.temperature,
            views_per_sample: self.views_per_sample,
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            momentum: 0.9,
            augment: crate::concept::AugmentationPolicy::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    #[serde(default = "default_bins")]
    pub ece_bins: usize,
    /// Start points S of the k-NN diversity sweep (0 disables the sweep).
    #[serde(default = "default_starts")]
    pub knn_starts: usize,
    /// Evaluation subset size for entropy/accuracy/ECE.
    #[serde(default = "default_eval")]
    pub eval_samples: usize,
    /// Fixed cluster count; 0 selects by silhouette.
    #[serde(default)]
    pub cluster_k: usize,
    #[serde(default = "default_perplexity")]
    pub tsne_perplexity: f64,
}

fn default_bins() -> usize {
    15
}

fn default_starts() -> usize {
    0
}

fn default_eval() -> usize {
    256
}

fn default_perplexity() -> f64 {
    10.0
}

/// The complete experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub network: NetworkSection,
    pub train: TrainSettings,
    pub posterior: PosteriorSection,
    pub am: AmSection,
    pub encoder: EncoderSection,
    #[serde(default = "default_metrics")]
    pub metrics: MetricsSection,
}

fn default_metrics() -> MetricsSection {
    MetricsSection {
        ece_bins: default_bins(),
        knn_starts: default_starts(),
        eval_samples: default_eval(),
        cluster_k: 0,
        tsne_perplexity: default_perplexity(),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(s).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_toml_str(&s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.network.blocks.is_empty() {
            return Err(Error::Config("network.blocks must be nonempty".into()));
        }
        if self.network.width_factors.is_empty() {
            return Err(Error::Config("network.width_factors must be nonempty".into()));
        }
        if self.posterior.methods.is_empty() {
            return Err(Error::Config("posterior.methods must be nonempty".into()));
        }
        if self.posterior.instances == 0 {
            return Err(Error::Config("posterior.instances must be positive".into()));
        }
        if self.posterior.methods.contains(&Method::Mcdo) {
            if self.posterior.mcdo_rates.is_empty() {
                return Err(Error::Config("mcdo requires at least one rate".into()));
            }
            if self.posterior.mcdo_rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(Error::Config("mcdo rates must lie in [0, 1]".into()));
            }
        }
        if self.am.seeds_per_instance == 0 {
            return Err(Error::Config("am.seeds_per_instance must be positive".into()));
        }
        self.train.validate()?;
        // network shape itself is validated per width when instantiated
        self.network_config(self.network.width_factors[0], (3, self.dataset.side, self.dataset.side))
            .validate()?;
        Ok(())
    }

    /// The classifier configuration at one width for a given image shape.
    pub fn network_config(&self, beta: f64, chw: (usize, usize, usize)) -> NetworkConfig {
        NetworkConfig {
            input_shape: ImageShape { height: chw.1, width: chw.2, channels: chw.0 },
            class_count: match self.dataset.kind {
                DatasetKind::SynthPatch => 2,
                _ => 10,
            },
            blocks: self.network.blocks.clone(),
            width_factor: beta,
            activation: crate::nn::Act::ReLU,
        }
    }

    pub fn digest(&self) -> String {
        crate::io::sha256_hex(serde_json::to_string(self).expect("serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const DEMO_TOML: &str = r#"
master_seed = 7

[dataset]
kind = "synth-digits"
train = 64
test = 32
side = 28

[network]
blocks = [
  { base_channels = 8, pool = true },
  { base_channels = 16, pool = true },
]
width_factors = [1.0]

[train]
epochs = 1
learning_rate = 0.05
batch_size = 16

[posterior]
methods = ["mcdo"]
mcdo_rates = [0.05]
instances = 2
swag = { cycles = 4, snapshot_period = 2, learning_rate = 0.02 }

[am]
steps = 4
image_side = 16
seeds_per_instance = 1

[encoder]
trunk_channels = [4, 8]
head_hidden = 8
head_out = 4
batch_size = 2
epochs = 1
"#;

    #[test]
    fn demo_config_parses_and_validates() {
        let cfg = ExperimentConfig::from_toml_str(DEMO_TOML).unwrap();
        assert_eq!(cfg.master_seed, 7);
        assert_eq!(cfg.posterior.instances, 2);
        assert_eq!(cfg.metrics.ece_bins, 15);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = DEMO_TOML.replace("master_seed = 7", "master_seed = 7\nbogus_key = 1");
        let r = ExperimentConfig::from_toml_str(&bad);
        assert!(matches!(r, Err(Error::Config(_))), "{r:?}");
        let bad2 = DEMO_TOML.replace("steps = 4", "steps = 4\nnot_a_field = true");
        assert!(ExperimentConfig::from_toml_str(&bad2).is_err());
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = ExperimentConfig::from_toml_str(DEMO_TOML).unwrap();
        let b = ExperimentConfig::from_toml_str(DEMO_TOML).unwrap();
        assert_eq!(a.digest(), b.digest());
        let c =
            ExperimentConfig::from_toml_str(&DEMO_TOML.replace("master_seed = 7", "master_seed = 8"))
                .unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn synth_dataset_loads_with_rgb_expansion() {
        let cfg = ExperimentConfig::from_toml_str(DEMO_TOML).unwrap();
        let (train, test) = cfg.dataset.load(cfg.master_seed).unwrap();
        assert_eq!(train.image_shape(), (3, 28, 28));
        assert_eq!(train.len(), 64);
        assert_eq!(test.len(), 32);
    }
}
