//! Weight instances and the prediction operations defined on them.

use crate::error::{Error, Result};
use crate::nn::config::NetworkConfig;
use crate::nn::engine::{softmax_rows, NetParams};
use crate::rng::rng_from_seed;
use ndarray::{Array1, Array2, Array4, ArrayView3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Where a weight instance came from.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Provenance {
    /// Posterior method or "map"/"init".
    pub method: String,
    /// Mixture component index, when drawn from a mixture.
    pub component: Option<usize>,
    /// Seed of the draw (or of the initialization).
    pub seed: u64,
}

impl Provenance {
    pub fn new(method: &str, seed: u64) -> Self {
        Self { method: method.to_string(), component: None, seed }
    }

    /// Short id used in artifact filenames.
    pub fn id(&self) -> String {
        match self.component {
            Some(k) => format!("{}-k{}-s{}", self.method, k, self.seed),
            None => format!("{}-s{}", self.method, self.seed),
        }
    }
}

/// A complete parameter assignment for a classifier; the unit sampled from a
/// posterior. Immutable once created.
#[derive(Debug, Clone)]
pub struct WeightInstance {
    pub config: NetworkConfig,
    pub params: NetParams,
    pub provenance: Provenance,
}

impl WeightInstance {
    pub fn new(config: NetworkConfig, params: NetParams, provenance: Provenance) -> Result<Self> {
        config.validate()?;
        if !config.arch().check_params(&params) {
            return Err(Error::Config("parameter shapes do not match the configuration".into()));
        }
        if !params.is_finite() {
            return Err(Error::Numerical("weight instance contains non-finite values".into()));
        }
        Ok(Self { config, params, provenance })
    }

    pub fn flatten(&self) -> Array1<f64> {
        self.params.flatten()
    }

    pub fn from_flat(config: &NetworkConfig, flat: &[f64], provenance: Provenance) -> Result<Self> {
        let arch = config.arch();
        if flat.len() != arch.param_count() {
            return Err(Error::Input(format!(
                "flat vector length {} does not match parameter count {}",
                flat.len(),
                arch.param_count()
            )));
        }
        let mut params = NetParams::zeros_like(&arch);
        params.assign_flat(flat);
        WeightInstance::new(config.clone(), params, provenance)
    }

    fn check_input(&self, x: &ArrayView3<f64>) -> Result<()> {
        let s = self.config.input_shape;
        if x.shape() != [s.channels, s.height, s.width] {
            return Err(Error::Input(format!(
                "input shape {:?} does not match configured {:?}",
                x.shape(),
                [s.channels, s.height, s.width]
            )));
        }
        Ok(())
    }

    /// Raw class logits for a single image.
    pub fn logits(&self, x: &ArrayView3<f64>) -> Result<Array1<f64>> {
        self.check_input(x)?;
        let batch = x.to_owned().insert_axis(ndarray::Axis(0));
        let trace = self.config.arch().forward(&self.params, &batch, None);
        Ok(trace.output().row(0).to_owned())
    }

    /// Softmax predictive distribution for a single image.
    pub fn predict_probs(&self, x: &ArrayView3<f64>) -> Result<Array1<f64>> {
        let logits = self.logits(x)?;
        let l2 = logits.insert_axis(ndarray::Axis(0));
        Ok(softmax_rows(&l2).row(0).to_owned())
    }

    /// Softmax predictive distributions for a batch `[B, C, H, W]`.
    pub fn predict_probs_batch(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
        let s = self.config.input_shape;
        if x.shape()[1..] != [s.channels, s.height, s.width] {
            return Err(Error::Input(format!(
                "batch shape {:?} does not match configured input {:?}",
                &x.shape()[1..],
                [s.channels, s.height, s.width]
            )));
        }
        let trace = self.config.arch().forward(&self.params, x, None);
        Ok(softmax_rows(trace.output()))
    }
}

/// Writes every parameter array of `params` under `prefix` into a container.
pub fn params_into_container(
    c: &mut crate::io::ArrayContainer,
    prefix: &str,
    params: &NetParams,
) {
    for (i, (w, b)) in params.convs.iter().enumerate() {
        c.insert(&format!("{prefix}conv{i}.weight"), w.clone());
        c.insert(&format!("{prefix}conv{i}.bias"), b.clone());
    }
    for (j, (w, b)) in params.heads.iter().enumerate() {
        c.insert(&format!("{prefix}head{j}.weight"), w.clone());
        c.insert(&format!("{prefix}head{j}.bias"), b.clone());
    }
}

/// Reads parameter arrays written by [`params_into_container`].
pub fn params_from_container(
    c: &crate::io::ArrayContainer,
    prefix: &str,
    arch: &crate::nn::Arch,
) -> Result<NetParams> {
    let mut params = NetParams::zeros_like(arch);
    for (i, (w, b)) in params.convs.iter_mut().enumerate() {
        *w = c.get4(&format!("{prefix}conv{i}.weight"))?;
        *b = c.get1(&format!("{prefix}conv{i}.bias"))?;
    }
    for (j, (w, b)) in params.heads.iter_mut().enumerate() {
        *w = c.get2(&format!("{prefix}head{j}.weight"))?;
        *b = c.get1(&format!("{prefix}head{j}.bias"))?;
    }
    Ok(params)
}

impl WeightInstance {
    /// Writes the instance as a weight container: per-layer arrays with shape
    /// headers, the config digest and the provenance tag. Round trips are
    /// bit-exact.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut c = crate::io::ArrayContainer::new(
            crate::io::ContainerKind::Weights,
            serde_json::json!({
                "config": self.config,
                "config_digest": self.config.digest(),
                "provenance": self.provenance,
            }),
        );
        params_into_container(&mut c, "", &self.params);
        c.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let c = crate::io::ArrayContainer::load(path)?;
        if c.kind != crate::io::ContainerKind::Weights {
            return Err(Error::Format(format!("{}: not a weight container", path.display())));
        }
        let config: NetworkConfig = serde_json::from_value(c.meta["config"].clone())?;
        config.validate()?;
        let digest = c.meta["config_digest"].as_str().unwrap_or_default();
        if digest != config.digest() {
            return Err(Error::Format("config digest does not match the stored config".into()));
        }
        let params = params_from_container(&c, "", &config.arch())?;
        let provenance: Provenance = serde_json::from_value(c.meta["provenance"].clone())?;
        WeightInstance::new(config, params, provenance)
    }
}

/// Builds a freshly initialized instance: He-style fan-in scaling for ReLU,
/// Xavier for tanh, zero biases, deterministic per seed.
pub fn build_model(config: &NetworkConfig, seed: u64) -> Result<WeightInstance> {
    config.validate()?;
    let arch = config.arch();
    let mut rng = rng_from_seed(seed);
    let mut params = NetParams::zeros_like(&arch);
    for (i, (w, _)) in params.convs.iter_mut().enumerate() {
        let fan_in = (arch.conv_in_channels(i) * arch.convs[i].kernel * arch.convs[i].kernel) as f64;
        let std = match arch.activation {
            crate::nn::engine::Act::ReLU => (2.0 / fan_in).sqrt(),
            crate::nn::engine::Act::Tanh => (1.0 / fan_in).sqrt(),
        };
        let dist = Normal::new(0.0, std).expect("valid std");
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
    WeightInstance::new(config.clone(), params, Provenance::new("init", seed))
}

/// Monte-Carlo predictive: the arithmetic mean of per-instance probability
/// vectors (the Bayesian model average).
pub fn predictive_mc(instances: &[WeightInstance], x: &ArrayView3<f64>) -> Result<Array1<f64>> {
    if instances.is_empty() {
        return Err(Error::Input("predictive_mc requires at least one instance".into()));
    }
    let mut acc = Array1::<f64>::zeros(instances[0].config.class_count);
    for inst in instances {
        acc += &inst.predict_probs(x)?;
    }
    Ok(acc / instances.len() as f64)
}

/// Per-sample ensemble predictive over a whole dataset `[N, C]`.
pub fn predictive_mc_dataset(
    instances: &[WeightInstance],
    data: &crate::data::DatasetSplit,
) -> Result<Array2<f64>> {
    if instances.is_empty() {
        return Err(Error::Input("predictive_mc requires at least one instance".into()));
    }
    let mut acc = Array2::<f64>::zeros((data.len(), data.class_count()));
    for inst in instances {
        acc += &inst.predict_probs_batch(data.images())?;
    }
    Ok(acc / instances.len() as f64)
}

/// Fraction of samples whose argmax prediction matches the label argmax.
/// Argmax ties break to the lowest class index.
pub fn accuracy(probs: &Array2<f64>, data: &crate::data::DatasetSplit) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Input("accuracy requires a nonempty dataset".into()));
    }
    if probs.nrows() != data.len() || probs.ncols() != data.class_count() {
        return Err(Error::Input("prediction matrix shape does not match dataset".into()));
    }
    let mut correct = 0usize;
    for i in 0..data.len() {
        let pred = crate::metrics::argmax_tie_low(probs.row(i).as_slice().expect("contiguous"));
        if pred == data.label_index(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Accuracy of a single instance on a dataset.
pub fn instance_accuracy(instance: &WeightInstance, data: &crate::data::DatasetSplit) -> Result<f64> {
    accuracy(&instance.predict_probs_batch(data.images())?, data)
}
