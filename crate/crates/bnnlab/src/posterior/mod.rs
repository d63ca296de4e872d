//! The four approximate posteriors: SWAG, MultiSWAG, Monte-Carlo dropout and
//! KFAC Laplace. Each fits from data and yields [`WeightInstance`] draws that
//! are deterministic per seed.

pub mod kfac;
pub mod mcdo;
pub mod multiswag;
pub mod swag;

pub use kfac::{kfac_fit, kfac_sample, KfacLayer, KfacPosterior, KfacSampler};
pub use mcdo::{mcdo_fit, mcdo_sample, DropoutPosterior};
pub use multiswag::{multiswag_fit, multiswag_sample, MultiSwagPosterior};
pub use swag::{
    swag_collect, swag_sample, LowRankGaussian, SwagAccumulator, SwagCollectSettings, SwagPosterior,
};

use crate::error::{Error, Result};
use crate::io::{ArrayContainer, ContainerKind};
use crate::nn::{NetworkConfig, WeightInstance};
use std::path::Path;

/// Any fitted posterior, as stored in run directories.
#[derive(Debug, Clone)]
pub enum Posterior {
    Swag(SwagPosterior),
    MultiSwag(MultiSwagPosterior),
    Dropout(DropoutPosterior),
    Kfac(KfacPosterior),
}

impl Posterior {
    pub fn method(&self) -> &'static str {
        match self {
            Posterior::Swag(_) => "swag",
            Posterior::MultiSwag(_) => "multiswag",
            Posterior::Dropout(_) => "mcdo",
            Posterior::Kfac(_) => "kfac",
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        match self {
            Posterior::Swag(p) => &p.config,
            Posterior::MultiSwag(p) => &p.config,
            Posterior::Dropout(p) => &p.base.config,
            Posterior::Kfac(p) => &p.config,
        }
    }

    /// One weight draw, deterministic per seed.
    pub fn sample(&self, seed: u64) -> Result<WeightInstance> {
        match self {
            Posterior::Swag(p) => swag_sample(p, seed),
            Posterior::MultiSwag(p) => multiswag_sample(p, seed),
            Posterior::Dropout(p) => mcdo_sample(p, seed),
            Posterior::Kfac(p) => {
                let sampler = KfacSampler::prepare(p)?;
                sampler.sample(seed)
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let c = match self {
            Posterior::Swag(p) => p.to_container()?,
            Posterior::MultiSwag(p) => p.to_container()?,
            Posterior::Dropout(p) => p.to_container()?,
            Posterior::Kfac(p) => p.to_container()?,
        };
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = ArrayContainer::load(path)?;
        if c.kind != ContainerKind::Posterior {
            return Err(Error::Format(format!("{}: not a posterior container", path.display())));
        }
        let ty = c.meta["type"].as_str().unwrap_or_default().to_string();
        match ty.as_str() {
            "swag" => Ok(Posterior::Swag(SwagPosterior::from_container(&c)?)),
            "multiswag" => Ok(Posterior::MultiSwag(MultiSwagPosterior::from_container(&c)?)),
            "mcdo" => Ok(Posterior::Dropout(DropoutPosterior::from_container(&c)?)),
            "kfac" => Ok(Posterior::Kfac(KfacPosterior::from_container(&c)?)),
            other => Err(Error::Format(format!("unknown posterior type '{other}'"))),
        }
    }
}

pub(crate) fn config_from_meta(meta: &serde_json::Value) -> Result<NetworkConfig> {
    let cfg: NetworkConfig = serde_json::from_value(meta["config"].clone())?;
    cfg.validate()?;
    Ok(cfg)
}

pub(crate) use crate::nn::model::{params_from_container, params_into_container};
