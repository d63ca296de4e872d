//! Feature visualization by activation maximization with transformation
//! robustness and a decorrelated, whitened frequency-space parameterization.

pub mod am;
pub mod spectral;
pub mod transform;

pub use am::{
    activation_maximize, am_sweep, objective_value, AmConfig, AmGridPoint, AmObjective,
    FeatureVisualization,
};
pub use spectral::{ColorTransform, SpectralParams, SpectralSpace};
pub use transform::{
    affine_adjoint, apply_affine, sample_transform, AffineTransform, TransformSet,
};

use crate::error::Result;
use std::path::Path;

/// Sidecar metadata stored next to each exported FV image.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FvRecord {
    pub id: String,
    pub instance: crate::nn::Provenance,
    pub objective: AmObjective,
    pub config: AmConfig,
    pub init_seed: u64,
    pub final_objective: f64,
}

impl FvRecord {
    pub fn from_fv(fv: &FeatureVisualization) -> Self {
        Self {
            id: fv.id(),
            instance: fv.instance.clone(),
            objective: fv.objective,
            config: fv.config.clone(),
            init_seed: fv.init_seed,
            final_objective: fv.final_objective,
        }
    }
}

/// Writes `<id>.png` plus `<id>.json` into `dir`.
pub fn save_fv(
    fv: &FeatureVisualization,
    dir: &Path,
) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let png = dir.join(format!("{}.png", fv.id()));
    let json = dir.join(format!("{}.json", fv.id()));
    crate::io::save_png(&fv.image, &png)?;
    let record = FvRecord::from_fv(fv);
    std::fs::write(&json, serde_json::to_string_pretty(&record)?)?;
    Ok((png, json))
}
