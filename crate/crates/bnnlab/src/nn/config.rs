//! Width-parameterized network configuration.

use crate::error::{Error, Result};
use crate::nn::engine::{Act, Arch, ConvDim};
use serde::{Deserialize, Serialize};

/// One conv block of the classifier trunk.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConvBlockSpec {
    /// Channel count at width factor 1.
    pub base_channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    /// 2x2 mean pool after this block.
    #[serde(default)]
    pub pool: bool,
}

fn default_kernel() -> usize {
    3
}

/// Image dimensions `(height, width, channels)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

/// Classifier architecture: conv blocks scaled by a width factor, global
/// average pooling, and a linear head.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_shape: ImageShape,
    pub class_count: usize,
    pub blocks: Vec<ConvBlockSpec>,
    /// Width factor beta: every block's channel count is `round(beta * base)`,
    /// clamped to at least 1.
    #[serde(default = "default_width")]
    pub width_factor: f64,
    #[serde(default = "default_activation")]
    pub activation: Act,
}

fn default_width() -> f64 {
    1.0
}

fn default_activation() -> Act {
    Act::ReLU
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Config("class_count must be at least 2".into()));
        }
        if self.blocks.is_empty() {
            return Err(Error::Config("at least one conv block is required".into()));
        }
        if !(self.width_factor > 0.0) {
            return Err(Error::Config("width_factor must be positive".into()));
        }
        if self.input_shape.height == 0 || self.input_shape.width == 0 || self.input_shape.channels == 0
        {
            return Err(Error::Config("input shape dimensions must be positive".into()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.base_channels == 0 {
                return Err(Error::Config(format!("block {i}: base_channels must be positive")));
            }
            if b.kernel == 0 || b.kernel % 2 == 0 {
                return Err(Error::Config(format!("block {i}: kernel must be odd and positive")));
            }
        }
        // the feature map must survive all pools
        let pools = self.blocks.iter().filter(|b| b.pool).count() as u32;
        let min_side = self.input_shape.height.min(self.input_shape.width);
        if min_side >> pools == 0 {
            return Err(Error::Config(format!(
                "input side {min_side} cannot be pooled {pools} times"
            )));
        }
        Ok(())
    }

    /// Channel counts after width scaling. Counts that would fall below 1 are
    /// clamped to 1 with a warning.
    pub fn channels(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let scaled = (self.width_factor * b.base_channels as f64).round() as isize;
                if scaled < 1 {
                    log::warn!(
                        "block {i}: width factor {} scales {} channels below 1; clamped to 1",
                        self.width_factor,
                        b.base_channels
                    );
                    1
                } else {
                    scaled as usize
                }
            })
            .collect()
    }

    /// Engine-level architecture for this configuration.
    pub fn arch(&self) -> Arch {
        let channels = self.channels();
        Arch {
            input_channels: self.input_shape.channels,
            convs: self
                .blocks
                .iter()
                .zip(&channels)
                .map(|(b, &c)| ConvDim { out_channels: c, kernel: b.kernel, pool: b.pool })
                .collect(),
            activation: self.activation,
            head: vec![self.class_count],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.arch().param_count()
    }

    /// Same blocks at a different width factor.
    pub fn with_width(&self, beta: f64) -> Self {
        let mut c = self.clone();
        c.width_factor = beta;
        c
    }

    /// Hex digest identifying this configuration.
    pub fn digest(&self) -> String {
        crate::io::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config() -> NetworkConfig {
        NetworkConfig {
            input_shape: ImageShape { height: 12, width: 12, channels: 3 },
            class_count: 4,
            blocks: vec![
                ConvBlockSpec { base_channels: 8, kernel: 3, pool: true },
                ConvBlockSpec { base_channels: 16, kernel: 3, pool: false },
            ],
            width_factor: 1.0,
            activation: Act::ReLU,
        }
    }

    #[test]
    fn parameter_count_strictly_increases_with_width() {
        let cfg = small_config();
        let betas = [0.25, 0.5, 1.0, 2.0, 4.0];
        let counts: Vec<usize> = betas.iter().map(|&b| cfg.with_width(b).parameter_count()).collect();
        for w in counts.windows(2) {
            assert!(w[1] > w[0], "counts not strictly increasing: {counts:?}");
        }
    }

    #[test]
    fn degenerate_width_clamps_to_one_channel() {
        let cfg = small_config().with_width(0.01);
        assert!(cfg.channels().iter().all(|&c| c == 1));
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn rejects_even_kernel() {
        let mut cfg = small_config();
        cfg.blocks[0].kernel = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn digest_changes_with_width() {
        let cfg = small_config();
        assert_ne!(cfg.digest(), cfg.with_width(2.0).digest());
    }
}
