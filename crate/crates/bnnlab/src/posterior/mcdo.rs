//! Monte-Carlo dropout posterior: draws mask whole units (conv channels) of
//! every block except the last, zeroing the unit's outgoing weight columns in
//! the following layer. No rescaling is applied, so the elementwise mean of
//! sampled weights is `(1 - rate) * base`.

use crate::error::{Error, Result};
use crate::nn::{Provenance, WeightInstance};
use crate::rng::rng_from_seed;
use rand::Rng;

/// Base weights plus per-block dropout rates. `rates[i]` governs the output
/// units of conv block `i`; the last block's outputs are never dropped, so
/// `rates.len() == blocks - 1`.
#[derive(Debug, Clone)]
pub struct DropoutPosterior {
    pub base: WeightInstance,
    pub rates: Vec<f64>,
}

impl DropoutPosterior {
    pub fn validate(&self) -> Result<()> {
        let blocks = self.base.config.blocks.len();
        if self.rates.len() + 1 != blocks {
            return Err(Error::Fit(format!(
                "expected {} dropout rates for {blocks} blocks, got {}",
                blocks - 1,
                self.rates.len()
            )));
        }
        if self.rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::Fit("dropout rates must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Wraps trained base weights into a dropout posterior with one shared rate.
pub fn mcdo_fit(base: &WeightInstance, rate: f64) -> Result<DropoutPosterior> {
    let blocks = base.config.blocks.len();
    if blocks < 2 {
        return Err(Error::Fit("dropout posterior needs at least two conv blocks".into()));
    }
    let p = DropoutPosterior { base: base.clone(), rates: vec![rate; blocks - 1] };
    p.validate()?;
    Ok(p)
}

/// One dropout draw: per dropped block, a keep-mask over its output units;
/// dropped units have their outgoing weight columns zeroed in the next conv
/// layer, so an entire unit disappears at once.
pub fn mcdo_sample(posterior: &DropoutPosterior, seed: u64) -> Result<WeightInstance> {
    posterior.validate()?;
    let mut rng = rng_from_seed(seed);
    let mut params = posterior.base.params.clone();
    let arch = posterior.base.config.arch();
    for (block, &rate) in posterior.rates.iter().enumerate() {
        let units = arch.convs[block].out_channels;
        let keep: Vec<bool> = (0..units).map(|_| !rng.gen_bool(rate)).collect();
        let next = &mut params.convs[block + 1].0; // [Cout, Cin, k, k]
        for (unit, &kept) in keep.iter().enumerate() {
            if !kept {
                next.slice_mut(ndarray::s![.., unit, .., ..]).fill(0.0);
            }
        }
    }
    WeightInstance::new(
        posterior.base.config.clone(),
        params,
        Provenance::new("mcdo", seed),
    )
}

impl DropoutPosterior {
    pub fn to_container(&self) -> Result<crate::io::ArrayContainer> {
        let mut c = crate::io::ArrayContainer::new(
            crate::io::ContainerKind::Posterior,
            serde_json::json!({
                "type": "mcdo",
                "config": self.base.config,
                "config_digest": self.base.config.digest(),
                "rates": self.rates,
                "provenance": self.base.provenance,
            }),
        );
        super::params_into_container(&mut c, "base.", &self.base.params);
        Ok(c)
    }

    pub fn from_container(c: &crate::io::ArrayContainer) -> Result<Self> {
        let config = super::config_from_meta(&c.meta)?;
        let params = super::params_from_container(c, "base.", &config.arch())?;
        let provenance: Provenance = serde_json::from_value(c.meta["provenance"].clone())?;
        let rates: Vec<f64> = serde_json::from_value(c.meta["rates"].clone())?;
        let base = WeightInstance::new(config, params, provenance)?;
        let p = Self { base, rates };
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_model, ConvBlockSpec, ImageShape, NetworkConfig};

    fn cfg() -> NetworkConfig {
        NetworkConfig {
            input_shape: ImageShape { height: 8, width: 8, channels: 3 },
            class_count: 3,
            blocks: vec![
                ConvBlockSpec { base_channels: 5, kernel: 3, pool: true },
                ConvBlockSpec { base_channels: 7, kernel: 3, pool: false },
            ],
            width_factor: 1.0,
            activation: crate::nn::Act::ReLU,
        }
    }

    #[test]
    fn zero_rate_returns_base() {
        let base = build_model(&cfg(), 1).unwrap();
        let p = mcdo_fit(&base, 0.0).unwrap();
        let s = mcdo_sample(&p, 9).unwrap();
        assert_eq!(s.params, base.params);
    }

    #[test]
    fn full_rate_zeroes_all_masked_columns() {
        let base = build_model(&cfg(), 1).unwrap();
        let p = mcdo_fit(&base, 1.0).unwrap();
        let s = mcdo_sample(&p, 9).unwrap();
        assert!(s.params.convs[1].0.iter().all(|v| *v == 0.0));
        // first conv and head untouched
        assert_eq!(s.params.convs[0], base.params.convs[0]);
        assert_eq!(s.params.heads[0], base.params.heads[0]);
    }

    #[test]
    fn masks_are_column_consistent() {
        let base = build_model(&cfg(), 2).unwrap();
        let p = mcdo_fit(&base, 0.5).unwrap();
        let s = mcdo_sample(&p, 3).unwrap();
        let w = &s.params.convs[1].0;
        let base_w = &base.params.convs[1].0;
        for unit in 0..5 {
            let slice = w.slice(ndarray::s![.., unit, .., ..]);
            let base_slice = base_w.slice(ndarray::s![.., unit, .., ..]);
            let zeroed = slice.iter().all(|v| *v == 0.0);
            let intact = slice
                .iter()
                .zip(base_slice.iter())
                .all(|(a, b)| a == b);
            assert!(zeroed || intact, "unit {unit} is partially masked");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let base = build_model(&cfg(), 2).unwrap();
        let p = mcdo_fit(&base, 0.3).unwrap();
        let a = mcdo_sample(&p, 11).unwrap();
        let b = mcdo_sample(&p, 11).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn mask_mean_matches_keep_probability() {
        // gamma = 0.5 over 10k draws: mean of masked weights ~ 0.5 * base
        let base = build_model(&cfg(), 3).unwrap();
        let p = mcdo_fit(&base, 0.5).unwrap();
        let mut acc = ndarray::Array4::<f64>::zeros(base.params.convs[1].0.raw_dim());
        let n = 10_000;
        for i in 0..n {
            let s = mcdo_sample(&p, 40_000 + i as u64).unwrap();
            acc += &s.params.convs[1].0;
        }
        acc /= n as f64;
        let expect = base.params.convs[1].0.mapv(|v| 0.5 * v);
        let num = (&acc - &expect).mapv(|v| v * v).sum().sqrt();
        let den = expect.mapv(|v| v * v).sum().sqrt();
        assert!(num / den < 0.02, "relative error {}", num / den);
    }
}
