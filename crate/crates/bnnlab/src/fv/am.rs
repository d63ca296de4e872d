//! Activation maximization: gradient ascent on the spectral (or raw pixel)
//! parameterization of a synthetic input, re-sampling the robustness
//! transforms at every step.

use crate::error::{Error, Result};
use crate::fv::spectral::{
    pixel_decode, pixel_grad, ColorTransform, SpectralParams, SpectralSpace,
};
use crate::fv::transform::{affine_adjoint, apply_affine, sample_transform, TransformSet};
use crate::nn::engine::{BackOpts, BackSeed, Trace};
use crate::nn::{Provenance, WeightInstance};
use crate::rng::rng_from_seed;
use ndarray::{Array2, Array3, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// What to maximize. Logits and neurons use the raw value; channels and
/// layers use the L2 norm of the pre-activation map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AmObjective {
    ClassLogit { class: usize },
    Channel { block: usize, channel: usize },
    Neuron { block: usize, channel: usize, row: usize, col: usize },
    Layer { block: usize },
}

/// Activation-maximization settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AmConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    /// Output side V; the visualization is V x V x 3.
    #[serde(default = "default_side")]
    pub image_side: usize,
    pub transforms: TransformSet,
    /// Optimize in the decorrelated whitened frequency space (otherwise raw
    /// pre-sigmoid pixels).
    #[serde(default = "default_freq")]
    pub frequency_space: bool,
    /// Color mixing matrix of the spectral parameterization.
    #[serde(default = "ColorTransform::identity")]
    pub color: ColorTransform,
    #[serde(default)]
    pub seed: u64,
}

fn default_steps() -> usize {
    512
}

fn default_step_size() -> f64 {
    0.05
}

fn default_side() -> usize {
    128
}

fn default_freq() -> bool {
    true
}

impl AmConfig {
    pub fn for_side(side: usize) -> Self {
        Self {
            steps: default_steps(),
            step_size: default_step_size(),
            image_side: side,
            transforms: TransformSet::defaults_for_side(side),
            frequency_space: true,
            color: ColorTransform::identity(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("AM needs at least one step".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::Config("AM step size must be positive".into()));
        }
        if self.image_side < 16 {
            return Err(Error::Config("AM image side must be at least 16".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c
    }
}

/// An optimized synthetic image plus full provenance.
#[derive(Debug, Clone)]
pub struct FeatureVisualization {
    /// `[3, V, V]`, values in `[0, 1]`.
    pub image: Array3<f64>,
    /// Instance the visualization explains.
    pub instance: Provenance,
    pub objective: AmObjective,
    pub config: AmConfig,
    /// Seed of the initial point (equals `config.seed`).
    pub init_seed: u64,
    /// Objective value of the returned image, evaluated without transforms.
    pub final_objective: f64,
}

impl FeatureVisualization {
    /// Identifier used for artifact files.
    pub fn id(&self) -> String {
        format!("{}-am{}", self.instance.id(), self.init_seed)
    }
}

fn objective_from_trace(objective: &AmObjective, trace: &Trace) -> Result<(f64, BackSeed)> {
    match *objective {
        AmObjective::ClassLogit { class } => {
            let out = trace.output();
            if class >= out.ncols() {
                return Err(Error::Input(format!("class {class} out of range")));
            }
            let mut g = Array2::<f64>::zeros(out.raw_dim());
            g[[0, class]] = 1.0;
            Ok((out[[0, class]], BackSeed::Output(g)))
        }
        AmObjective::Channel { block, channel } => {
            let pre = trace
                .preacts
                .get(block)
                .ok_or_else(|| Error::Input(format!("block {block} out of range")))?;
            if channel >= pre.shape()[1] {
                return Err(Error::Input(format!("channel {channel} out of range")));
            }
            let map = pre.slice(ndarray::s![0, channel, .., ..]);
            let norm = map.mapv(|v| v * v).sum().sqrt();
            let mut g = Array4::<f64>::zeros(pre.raw_dim());
            if norm > 1e-12 {
                let scaled = map.mapv(|v| v / norm);
                g.slice_mut(ndarray::s![0, channel, .., ..]).assign(&scaled);
            }
            Ok((norm, BackSeed::Preact { block, grad: g }))
        }
        AmObjective::Neuron { block, channel, row, col } => {
            let pre = trace
                .preacts
                .get(block)
                .ok_or_else(|| Error::Input(format!("block {block} out of range")))?;
            let s = pre.shape();
            if channel >= s[1] || row >= s[2] || col >= s[3] {
                return Err(Error::Input("neuron coordinates out of range".into()));
            }
            let mut g = Array4::<f64>::zeros(pre.raw_dim());
            g[[0, channel, row, col]] = 1.0;
            Ok((pre[[0, channel, row, col]], BackSeed::Preact { block, grad: g }))
        }
        AmObjective::Layer { block } => {
            let pre = trace
                .preacts
                .get(block)
                .ok_or_else(|| Error::Input(format!("block {block} out of range")))?;
            let norm = pre.mapv(|v| v * v).sum().sqrt();
            let g = if norm > 1e-12 {
                pre.mapv(|v| v / norm)
            } else {
                Array4::<f64>::zeros(pre.raw_dim())
            };
            Ok((norm, BackSeed::Preact { block, grad: g }))
        }
    }
}

/// Evaluates the objective on one image without transforms.
pub fn objective_value(
    instance: &WeightInstance,
    objective: &AmObjective,
    image: &Array3<f64>,
) -> Result<f64> {
    let arch = instance.config.arch();
    let batch = image.to_owned().insert_axis(ndarray::Axis(0));
    let trace = arch.forward(&instance.params, &batch, None);
    Ok(objective_from_trace(objective, &trace)?.0)
}

enum Parameterization {
    Spectral { space: SpectralSpace, params: SpectralParams },
    Pixel { pre: Array3<f64> },
}

/// The ascent step is the gradient scaled to unit RMS, so the step size acts
/// as a parameter-space displacement per step independent of the raw logit
/// gradient magnitude. Raw-gradient ascent at desk scale leaves the image a
/// near-uniform gray: the logits move adversarially while pixel structure
/// never forms.
fn rms_normalize_spectral(g: &mut SpectralParams) {
    let mut total = 0.0;
    let mut count = 0.0;
    for plane in &g.planes {
        for c in plane.iter() {
            total += c.re * c.re + c.im * c.im;
            count += 2.0;
        }
    }
    let rms = (total / count).sqrt().max(1e-12);
    for plane in g.planes.iter_mut() {
        for c in plane.iter_mut() {
            c.re /= rms;
            c.im /= rms;
        }
    }
}

impl Parameterization {
    fn decode(&self) -> Array3<f64> {
        match self {
            Parameterization::Spectral { space, params } => space.decode(params),
            Parameterization::Pixel { pre } => pixel_decode(pre),
        }
    }

    fn ascend(&mut self, pixel_g: &Array3<f64>, image: &Array3<f64>, alpha: f64) {
        match self {
            Parameterization::Spectral { space, params } => {
                let mut g = space.grad_to_params(pixel_g, image);
                rms_normalize_spectral(&mut g);
                params.scaled_add(alpha, &g);
            }
            Parameterization::Pixel { pre } => {
                let g = pixel_grad(pixel_g, image);
                let rms = (g.mapv(|v| v * v).mean().unwrap_or(0.0)).sqrt().max(1e-12);
                pre.scaled_add(alpha / rms, &g);
            }
        }
    }
}

/// Random near-gray initial point, deterministic per seed.
fn init_parameterization(config: &AmConfig) -> Result<Parameterization> {
    let v = config.image_side;
    let mut rng = rng_from_seed(crate::rng::child_seed(config.seed, "am-init", 0));
    if config.frequency_space {
        let space = SpectralSpace::new(v, config.color)?;
        let mut params = SpectralParams::zeros(v);
        for plane in params.planes.iter_mut() {
            for c in plane.iter_mut() {
                c.re = rng.gen_range(-0.01..0.01);
                c.im = rng.gen_range(-0.01..0.01);
            }
        }
        Ok(Parameterization::Spectral { space, params })
    } else {
        let pre = Array3::from_shape_fn((3, v, v), |_| rng.gen_range(-0.1..0.1));
        Ok(Parameterization::Pixel { pre })
    }
}

/// Runs gradient ascent and returns the visualization. Bit-reproducible for
/// a fixed `(instance, objective, config)`.
pub fn activation_maximize(
    instance: &WeightInstance,
    objective: &AmObjective,
    config: &AmConfig,
) -> Result<FeatureVisualization> {
    config.validate()?;
    if instance.config.input_shape.channels != 3 {
        return Err(Error::Config(
            "feature visualization requires a 3-channel network input".into(),
        ));
    }
    let arch = instance.config.arch();
    let mut par = init_parameterization(config)?;
    let identity = config.transforms.is_identity();

    for step in 0..config.steps {
        let image = par.decode();
        let transform = if identity {
            None
        } else {
            Some(sample_transform(&config.transforms, config.seed, step))
        };
        let net_in = match &transform {
            Some(t) => apply_affine(&image, t),
            None => image.clone(),
        };
        let batch = net_in.insert_axis(ndarray::Axis(0));
        let trace = arch.forward(&instance.params, &batch, None);
        let (value, seed_grad) = objective_from_trace(objective, &trace)?;
        if !value.is_finite() {
            return Err(Error::Am { step, message: format!("objective became {value}") });
        }
        let out = arch.backward(
            &instance.params,
            &trace,
            seed_grad,
            BackOpts { input_grad: true, ..Default::default() },
        );
        let d_in = out
            .d_input
            .expect("input gradient requested")
            .index_axis_move(ndarray::Axis(0), 0);
        let pixel_g = match &transform {
            Some(t) => affine_adjoint(&d_in, t),
            None => d_in,
        };
        par.ascend(&pixel_g, &image, config.step_size);
    }

    let image = par.decode();
    let final_objective = objective_value(instance, objective, &image)?;
    if !final_objective.is_finite() {
        return Err(Error::Am {
            step: config.steps,
            message: format!("final objective is {final_objective}"),
        });
    }
    Ok(FeatureVisualization {
        image,
        instance: instance.provenance.clone(),
        objective: *objective,
        config: config.clone(),
        init_seed: config.seed,
        final_objective,
    })
}

/// One grid point of an AM hyperparameter sweep.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AmGridPoint {
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
}

/// Runs AM once per grid point, provenance preserved per point.
pub fn am_sweep(
    instance: &WeightInstance,
    objective: &AmObjective,
    base: &AmConfig,
    grid: &[AmGridPoint],
) -> Result<Vec<FeatureVisualization>> {
    if grid.is_empty() {
        return Err(Error::Input("AM sweep grid is empty".into()));
    }
    grid.iter()
        .map(|p| {
            let mut c = base.clone();
            c.steps = p.steps;
            c.step_size = p.step_size;
            c.seed = p.seed;
            activation_maximize(instance, objective, &c)
        })
        .collect()
}

/// Direct optimization of a toy objective `a(v) = -|v - target|^2` in raw
/// pixel space (no transforms, no network); exposes the ascent loop for
/// convergence checks.
pub fn toy_quadratic_descent(target: &Array3<f64>, steps: usize, alpha: f64, seed: u64) -> Array3<f64> {
    let v = target.shape()[1];
    let mut rng = rng_from_seed(seed);
    let mut pre = Array3::from_shape_fn((3, v, v), |_| rng.gen_range(-0.1..0.1));
    for _ in 0..steps {
        let img = pixel_decode(&pre);
        let pixel_g = (target - &img).mapv(|d| 2.0 * d);
        let g = pixel_grad(&pixel_g, &img);
        pre.scaled_add(alpha, &g);
    }
    pixel_decode(&pre)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fv::transform::AffineTransform;
    use crate::nn::{build_model, Act, ConvBlockSpec, ImageShape, NetworkConfig};

    fn small_net(seed: u64) -> WeightInstance {
        let cfg = NetworkConfig {
            input_shape: ImageShape { height: 16, width: 16, channels: 3 },
            class_count: 4,
            blocks: vec![
                ConvBlockSpec { base_channels: 6, kernel: 3, pool: true },
                ConvBlockSpec { base_channels: 10, kernel: 3, pool: false },
            ],
            width_factor: 1.0,
            activation: Act::ReLU,
        };
        build_model(&cfg, seed).unwrap()
    }

    fn fast_config(side: usize, seed: u64) -> AmConfig {
        AmConfig {
            steps: 48,
            step_size: 0.05,
            image_side: side,
            transforms: TransformSet::defaults_for_side(side),
            frequency_space: true,
            color: ColorTransform::identity(),
            seed,
        }
    }

    #[test]
    fn toy_quadratic_converges_to_target() {
        let target = Array3::from_shape_fn((3, 8, 8), |(c, y, x)| {
            0.3 + 0.05 * c as f64 + 0.02 * (y as f64) + 0.01 * (x as f64)
        });
        let out = toy_quadratic_descent(&target, 512, 1.0, 3);
        let max = (&out - &target).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-2, "max deviation {max}");
    }

    #[test]
    fn linear_objective_is_monotone_in_pixel_space() {
        // fixed linear functional of pixels, no transforms, raw pixel space
        let inst = small_net(1);
        let mut config = fast_config(16, 2);
        config.frequency_space = false;
        config.transforms = TransformSet::disabled();
        config.steps = 40;
        // channel objective on an untrained net is close enough to linear to
        // verify ascent; instead assert the provable coordinatewise case with
        // an explicit functional
        let mut rng = crate::rng::rng_from_seed(5);
        use rand::Rng;
        let weights = Array3::from_shape_fn((3, 16, 16), |_| rng.gen_range(-1.0..1.0));
        let mut pre = Array3::from_shape_fn((3, 16, 16), |_| rng.gen_range(-0.1..0.1));
        let mut last = f64::NEG_INFINITY;
        for _ in 0..60 {
            let img = pixel_decode(&pre);
            let val = (&img * &weights).sum();
            assert!(val >= last - 1e-12, "objective decreased: {last} -> {val}");
            last = val;
            let g = pixel_grad(&weights, &img);
            pre.scaled_add(0.5, &g);
        }
        let _ = inst;
        let _ = config;
    }

    #[test]
    fn am_is_bit_reproducible() {
        let inst = small_net(2);
        let config = fast_config(16, 7);
        let a = activation_maximize(&inst, &AmObjective::ClassLogit { class: 1 }, &config).unwrap();
        let b = activation_maximize(&inst, &AmObjective::ClassLogit { class: 1 }, &config).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.final_objective, b.final_objective);
        let c = activation_maximize(&inst, &AmObjective::ClassLogit { class: 1 }, &config.with_seed(8))
            .unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn am_pixels_stay_in_range() {
        let inst = small_net(3);
        let fv = activation_maximize(
            &inst,
            &AmObjective::Channel { block: 1, channel: 2 },
            &fast_config(16, 4),
        )
        .unwrap();
        assert!(fv.image.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(fv.image.shape(), [3, 16, 16]);
    }

    #[test]
    fn logit_objective_improves_over_initial() {
        let inst = small_net(4);
        let objective = AmObjective::ClassLogit { class: 0 };
        let mut improved = 0;
        let runs = 10;
        for seed in 0..runs {
            let config = fast_config(16, 100 + seed);
            let init = init_parameterization(&config).unwrap().decode();
            let before = objective_value(&inst, &objective, &init).unwrap();
            let fv = activation_maximize(&inst, &objective, &config).unwrap();
            if fv.final_objective > before {
                improved += 1;
            }
        }
        assert!(improved >= 9, "only {improved}/{runs} runs improved the logit");
    }

    #[test]
    fn objective_chain_gradient_matches_finite_differences() {
        // full chain: spectral params -> decode -> fixed transform -> net ->
        // logit, checked at float64 against central differences. Tanh keeps
        // the chain smooth.
        let cfg = NetworkConfig {
            input_shape: ImageShape { height: 12, width: 12, channels: 3 },
            class_count: 3,
            blocks: vec![ConvBlockSpec { base_channels: 4, kernel: 3, pool: true }],
            width_factor: 1.0,
            activation: Act::Tanh,
        };
        let inst = build_model(&cfg, 9).unwrap();
        let space = SpectralSpace::new(12, ColorTransform::identity()).unwrap();
        let mut rng = crate::rng::rng_from_seed(10);
        use rand::Rng;
        let mut params = SpectralParams::zeros(12);
        for plane in params.planes.iter_mut() {
            for c in plane.iter_mut() {
                c.re = rng.gen_range(-0.2..0.2);
                c.im = rng.gen_range(-0.2..0.2);
            }
        }
        let t = AffineTransform { angle_rad: 0.12, scale: 1.03, dx: 0.7, dy: -1.2 };
        let objective = AmObjective::ClassLogit { class: 2 };
        let arch = cfg.arch();

        let eval = |p: &SpectralParams| -> f64 {
            let img = space.decode(p);
            let timg = apply_affine(&img, &t);
            let batch = timg.insert_axis(ndarray::Axis(0));
            let trace = arch.forward(&inst.params, &batch, None);
            objective_from_trace(&objective, &trace).unwrap().0
        };

        // analytic gradient
        let img = space.decode(&params);
        let timg = apply_affine(&img, &t);
        let batch = timg.insert_axis(ndarray::Axis(0));
        let trace = arch.forward(&inst.params, &batch, None);
        let (_, seed_grad) = objective_from_trace(&objective, &trace).unwrap();
        let out = arch.backward(
            &inst.params,
            &trace,
            seed_grad,
            BackOpts { input_grad: true, ..Default::default() },
        );
        let d_in = out.d_input.unwrap().index_axis_move(ndarray::Axis(0), 0);
        let pixel_g = affine_adjoint(&d_in, &t);
        let grad = space.grad_to_params(&pixel_g, &img);

        let h = 1e-5;
        for probe in 0..6 {
            let plane = probe % 3;
            let ky = (probe * 5 + 1) % 12;
            let kx = (probe * 7 + 2) % 12;
            let use_im = probe % 2 == 0;
            let mut plus = params.clone();
            let mut minus = params.clone();
            if use_im {
                plus.planes[plane][[ky, kx]].im += h;
                minus.planes[plane][[ky, kx]].im -= h;
            } else {
                plus.planes[plane][[ky, kx]].re += h;
                minus.planes[plane][[ky, kx]].re -= h;
            }
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let an = if use_im {
                grad.planes[plane][[ky, kx]].im
            } else {
                grad.planes[plane][[ky, kx]].re
            };
            let denom = fd.abs().max(an.abs()).max(1e-10);
            assert!(
                (fd - an).abs() / denom < 1e-3,
                "probe {probe}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn sweep_produces_one_fv_per_grid_point() {
        let inst = small_net(5);
        let base = fast_config(16, 0);
        let grid = vec![
            AmGridPoint { steps: 8, step_size: 0.005, seed: 1 },
            AmGridPoint { steps: 8, step_size: 0.05, seed: 1 },
            AmGridPoint { steps: 8, step_size: 0.5, seed: 1 },
            AmGridPoint { steps: 16, step_size: 0.005, seed: 2 },
            AmGridPoint { steps: 16, step_size: 0.05, seed: 2 },
            AmGridPoint { steps: 16, step_size: 0.5, seed: 2 },
        ];
        let fvs = am_sweep(&inst, &AmObjective::ClassLogit { class: 3 }, &base, &grid).unwrap();
        assert_eq!(fvs.len(), 6);
        // distinct provenance per point
        for (fv, p) in fvs.iter().zip(&grid) {
            assert_eq!(fv.config.steps, p.steps);
            assert_eq!(fv.config.step_size, p.step_size);
            assert_eq!(fv.init_seed, p.seed);
        }
        assert!(am_sweep(&inst, &AmObjective::ClassLogit { class: 3 }, &base, &[]).is_err());
        // grid of one equals a direct call
        let single = am_sweep(
            &inst,
            &AmObjective::ClassLogit { class: 3 },
            &base,
            &[AmGridPoint { steps: 8, step_size: 0.05, seed: 1 }],
        )
        .unwrap();
        let mut c = base.clone();
        c.steps = 8;
        c.step_size = 0.05;
        c.seed = 1;
        let direct = activation_maximize(&inst, &AmObjective::ClassLogit { class: 3 }, &c).unwrap();
        assert_eq!(single[0].image, direct.image);
    }

    #[test]
    fn non_finite_objective_reports_step() {
        let mut inst = small_net(6);
        inst.params.heads[0].1[0] = f64::NAN;
        let mut config = fast_config(16, 3);
        config.steps = 4;
        let r = activation_maximize(&inst, &AmObjective::ClassLogit { class: 0 }, &config);
        match r {
            Err(Error::Am { step, .. }) => assert_eq!(step, 0),
            other => panic!("expected AM error, got {other:?}"),
        }
    }
}
