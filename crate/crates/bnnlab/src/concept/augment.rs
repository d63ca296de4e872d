//! Stochastic augmentations for contrastive training: each call draws ONE
//! augmentation uniformly from the enabled menu (random crop, color jitter,
//! horizontal flip) and applies it. Deterministic per seed; output shape is
//! always preserved.

use crate::rng::rng_from_seed;
use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// The augmentation menu. `None` disables an entry entirely.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPolicy {
    /// Random crop with area fraction drawn from this range, resized back.
    pub crop_area: Option<(f64, f64)>,
    /// Color jitter strength (brightness/contrast/channel scale).
    pub jitter_strength: Option<f64>,
    /// Horizontal flip probability.
    pub flip_prob: Option<f64>,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self { crop_area: Some((0.6, 1.0)), jitter_strength: Some(0.4), flip_prob: Some(0.5) }
    }
}

impl AugmentationPolicy {
    pub fn disabled() -> Self {
        Self { crop_area: None, jitter_strength: None, flip_prob: None }
    }

    fn menu(&self) -> Vec<Kind> {
        let mut m = Vec::new();
        if self.crop_area.is_some() {
            m.push(Kind::Crop);
        }
        if self.jitter_strength.is_some() {
            m.push(Kind::Jitter);
        }
        if self.flip_prob.is_some() {
            m.push(Kind::Flip);
        }
        m
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Crop,
    Jitter,
    Flip,
}

/// Bilinear resize to `(oh, ow)`.
pub fn resize_bilinear(img: &Array3<f64>, oh: usize, ow: usize) -> Array3<f64> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    if (h, w) == (oh, ow) {
        return img.clone();
    }
    let mut out = Array3::<f64>::zeros((c, oh, ow));
    let sy = if oh > 1 { (h - 1) as f64 / (oh - 1) as f64 } else { 0.0 };
    let sx = if ow > 1 { (w - 1) as f64 / (ow - 1) as f64 } else { 0.0 };
    for y in 0..oh {
        for x in 0..ow {
            let fy = y as f64 * sy;
            let fx = x as f64 * sx;
            let y0 = fy.floor() as usize;
            let x0 = fx.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let dy = fy - y0 as f64;
            let dx = fx - x0 as f64;
            for ch in 0..c {
                out[[ch, y, x]] = (1.0 - dy) * (1.0 - dx) * img[[ch, y0, x0]]
                    + (1.0 - dy) * dx * img[[ch, y0, x1]]
                    + dy * (1.0 - dx) * img[[ch, y1, x0]]
                    + dy * dx * img[[ch, y1, x1]];
            }
        }
    }
    out
}

/// Applies one randomly chosen augmentation from the policy menu.
pub fn augment(img: &Array3<f64>, policy: &AugmentationPolicy, seed: u64) -> Array3<f64> {
    let menu = policy.menu();
    if menu.is_empty() {
        return img.clone();
    }
    let mut rng = rng_from_seed(seed);
    let kind = menu[rng.gen_range(0..menu.len())];
    match kind {
        Kind::Crop => {
            let (lo, hi) = policy.crop_area.expect("crop enabled");
            let area = if lo < hi { rng.gen_range(lo..hi) } else { lo };
            let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
            let ch_side = ((h as f64) * area.sqrt()).round().max(1.0) as usize;
            let cw_side = ((w as f64) * area.sqrt()).round().max(1.0) as usize;
            if ch_side >= h && cw_side >= w {
                return img.clone();
            }
            let top = rng.gen_range(0..=h - ch_side);
            let left = rng.gen_range(0..=w - cw_side);
            let mut crop = Array3::<f64>::zeros((c, ch_side, cw_side));
            crop.assign(&img.slice(ndarray::s![.., top..top + ch_side, left..left + cw_side]));
            resize_bilinear(&crop, h, w)
        }
        Kind::Jitter => {
            let s = policy.jitter_strength.expect("jitter enabled");
            if s == 0.0 {
                return img.clone();
            }
            let brightness = rng.gen_range(-s / 2.0..s / 2.0);
            let contrast = rng.gen_range(1.0 - s..1.0 + s);
            let ch_scale: [f64; 3] = [
                rng.gen_range(1.0 - s / 2.0..1.0 + s / 2.0),
                rng.gen_range(1.0 - s / 2.0..1.0 + s / 2.0),
                rng.gen_range(1.0 - s / 2.0..1.0 + s / 2.0),
            ];
            let mean = img.mean().unwrap_or(0.5);
            let c = img.shape()[0];
            let mut out = img.clone();
            for ch in 0..c {
                let scale = if c == 3 { ch_scale[ch] } else { 1.0 };
                out.slice_mut(ndarray::s![ch, .., ..]).mapv_inplace(|v| {
                    ((mean + contrast * (v - mean)) * scale + brightness).clamp(0.0, 1.0)
                });
            }
            out
        }
        Kind::Flip => {
            let p = policy.flip_prob.expect("flip enabled");
            if rng.gen_bool(p) {
                let mut out = img.clone();
                out.invert_axis(ndarray::Axis(2));
                out
            } else {
                img.clone()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn demo_img(seed: u64) -> Array3<f64> {
        let mut rng = rng_from_seed(seed);
        Array3::from_shape_fn((3, 12, 12), |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn flip_prob_one_is_an_involution() {
        let policy = AugmentationPolicy {
            crop_area: None,
            jitter_strength: None,
            flip_prob: Some(1.0),
        };
        let img = demo_img(1);
        let once = augment(&img, &policy, 5);
        assert_ne!(once, img);
        let twice = augment(&once, &policy, 99);
        assert_eq!(twice, img);
    }

    #[test]
    fn degenerate_parameters_are_identity() {
        let policy = AugmentationPolicy {
            crop_area: Some((1.0, 1.0)),
            jitter_strength: Some(0.0),
            flip_prob: Some(0.0),
        };
        let img = demo_img(2);
        for seed in 0..12 {
            assert_eq!(augment(&img, &policy, seed), img);
        }
    }

    #[test]
    fn augmentation_is_deterministic_per_seed() {
        let policy = AugmentationPolicy::default();
        let img = demo_img(3);
        assert_eq!(augment(&img, &policy, 7), augment(&img, &policy, 7));
    }

    #[test]
    fn output_shape_is_preserved() {
        let policy = AugmentationPolicy::default();
        let img = demo_img(4);
        for seed in 0..20 {
            let out = augment(&img, &policy, seed);
            assert_eq!(out.shape(), img.shape());
            assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn resize_identity_at_same_size() {
        let img = demo_img(5);
        assert_eq!(resize_bilinear(&img, 12, 12), img);
    }
}
