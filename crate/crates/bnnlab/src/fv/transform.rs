//! Stochastic transformation robustness: per-step random jitter, rotation
//! and scaling applied to the decoded image before each gradient step, with
//! an exact adjoint so gradients flow back through the warp.

use crate::rng::rng_from_seed;
use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Ranges the per-step transforms are drawn from.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TransformSet {
    /// Maximum absolute jitter in pixels (both axes).
    pub jitter_px: usize,
    /// Maximum absolute rotation in degrees.
    pub rotate_deg: f64,
    /// Scale factor range.
    pub scale: (f64, f64),
}

impl TransformSet {
    /// Defaults scaled to the output side: +-8 px jitter at side 128 and
    /// proportionally below, +-10 degrees, scale in [0.95, 1.05].
    pub fn defaults_for_side(side: usize) -> Self {
        Self {
            jitter_px: ((side as f64 * 8.0 / 128.0).round() as usize).max(1),
            rotate_deg: 10.0,
            scale: (0.95, 1.05),
        }
    }

    pub fn disabled() -> Self {
        Self { jitter_px: 0, rotate_deg: 0.0, scale: (1.0, 1.0) }
    }

    pub fn is_identity(&self) -> bool {
        self.jitter_px == 0 && self.rotate_deg == 0.0 && self.scale == (1.0, 1.0)
    }
}

/// One concrete transform: rotation and scaling about the image center plus
/// integer-free translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform {
    pub angle_rad: f64,
    pub scale: f64,
    pub dx: f64,
    pub dy: f64,
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self { angle_rad: 0.0, scale: 1.0, dx: 0.0, dy: 0.0 }
    }
}

/// Draws the step transform deterministically from `(seed, step)`.
pub fn sample_transform(set: &TransformSet, seed: u64, step: usize) -> AffineTransform {
    let mut rng = rng_from_seed(crate::rng::child_seed(seed, "am-transform", step as u64));
    let j = set.jitter_px as i64;
    let dx = if j > 0 { rng.gen_range(-j..=j) as f64 } else { 0.0 };
    let dy = if j > 0 { rng.gen_range(-j..=j) as f64 } else { 0.0 };
    let angle_rad = if set.rotate_deg > 0.0 {
        rng.gen_range(-set.rotate_deg..=set.rotate_deg).to_radians()
    } else {
        0.0
    };
    let scale = if set.scale.0 < set.scale.1 {
        rng.gen_range(set.scale.0..=set.scale.1)
    } else {
        set.scale.0
    };
    AffineTransform { angle_rad, scale, dx, dy }
}

/// The four bilinear taps (clamped to the image) for one source coordinate.
fn taps(y: f64, x: f64, h: usize, w: usize) -> [(usize, usize, f64); 4] {
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let clamp = |v: f64, hi: usize| -> usize { (v.max(0.0) as usize).min(hi - 1) };
    [
        (clamp(y0, h), clamp(x0, w), (1.0 - fy) * (1.0 - fx)),
        (clamp(y0, h), clamp(x0 + 1.0, w), (1.0 - fy) * fx),
        (clamp(y0 + 1.0, h), clamp(x0, w), fy * (1.0 - fx)),
        (clamp(y0 + 1.0, h), clamp(x0 + 1.0, w), fy * fx),
    ]
}

fn source_coord(t: &AffineTransform, y: f64, x: f64, cy: f64, cx: f64) -> (f64, f64) {
    // inverse map: undo translation, rotation and scaling about the center
    let rx = x - cx - t.dx;
    let ry = y - cy - t.dy;
    let (sin, cos) = (-t.angle_rad).sin_cos();
    let ux = (cos * rx - sin * ry) / t.scale;
    let uy = (sin * rx + cos * ry) / t.scale;
    (uy + cy, ux + cx)
}

/// Warps `img` by the transform, output size equal to input, border clamped.
pub fn apply_affine(img: &Array3<f64>, t: &AffineTransform) -> Array3<f64> {
    if *t == AffineTransform::identity() {
        return img.clone();
    }
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = Array3::<f64>::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = source_coord(t, y as f64, x as f64, cy, cx);
            let tp = taps(sy, sx, h, w);
            for ch in 0..c {
                let mut v = 0.0;
                for (ty, tx, wgt) in tp {
                    v += wgt * img[[ch, ty, tx]];
                }
                out[[ch, y, x]] = v;
            }
        }
    }
    out
}

/// Adjoint of [`apply_affine`]: scatter-adds the output gradient back onto
/// the input grid with the same bilinear weights.
pub fn affine_adjoint(grad_out: &Array3<f64>, t: &AffineTransform) -> Array3<f64> {
    if *t == AffineTransform::identity() {
        return grad_out.clone();
    }
    let (c, h, w) = (grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2]);
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = Array3::<f64>::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = source_coord(t, y as f64, x as f64, cy, cx);
            let tp = taps(sy, sx, h, w);
            for ch in 0..c {
                let g = grad_out[[ch, y, x]];
                for (ty, tx, wgt) in tp {
                    out[[ch, ty, tx]] += wgt * g;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn zero_ranges_are_identity() {
        let set = TransformSet::disabled();
        let t = sample_transform(&set, 7, 3);
        assert_eq!(t, AffineTransform::identity());
        let img = Array3::from_shape_fn((3, 6, 6), |(c, y, x)| (c + y + x) as f64);
        assert_eq!(apply_affine(&img, &t), img);
    }

    #[test]
    fn integer_jitter_moves_delta_exactly() {
        let mut img = Array3::<f64>::zeros((1, 9, 9));
        img[[0, 4, 3]] = 1.0;
        let t = AffineTransform { angle_rad: 0.0, scale: 1.0, dx: 2.0, dy: 0.0 };
        let out = apply_affine(&img, &t);
        for y in 0..9 {
            for x in 0..9 {
                let expect = if (y, x) == (4, 5) { 1.0 } else { 0.0 };
                assert!(
                    (out[[0, y, x]] - expect).abs() < 1e-12,
                    "pixel ({y},{x}) = {}",
                    out[[0, y, x]]
                );
            }
        }
    }

    #[test]
    fn transform_is_deterministic_per_seed_and_step() {
        let set = TransformSet::defaults_for_side(64);
        let a = sample_transform(&set, 11, 5);
        let b = sample_transform(&set, 11, 5);
        assert_eq!(a, b);
        assert_ne!(sample_transform(&set, 11, 6), a);
        assert_ne!(sample_transform(&set, 12, 5), a);
    }

    #[test]
    fn adjoint_is_exact_transpose() {
        // <A x, y> == <x, A^T y> for random x, y and a generic transform
        let mut rng = crate::rng::rng_from_seed(8);
        let t = AffineTransform { angle_rad: 0.3, scale: 1.07, dx: 1.3, dy: -0.8 };
        let x = Array3::from_shape_fn((2, 7, 7), |_| rng.gen_range(-1.0..1.0));
        let y = Array3::from_shape_fn((2, 7, 7), |_| rng.gen_range(-1.0..1.0));
        let ax = apply_affine(&x, &t);
        let aty = affine_adjoint(&y, &t);
        let lhs = (&ax * &y).sum();
        let rhs = (&x * &aty).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
