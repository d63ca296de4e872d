//! Procedural datasets.
//!
//! The lab's experiments run on desk-scale data. When no real MNIST/CIFAR
//! files are available these generators produce learnable stand-ins with the
//! same shapes: glyph digits (single channel), oriented color textures (rgb),
//! and the two-class patch/tint dataset used by the decision-manipulation
//! recipe.

use crate::data::DatasetSplit;
use crate::error::Result;
use crate::rng::rng_from_seed;
use ndarray::{Array2, Array3, Array4};
use rand::Rng;

/// Segment layout of the glyph digits: top, top-left, top-right, middle,
/// bottom-left, bottom-right, bottom.
const SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, false, true, true, true],    // 0
    [false, false, true, false, false, true, false], // 1
    [true, false, true, true, true, false, true],   // 2
    [true, false, true, true, false, true, true],   // 3
    [false, true, true, true, false, true, false],  // 4
    [true, true, false, true, false, true, true],   // 5
    [true, true, false, true, true, true, true],    // 6
    [true, false, true, false, false, true, false], // 7
    [true, true, true, true, true, true, true],     // 8
    [true, true, true, true, false, true, true],    // 9
];

fn draw_hline(img: &mut Array2<f64>, y: i64, x0: i64, x1: i64, thick: i64, v: f64) {
    let side = img.nrows() as i64;
    for dy in 0..thick {
        for x in x0..=x1 {
            let yy = y + dy;
            if yy >= 0 && yy < side && x >= 0 && x < side {
                img[[yy as usize, x as usize]] = v;
            }
        }
    }
}

fn draw_vline(img: &mut Array2<f64>, x: i64, y0: i64, y1: i64, thick: i64, v: f64) {
    let side = img.nrows() as i64;
    for dx in 0..thick {
        for y in y0..=y1 {
            let xx = x + dx;
            if xx >= 0 && xx < side && y >= 0 && y < side {
                img[[y as usize, xx as usize]] = v;
            }
        }
    }
}

/// Glyph digit dataset in MNIST shape: `n` single-channel `side x side`
/// images over 10 classes, deterministic per seed. Glyphs vary in position,
/// size, stroke thickness and ink level, over a noisy background with
/// distractor strokes, so classifiers have to commit to genuinely different
/// feature sets.
pub fn synth_digits(n: usize, side: usize, seed: u64) -> Result<DatasetSplit> {
    let mut rng = rng_from_seed(seed);
    let mut images = Array4::<f64>::zeros((n, 1, side, side));
    let mut labels = Array2::<f64>::zeros((n, 10));
    let s = side as i64;
    for i in 0..n {
        let class = rng.gen_range(0..10usize);
        labels[[i, class]] = 1.0;
        let mut img = Array2::<f64>::zeros((side, side));

        // glyph box with random offset and size
        let off_x = rng.gen_range(-3..=3i64) + s / 4;
        let off_y = rng.gen_range(-3..=3i64) + s / 6;
        let gw = s / 2 + rng.gen_range(-2..=1i64);
        let gh = (2 * s) / 3 + rng.gen_range(-2..=1i64);
        let thick = 1 + s / 14 + rng.gen_range(0..=1i64);
        let ink = rng.gen_range(0.55..1.0);

        let segs = SEGMENTS[class];
        // per-segment endpoint jitter
        let mut j = || rng.gen_range(-1..=1i64);
        if segs[0] {
            draw_hline(&mut img, off_y + j(), off_x, off_x + gw, thick, ink);
        }
        if segs[1] {
            draw_vline(&mut img, off_x + j(), off_y, off_y + gh / 2, thick, ink);
        }
        if segs[2] {
            draw_vline(&mut img, off_x + gw + j(), off_y, off_y + gh / 2, thick, ink);
        }
        if segs[3] {
            draw_hline(&mut img, off_y + gh / 2 + j(), off_x, off_x + gw, thick, ink);
        }
        if segs[4] {
            draw_vline(&mut img, off_x + j(), off_y + gh / 2, off_y + gh, thick, ink);
        }
        if segs[5] {
            draw_vline(&mut img, off_x + gw + j(), off_y + gh / 2, off_y + gh, thick, ink);
        }
        if segs[6] {
            draw_hline(&mut img, off_y + gh + j(), off_x, off_x + gw, thick, ink);
        }

        // distractor strokes away from the glyph box
        for _ in 0..rng.gen_range(1..=2usize) {
            let v = rng.gen_range(0.2..0.5);
            let len = rng.gen_range(s / 8..s / 4);
            let x0 = rng.gen_range(0..s - 1);
            let y0 = rng.gen_range(0..s - 1);
            if rng.gen_bool(0.5) {
                draw_hline(&mut img, y0, x0, (x0 + len).min(s - 1), 1, v);
            } else {
                draw_vline(&mut img, x0, y0, (y0 + len).min(s - 1), 1, v);
            }
        }

        let bg = rng.gen_range(0.02..0.12);
        for v in img.iter_mut() {
            let noise = rng.gen_range(-0.08..0.08) + bg;
            *v = (*v + noise).clamp(0.0, 1.0);
        }
        images.slice_mut(ndarray::s![i, 0, .., ..]).assign(&img);
    }
    DatasetSplit::new(images, labels)
}

/// Oriented-texture dataset in CIFAR shape: `n` rgb `side x side` images over
/// 10 classes. Classes pair up on color families so color alone does not
/// separate them; the discriminative cue is the grating orientation and
/// frequency.
pub fn synth_textures(n: usize, side: usize, seed: u64) -> Result<DatasetSplit> {
    let mut rng = rng_from_seed(seed);
    let mut images = Array4::<f64>::zeros((n, 3, side, side));
    let mut labels = Array2::<f64>::zeros((n, 10));
    // five hue anchors shared by class pairs (k, k+5)
    let palettes: [[f64; 3]; 5] = [
        [0.9, 0.3, 0.25],
        [0.25, 0.85, 0.35],
        [0.3, 0.4, 0.95],
        [0.9, 0.8, 0.25],
        [0.75, 0.3, 0.85],
    ];
    for i in 0..n {
        let class = rng.gen_range(0..10usize);
        labels[[i, class]] = 1.0;
        let palette = palettes[class % 5];
        let angle = (class % 5) as f64 * std::f64::consts::PI / 5.0 + rng.gen_range(-0.12..0.12);
        // low-frequency family for classes 0..5, high-frequency for 5..10
        let freq = if class < 5 { 2.0 } else { 5.0 } + rng.gen_range(-0.3..0.3);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let amp = rng.gen_range(0.28..0.42);
        let (ca, sa) = (angle.cos(), angle.sin());
        for y in 0..side {
            for x in 0..side {
                let u = (x as f64 / side as f64 - 0.5) * ca + (y as f64 / side as f64 - 0.5) * sa;
                let wave = 0.5 + amp * (std::f64::consts::TAU * freq * u + phase).sin();
                for ch in 0..3 {
                    let noise = rng.gen_range(-0.05..0.05);
                    images[[i, ch, y, x]] = (wave * palette[ch] + 0.18 + noise).clamp(0.0, 1.0);
                }
            }
        }
    }
    DatasetSplit::new(images, labels)
}

/// Parameters of the two-class patch/tint dataset.
#[derive(Debug, Clone, Copy)]
pub struct PatchSpec {
    pub side: usize,
    /// Side of the bright cross patch.
    pub patch_side: usize,
    /// Additive green tint applied when the tint cue is present.
    pub tint: f64,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self { side: 24, patch_side: 7, tint: 0.16 }
    }
}

impl PatchSpec {
    /// The discriminative patch as a standalone rgb image: a bright cross on
    /// mid-gray, the template the manipulation recipe cuts and pastes.
    pub fn patch_image(&self) -> Array3<f64> {
        let ps = self.patch_side;
        let mut p = Array3::<f64>::from_elem((3, ps, ps), 0.45);
        let mid = ps / 2;
        for t in 0..ps {
            for d in 0..2.min(ps - mid) {
                p[[0, mid + d, t]] = 0.98;
                p[[1, mid + d, t]] = 0.95;
                p[[2, mid + d, t]] = 0.2;
                p[[0, t, mid + d]] = 0.98;
                p[[1, t, mid + d]] = 0.95;
                p[[2, t, mid + d]] = 0.2;
            }
        }
        p
    }

    fn stamp_patch(&self, img: &mut Array3<f64>, top: usize, left: usize) {
        let patch = self.patch_image();
        for ch in 0..3 {
            for y in 0..self.patch_side {
                for x in 0..self.patch_side {
                    img[[ch, top + y, left + x]] = patch[[ch, y, x]];
                }
            }
        }
    }
}

/// Two-class dataset where class 1 carries one or both of two cues: a bright
/// cross patch (probability `patch_prob`) and a global green tint
/// (probability `tint_prob`); at least one cue is always present. Class 0 has
/// neither. Returns the split plus, per sample, the patch position when one
/// was stamped.
pub fn synth_patch_dataset(
    n: usize,
    seed: u64,
    spec: PatchSpec,
    patch_prob: f64,
    tint_prob: f64,
) -> Result<(DatasetSplit, Vec<Option<(usize, usize)>>)> {
    let mut rng = rng_from_seed(seed);
    let side = spec.side;
    let mut images = Array4::<f64>::zeros((n, 3, side, side));
    let mut labels = Array2::<f64>::zeros((n, 2));
    let mut positions = vec![None; n];
    for i in 0..n {
        let class = i % 2;
        labels[[i, class]] = 1.0;
        let mut img = Array3::<f64>::zeros((3, side, side));
        // smooth blob background
        let n_blobs = 3;
        let blobs: Vec<(f64, f64, f64, f64)> = (0..n_blobs)
            .map(|_| {
                (
                    rng.gen_range(0.0..side as f64),
                    rng.gen_range(0.0..side as f64),
                    rng.gen_range(3.0..7.0),
                    rng.gen_range(-0.12..0.12),
                )
            })
            .collect();
        for y in 0..side {
            for x in 0..side {
                let mut v = 0.42;
                for &(by, bx, r, a) in &blobs {
                    let d2 = (y as f64 - by).powi(2) + (x as f64 - bx).powi(2);
                    v += a * (-d2 / (2.0 * r * r)).exp();
                }
                for ch in 0..3 {
                    img[[ch, y, x]] = (v + rng.gen_range(-0.04..0.04)).clamp(0.0, 1.0);
                }
            }
        }
        if class == 1 {
            let mut with_patch = rng.gen_bool(patch_prob);
            let mut with_tint = rng.gen_bool(tint_prob);
            if !with_patch && !with_tint {
                // at least one cue; alternate deterministically
                if patch_prob >= tint_prob {
                    with_patch = patch_prob > 0.0;
                    with_tint = !with_patch;
                } else {
                    with_tint = true;
                }
            }
            if with_tint {
                for y in 0..side {
                    for x in 0..side {
                        img[[1, y, x]] = (img[[1, y, x]] + spec.tint).clamp(0.0, 1.0);
                    }
                }
            }
            if with_patch {
                let max = side - spec.patch_side - 1;
                let top = rng.gen_range(1..=max);
                let left = rng.gen_range(1..=max);
                spec.stamp_patch(&mut img, top, left);
                positions[i] = Some((top, left));
            }
        }
        images.slice_mut(ndarray::s![i, .., .., ..]).assign(&img);
    }
    Ok((DatasetSplit::new(images, labels)?, positions))
}
