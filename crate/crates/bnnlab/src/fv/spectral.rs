//! Decorrelated, whitened frequency-space parameterization for activation
//! maximization.
//!
//! An image is produced from complex Fourier coefficients per (decorrelated)
//! color plane: coefficients are scaled by a per-frequency whitening factor
//! that decays with frequency magnitude, inverse-transformed, mixed through a
//! 3x3 color matrix, and squashed to `[0, 1]` with a sigmoid. Optimizing in
//! this space keeps high-frequency energy out of the gradient.

use crate::error::{Error, Result};
use crate::linalg::{cholesky3, invert3};
use ndarray::{Array2, Array3};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// 3x3 color mixing matrix applied after the inverse Fourier transform.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ColorTransform {
    pub matrix: [[f64; 3]; 3],
}

impl ColorTransform {
    pub fn identity() -> Self {
        Self { matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    /// Cholesky factor of an empirical 3x3 channel covariance; colors sampled
    /// isotropically in the decorrelated space then follow the data's channel
    /// correlations.
    pub fn from_channel_covariance(cov: &[[f64; 3]; 3]) -> Result<Self> {
        Ok(Self { matrix: cholesky3(cov)? })
    }

    fn inverse(&self) -> Result<[[f64; 3]; 3]> {
        invert3(&self.matrix)
    }
}

/// Frequency-domain coefficients of one image: three complex planes.
#[derive(Debug, Clone)]
pub struct SpectralParams {
    pub planes: Vec<Array2<Complex64>>,
}

impl SpectralParams {
    pub fn zeros(side: usize) -> Self {
        Self { planes: vec![Array2::from_elem((side, side), Complex64::new(0.0, 0.0)); 3] }
    }

    pub fn side(&self) -> usize {
        self.planes[0].nrows()
    }

    pub fn scaled_add(&mut self, alpha: f64, other: &SpectralParams) {
        for (p, o) in self.planes.iter_mut().zip(&other.planes) {
            ndarray::Zip::from(p).and(o).for_each(|a, b| {
                a.re += alpha * b.re;
                a.im += alpha * b.im;
            });
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

const LOGIT_CLAMP: f64 = 1e-6;

/// The decode/encode machinery for one image side and color transform.
pub struct SpectralSpace {
    side: usize,
    whitening: Array2<f64>,
    color: ColorTransform,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl SpectralSpace {
    /// Natural-image whitening: scale `1 / max(|f|, 1/V)` with `f` the 2-D
    /// frequency in cycles per pixel.
    pub fn new(side: usize, color: ColorTransform) -> Result<Self> {
        let mut w = Array2::<f64>::zeros((side, side));
        for ky in 0..side {
            for kx in 0..side {
                let fy = fft_freq(ky, side);
                let fx = fft_freq(kx, side);
                let mag = (fx * fx + fy * fy).sqrt();
                w[[ky, kx]] = 1.0 / mag.max(1.0 / side as f64);
            }
        }
        Self::with_whitening(side, color, w)
    }

    /// Unit whitening: the transform reduces to a plain 2-D Fourier
    /// parameterization through the color matrix and sigmoid.
    pub fn unit_whitening(side: usize, color: ColorTransform) -> Result<Self> {
        Self::with_whitening(side, color, Array2::from_elem((side, side), 1.0))
    }

    pub fn with_whitening(side: usize, color: ColorTransform, whitening: Array2<f64>) -> Result<Self> {
        if side < 1 {
            return Err(Error::Input("image side must be positive".into()));
        }
        if whitening.shape() != [side, side] {
            return Err(Error::Input("whitening shape must match the image side".into()));
        }
        color.inverse()?; // invertibility check
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(side);
        let inv = planner.plan_fft_inverse(side);
        Ok(Self { side, whitening, color, fwd, inv })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn color(&self) -> &ColorTransform {
        &self.color
    }

    fn fft2(&self, plane: &Array2<Complex64>, inverse: bool) -> Array2<Complex64> {

        let fft = if inverse { &self.inv } else { &self.fwd };
        let mut data = plane.clone();
        // rows
        for mut row in data.rows_mut() {
            let slice = row.as_slice_mut().expect("contiguous row");
            fft.process(slice);
        }
        // columns via transpose
        let mut t = data.t().as_standard_layout().to_owned();
        for mut row in t.rows_mut() {
            let slice = row.as_slice_mut().expect("contiguous row");
            fft.process(slice);
        }
        t.t().as_standard_layout().to_owned()
    }

    /// Pre-sigmoid rgb planes for the given coefficients.
    fn decode_linear(&self, params: &SpectralParams) -> Array3<f64> {
        let v = self.side;
        let norm = 1.0 / (v * v) as f64;
        let mut spatial = Vec::with_capacity(3);
        for plane in &params.planes {
            let mut scaled = plane.clone();
            ndarray::Zip::from(&mut scaled).and(&self.whitening).for_each(|c, &w| {
                c.re *= w;
                c.im *= w;
            });
            let s = self.fft2(&scaled, true);
            spatial.push(s.mapv(|c| c.re * norm));
        }
        let mut out = Array3::<f64>::zeros((3, v, v));
        for ch in 0..3 {
            for c in 0..3 {
                let m = self.color.matrix[ch][c];
                if m != 0.0 {
                    out.slice_mut(ndarray::s![ch, .., ..])
                        .scaled_add(m, &spatial[c]);
                }
            }
        }
        out
    }

    /// Image in `[0, 1]` for the given coefficients.
    pub fn decode(&self, params: &SpectralParams) -> Array3<f64> {
        self.decode_linear(params).mapv(sigmoid)
    }

    /// Coefficients reproducing `image` (pixels clamped away from 0/1 by
    /// 1e-6 before the logit).
    pub fn encode(&self, image: &Array3<f64>) -> Result<SpectralParams> {
        if image.shape() != [3, self.side, self.side] {
            return Err(Error::Input(format!(
                "expected a 3x{0}x{0} image, got {1:?}",
                self.side,
                image.shape()
            )));
        }
        let pre = image.mapv(|p| logit(p.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP)));
        let minv = self.color.inverse()?;
        let v = self.side;
        let mut planes = Vec::with_capacity(3);
        for c in 0..3 {
            let mut plane = Array2::<f64>::zeros((v, v));
            for ch in 0..3 {
                let m = minv[c][ch];
                if m != 0.0 {
                    plane.scaled_add(m, &pre.slice(ndarray::s![ch, .., ..]));
                }
            }
            let complex = plane.mapv(|x| Complex64::new(x, 0.0));
            let mut coeff = self.fft2(&complex, false);
            ndarray::Zip::from(&mut coeff).and(&self.whitening).for_each(|c, &w| {
                c.re /= w;
                c.im /= w;
            });
            planes.push(coeff);
        }
        Ok(SpectralParams { planes })
    }

    /// Adjoint of [`decode`]: maps a pixel-space gradient to a coefficient
    /// gradient, given the decoded image (for the sigmoid derivative).
    pub fn grad_to_params(&self, pixel_grad: &Array3<f64>, image: &Array3<f64>) -> SpectralParams {
        let v = self.side;
        let norm = 1.0 / (v * v) as f64;
        // through the sigmoid
        let mut dpre = Array3::<f64>::zeros((3, v, v));
        ndarray::Zip::from(&mut dpre)
            .and(pixel_grad)
            .and(image)
            .for_each(|d, &g, &p| {
                *d = g * p * (1.0 - p);
            });
        // through the color matrix (transpose)
        let mut planes = Vec::with_capacity(3);
        for c in 0..3 {
            let mut dplane = Array2::<f64>::zeros((v, v));
            for ch in 0..3 {
                let m = self.color.matrix[ch][c];
                if m != 0.0 {
                    dplane.scaled_add(m, &dpre.slice(ndarray::s![ch, .., ..]));
                }
            }
            // through the scaled real-IFFT: grad_coeff = FFT(dplane) * w / V^2
            let complex = dplane.mapv(|x| Complex64::new(x, 0.0));
            let mut g = self.fft2(&complex, false);
            ndarray::Zip::from(&mut g).and(&self.whitening).for_each(|c, &w| {
                c.re *= w * norm;
                c.im *= w * norm;
            });
            planes.push(g);
        }
        SpectralParams { planes }
    }
}

/// Frequency of DFT bin `k` in cycles per pixel.
fn fft_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64 / n as f64
    } else {
        k as f64 / n as f64 - 1.0
    }
}

/// Raw pixel-space parameterization: pre-sigmoid values per pixel. Used when
/// `frequency_space` is off.
pub fn pixel_decode(pre: &Array3<f64>) -> Array3<f64> {
    pre.mapv(sigmoid)
}

pub fn pixel_grad(pixel_grad: &Array3<f64>, image: &Array3<f64>) -> Array3<f64> {
    let mut out = Array3::<f64>::zeros(image.raw_dim());
    ndarray::Zip::from(&mut out)
        .and(pixel_grad)
        .and(image)
        .for_each(|d, &g, &p| {
            *d = g * p * (1.0 - p);
        });
    out
}

pub fn pixel_encode(image: &Array3<f64>) -> Array3<f64> {
    image.mapv(|p| logit(p.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP)))
}
