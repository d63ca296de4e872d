//! Datasets: the in-memory split type, binary format loaders (IDX, CIFAR
//! batches, PNG directories) and the procedural generators used when no real
//! data is on disk.

mod loaders;
mod synth;

pub use loaders::{
    load_cifar_batches, load_idx_split, load_png_directory, write_cifar_batch, write_idx_split,
};
pub use synth::{synth_digits, synth_patch_dataset, synth_textures, PatchSpec};

use crate::error::{Error, Result};
use ndarray::{Array2, Array4, ArrayView3};

/// A labelled image dataset.
///
/// Images are stored `[N, C, H, W]` with values in `[0, 1]`; labels are
/// one-hot rows `[N, classes]`.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    images: Array4<f64>,
    labels: Array2<f64>,
}

impl DatasetSplit {
    pub fn new(images: Array4<f64>, labels: Array2<f64>) -> Result<Self> {
        let n = images.shape()[0];
        if n == 0 {
            return Err(Error::Input("dataset must contain at least one sample".into()));
        }
        if labels.nrows() != n {
            return Err(Error::Input(format!(
                "label count {} does not match image count {}",
                labels.nrows(),
                n
            )));
        }
        if labels.ncols() < 2 {
            return Err(Error::Input("dataset needs at least 2 classes".into()));
        }
        for (i, row) in labels.rows().into_iter().enumerate() {
            let nonzero = row.iter().filter(|v| **v != 0.0).count();
            let sum: f64 = row.sum();
            if nonzero != 1 || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Input(format!(
                    "label row {i} is not one-hot (sum {sum}, {nonzero} nonzero entries)"
                )));
            }
        }
        if images.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::Input("image values must lie in [0, 1]".into()));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_count(&self) -> usize {
        self.labels.ncols()
    }

    /// `(channels, height, width)` of every image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn images(&self) -> &Array4<f64> {
        &self.images
    }

    pub fn labels(&self) -> &Array2<f64> {
        &self.labels
    }

    pub fn image(&self, i: usize) -> ArrayView3<'_, f64> {
        self.images.index_axis(ndarray::Axis(0), i)
    }

    /// Argmax of the one-hot label row.
    pub fn label_index(&self, i: usize) -> usize {
        crate::metrics::argmax_tie_low(self.labels.row(i).as_slice().expect("contiguous row"))
    }

    /// First `n` samples as a new split.
    pub fn take(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        DatasetSplit::new(
            self.images.slice(ndarray::s![..n, .., .., ..]).to_owned(),
            self.labels.slice(ndarray::s![..n, ..]).to_owned(),
        )
    }

    /// Subset by sample indices.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let (c, h, w) = self.image_shape();
        let mut images = Array4::<f64>::zeros((idx.len(), c, h, w));
        let mut labels = Array2::<f64>::zeros((idx.len(), self.class_count()));
        for (row, &i) in idx.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::Input(format!("sample index {i} out of range")));
            }
            images
                .index_axis_mut(ndarray::Axis(0), row)
                .assign(&self.images.index_axis(ndarray::Axis(0), i));
            labels.row_mut(row).assign(&self.labels.row(i));
        }
        DatasetSplit::new(images, labels)
    }

    /// Replicates a single channel to three. No-op for 3-channel data.
    pub fn expand_to_rgb(&self) -> Result<Self> {
        let (c, h, w) = self.image_shape();
        if c == 3 {
            return Ok(self.clone());
        }
        if c != 1 {
            return Err(Error::Input(format!("cannot expand {c}-channel images to rgb")));
        }
        let n = self.len();
        let mut images = Array4::<f64>::zeros((n, 3, h, w));
        for i in 0..n {
            for ch in 0..3 {
                images
                    .slice_mut(ndarray::s![i, ch, .., ..])
                    .assign(&self.images.slice(ndarray::s![i, 0, .., ..]));
            }
        }
        DatasetSplit::new(images, self.labels.clone())
    }

    /// Empirical 3x3 channel covariance of the pixel values, used to build
    /// the color-decorrelation matrix for the spectral parameterization.
    pub fn channel_covariance(&self) -> Result<[[f64; 3]; 3]> {
        let (c, h, w) = self.image_shape();
        if c != 3 {
            return Err(Error::Input("channel covariance requires rgb images".into()));
        }
        let n_px = (self.len() * h * w) as f64;
        let mut mean = [0.0f64; 3];
        for i in 0..self.len() {
            for ch in 0..3 {
                mean[ch] += self.images.slice(ndarray::s![i, ch, .., ..]).sum();
            }
        }
        for m in mean.iter_mut() {
            *m /= n_px;
        }
        let mut cov = [[0.0f64; 3]; 3];
        for i in 0..self.len() {
            for y in 0..h {
                for x in 0..w {
                    let px = [
                        self.images[[i, 0, y, x]] - mean[0],
                        self.images[[i, 1, y, x]] - mean[1],
                        self.images[[i, 2, y, x]] - mean[2],
                    ];
                    for a in 0..3 {
                        for b in 0..3 {
                            cov[a][b] += px[a] * px[b];
                        }
                    }
                }
            }
        }
        for row in cov.iter_mut() {
            for v in row.iter_mut() {
                *v /= n_px;
            }
        }
        // Regularize so flat channels still factor.
        for (a, row) in cov.iter_mut().enumerate() {
            row[a] += 1e-4;
        }
        Ok(cov)
    }
}
