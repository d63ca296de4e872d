//! The decision-manipulation mechanics: exact patch pasting into a test image
//! and per-instance prediction breakdowns (the pie-chart data).

use crate::error::{Error, Result};
use crate::nn::WeightInstance;
use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// A rectangle in (top, left, height, width) pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Copies `source_rect` from `source` into `target` at `dest = (top, left)`.
/// Pixels outside the pasted region are untouched; inside it they are exact
/// copies. Zero-area rects return the target unchanged.
pub fn patch_paste(
    target: &ArrayView3<f64>,
    source: &ArrayView3<f64>,
    source_rect: Rect,
    dest: (usize, usize),
) -> Result<Array3<f64>> {
    let (tc, th, tw) = (target.shape()[0], target.shape()[1], target.shape()[2]);
    let (sc, sh, sw) = (source.shape()[0], source.shape()[1], source.shape()[2]);
    if tc != sc {
        return Err(Error::Input("target and source channel counts differ".into()));
    }
    if source_rect.top + source_rect.height > sh || source_rect.left + source_rect.width > sw {
        return Err(Error::Input(format!(
            "source rect {source_rect:?} exceeds the {sh}x{sw} source"
        )));
    }
    if dest.0 + source_rect.height > th || dest.1 + source_rect.width > tw {
        return Err(Error::Input(format!(
            "pasting {}x{} at {dest:?} exceeds the {th}x{tw} target",
            source_rect.height, source_rect.width
        )));
    }
    let mut out = target.to_owned();
    for c in 0..tc {
        for y in 0..source_rect.height {
            for x in 0..source_rect.width {
                out[[c, dest.0 + y, dest.1 + x]] =
                    source[[c, source_rect.top + y, source_rect.left + x]];
            }
        }
    }
    Ok(out)
}

/// Per-instance argmax labels plus the label vote fractions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionBreakdown {
    /// Instance id -> predicted label, in input order.
    pub labels: Vec<(String, usize)>,
    /// Label -> fraction of instances voting for it.
    pub fractions: BTreeMap<usize, f64>,
}

/// Each instance's argmax prediction on `x` and the fraction per label.
pub fn per_instance_prediction_breakdown(
    instances: &[WeightInstance],
    x: &ArrayView3<f64>,
) -> Result<PredictionBreakdown> {
    if instances.is_empty() {
        return Err(Error::Input("breakdown needs at least one instance".into()));
    }
    let mut labels = Vec::with_capacity(instances.len());
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for inst in instances {
        let p = inst.predict_probs(x)?;
        let label = crate::metrics::argmax_tie_low(p.as_slice().expect("contiguous"));
        labels.push((inst.provenance.id(), label));
        *counts.entry(label).or_insert(0) += 1;
    }
    let n = instances.len() as f64;
    let fractions = counts.into_iter().map(|(l, c)| (l, c as f64 / n)).collect();
    Ok(PredictionBreakdown { labels, fractions })
}
