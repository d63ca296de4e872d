//! The decision-manipulation recipe: a two-class dataset where one class
//! carries a bright patch and/or a global tint, dropout instances that
//! specialize on one cue or the other, FV clustering to find the
//! patch-sensitive instances, and the patch-paste flip test.

use crate::concept::{train_encoder, EncoderConfig};
use crate::data::{synth_patch_dataset, PatchSpec};
use crate::error::{Error, Result};
use crate::fv::{activation_maximize, AmConfig, AmObjective, TransformSet};
use crate::nn::{train_map, NetworkConfig, TrainSettings, WeightInstance};
use crate::pipeline::cluster::cluster_kmeans;
use crate::pipeline::manipulate::{patch_paste, per_instance_prediction_breakdown, Rect};
use crate::posterior::{mcdo_fit, mcdo_sample};
use crate::rng::child_seed;
use ndarray::{Array1, Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchExperimentConfig {
    pub master_seed: u64,
    /// Image side of the synthetic dataset.
    pub side: usize,
    pub train_samples: usize,
    pub dropout_rate: f64,
    pub instance_count: usize,
    /// Probability of each cue in class-1 training images.
    pub patch_prob: f64,
    pub tint_prob: f64,
    pub train: TrainSettings,
    pub am_steps: usize,
    pub encoder_epochs: usize,
    /// Tint-only probe images to test flips on.
    pub probe_count: usize,
}

impl Default for PatchExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            side: 24,
            train_samples: 1200,
            dropout_rate: 0.3,
            instance_count: 24,
            patch_prob: 0.65,
            tint_prob: 0.65,
            train: TrainSettings {
                epochs: 16,
                batch_size: 32,
                learning_rate: 0.08,
                momentum: 0.9,
                weight_decay: 1e-4,
                hflip: false,
                dropout: 0.0,
                seed: 0,
            },
            am_steps: 96,
            encoder_epochs: 40,
            probe_count: 12,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchExperimentOutcome {
    /// Cluster sizes over the instance FV latents (k = 2).
    pub cluster_sizes: Vec<usize>,
    /// Index of the cluster whose mean FV best matches the patch template.
    pub patch_cluster: usize,
    /// Template-match score per cluster.
    pub template_scores: Vec<f64>,
    /// (instance, probe) cases where a patch-cluster instance was wrong
    /// before the paste.
    pub wrong_before: usize,
    /// Of those, how many became correct after the paste.
    pub flipped: usize,
    /// `flipped / wrong_before`.
    pub flip_rate: f64,
    /// Vote fraction for the correct class on the first probe, before/after.
    pub vote_before: f64,
    pub vote_after: f64,
    /// Fraction of tint-cluster instance/probe cases already correct before
    /// any paste (context for the report).
    pub other_cluster_correct_rate: f64,
}

/// Maximum normalized cross-correlation of the patch template against an
/// image, over all placements. Both are standardized per window.
fn template_match_score(image: &Array3<f64>, template: &Array3<f64>) -> f64 {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let (tc, th, tw) = (template.shape()[0], template.shape()[1], template.shape()[2]);
    debug_assert_eq!(c, tc);
    if th > h || tw > w {
        return 0.0;
    }
    let t_mean = template.mean().unwrap_or(0.0);
    let t_centered = template.mapv(|v| v - t_mean);
    let t_norm = t_centered.mapv(|v| v * v).sum().sqrt().max(1e-12);
    let mut best = f64::NEG_INFINITY;
    for top in 0..=(h - th) {
        for left in 0..=(w - tw) {
            let window = image.slice(ndarray::s![.., top..top + th, left..left + tw]);
            let w_mean = window.mean().unwrap_or(0.0);
            let mut dot = 0.0;
            let mut norm = 0.0;
            for ch in 0..c {
                for y in 0..th {
                    for x in 0..tw {
                        let wv = window[[ch, y, x]] - w_mean;
                        dot += wv * t_centered[[ch, y, x]];
                        norm += wv * wv;
                    }
                }
            }
            let score = dot / (norm.sqrt().max(1e-12) * t_norm);
            if score > best {
                best = score;
            }
        }
    }
    best
}

/// Runs the full manipulation recipe and reports the flip statistics.
pub fn run_patch_experiment(cfg: &PatchExperimentConfig) -> Result<PatchExperimentOutcome> {
    let master = cfg.master_seed;
    let spec = PatchSpec { side: cfg.side, ..Default::default() };

    // dataset with both cues present in class 1
    let (train, _) = synth_patch_dataset(
        cfg.train_samples,
        child_seed(master, "patch-train", 0),
        spec,
        cfg.patch_prob,
        cfg.tint_prob,
    )?;

    let net = NetworkConfig {
        input_shape: crate::nn::ImageShape { height: cfg.side, width: cfg.side, channels: 3 },
        class_count: 2,
        blocks: vec![
            crate::nn::ConvBlockSpec { base_channels: 12, kernel: 3, pool: true },
            crate::nn::ConvBlockSpec { base_channels: 24, kernel: 3, pool: true },
            crate::nn::ConvBlockSpec { base_channels: 32, kernel: 3, pool: false },
        ],
        width_factor: 1.0,
        activation: crate::nn::Act::ReLU,
    };
    let mut settings = cfg.train.clone();
    settings.dropout = cfg.dropout_rate;
    settings.seed = child_seed(master, "patch-map", 0);
    let (map, _) = train_map(&net, &train, &settings)?;
    let posterior = mcdo_fit(&map, cfg.dropout_rate)?;
    let instances: Vec<WeightInstance> = (0..cfg.instance_count)
        .map(|t| mcdo_sample(&posterior, child_seed(master, "patch-sample", t as u64)))
        .collect::<Result<Vec<_>>>()?;

    // one FV per instance for the class-1 logit
    let cov = train.channel_covariance()?;
    let am = AmConfig {
        steps: cfg.am_steps,
        step_size: 0.05,
        image_side: cfg.side,
        transforms: TransformSet { jitter_px: 2, rotate_deg: 5.0, scale: (0.97, 1.03) },
        frequency_space: true,
        color: crate::fv::ColorTransform::from_channel_covariance(&cov)?,
        seed: 0,
    };
    let objective = AmObjective::ClassLogit { class: 1 };
    let fvs: Vec<Array3<f64>> = instances
        .par_iter()
        .enumerate()
        .map(|(t, inst)| {
            let seed = child_seed(master, "patch-am", t as u64);
            activation_maximize(inst, &objective, &am.with_seed(seed)).map(|fv| fv.image)
        })
        .collect::<Result<Vec<_>>>()?;

    // contrastive latents and k = 2 clustering
    let enc_cfg = EncoderConfig {
        input_side: cfg.side,
        trunk_channels: vec![8, 16, 32],
        head_hidden: 32,
        head_out: 16,
        epochs: cfg.encoder_epochs,
        batch_size: (fvs.len() / 2).max(2),
        seed: child_seed(master, "patch-encoder", 0),
        ..EncoderConfig::for_side(cfg.side)
    };
    let (encoder, _) = train_encoder(&fvs, &enc_cfg)?;
    let latents: Vec<Array1<f64>> =
        fvs.iter().map(|img| encoder.embed(img)).collect::<Result<Vec<_>>>()?;
    let mut latmat = Array2::<f64>::zeros((latents.len(), latents[0].len()));
    for (i, l) in latents.iter().enumerate() {
        latmat.row_mut(i).assign(l);
    }
    let clusters = cluster_kmeans(&latmat, 2, child_seed(master, "patch-kmeans", 0))?;

    // identify the patch-sensitive cluster by template matching on FVs
    let template = spec.patch_image();
    let mut template_scores = vec![0.0f64; 2];
    let mut counts = vec![0usize; 2];
    for (i, fv) in fvs.iter().enumerate() {
        let c = clusters.assignments[i];
        template_scores[c] += template_match_score(fv, &template);
        counts[c] += 1;
    }
    for c in 0..2 {
        if counts[c] > 0 {
            template_scores[c] /= counts[c] as f64;
        }
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::Numerical(
            "FV clustering produced an empty cluster; instances did not separate".into(),
        ));
    }
    let patch_cluster = if template_scores[0] >= template_scores[1] { 0 } else { 1 };

    // tint-only probes (class 1 without the patch)
    let (probe_set, _) = synth_patch_dataset(
        cfg.probe_count * 2,
        child_seed(master, "patch-probe", 0),
        spec,
        0.0,
        1.0,
    )?;
    let probe_idx: Vec<usize> =
        (0..probe_set.len()).filter(|&i| probe_set.label_index(i) == 1).collect();

    // a source image carrying the patch at a known position
    let (source_set, positions) = synth_patch_dataset(
        8,
        child_seed(master, "patch-source", 0),
        spec,
        1.0,
        0.0,
    )?;
    let (source_i, (top, left)) = positions
        .iter()
        .enumerate()
        .find_map(|(i, p)| p.map(|pos| (i, pos)))
        .ok_or_else(|| Error::Input("no patched source image generated".into()))?;
    let source = source_set.image(source_i).to_owned();
    let rect = Rect { top, left, height: spec.patch_side, width: spec.patch_side };

    // flip test over (patch-cluster instance, probe) pairs
    let mut wrong_before = 0usize;
    let mut flipped = 0usize;
    let mut other_correct = 0usize;
    let mut other_total = 0usize;
    let dest = (1usize, 1usize);
    for &pi in &probe_idx {
        let probe = probe_set.image(pi).to_owned();
        let edited = patch_paste(&probe.view(), &source.view(), rect, dest)?;
        for (t, inst) in instances.iter().enumerate() {
            let before = inst.predict_probs(&probe.view())?;
            let before_label =
                crate::metrics::argmax_tie_low(before.as_slice().expect("contiguous"));
            if clusters.assignments[t] == patch_cluster {
                if before_label != 1 {
                    wrong_before += 1;
                    let after = inst.predict_probs(&edited.view())?;
                    let after_label =
                        crate::metrics::argmax_tie_low(after.as_slice().expect("contiguous"));
                    if after_label == 1 {
                        flipped += 1;
                    }
                }
            } else {
                other_total += 1;
                if before_label == 1 {
                    other_correct += 1;
                }
            }
        }
    }
    let flip_rate = if wrong_before > 0 { flipped as f64 / wrong_before as f64 } else { 1.0 };

    // pie-chart style vote fractions for the first probe
    let probe0 = probe_set.image(probe_idx[0]).to_owned();
    let edited0 = patch_paste(&probe0.view(), &source.view(), rect, dest)?;
    let before_bd = per_instance_prediction_breakdown(&instances, &probe0.view())?;
    let after_bd = per_instance_prediction_breakdown(&instances, &edited0.view())?;

    Ok(PatchExperimentOutcome {
        cluster_sizes: counts,
        patch_cluster,
        template_scores,
        wrong_before,
        flipped,
        flip_rate,
        vote_before: before_bd.fractions.get(&1).copied().unwrap_or(0.0),
        vote_after: after_bd.fractions.get(&1).copied().unwrap_or(0.0),
        other_cluster_correct_rate: if other_total > 0 {
            other_correct as f64 / other_total as f64
        } else {
            0.0
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_match_finds_the_patch() {
        let spec = PatchSpec::default();
        let template = spec.patch_image();
        // image with the patch stamped at (5, 9)
        let (set, positions) = synth_patch_dataset(8, 3, spec, 1.0, 0.0).unwrap();
        let idx = positions.iter().position(|p| p.is_some()).unwrap();
        let with_patch = set.image(idx).to_owned();
        let score_with = template_match_score(&with_patch, &template);
        // plain class-0 image
        let plain_idx = (0..set.len()).find(|&i| set.label_index(i) == 0).unwrap();
        let plain = set.image(plain_idx).to_owned();
        let score_without = template_match_score(&plain, &template);
        assert!(
            score_with > 0.9,
            "patch should match strongly, got {score_with}"
        );
        assert!(score_with > score_without + 0.2);
    }
}
