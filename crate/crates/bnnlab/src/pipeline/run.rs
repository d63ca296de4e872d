//! End-to-end experiment execution: train, fit posteriors, sample instances,
//! run activation maximization, train the concept encoder, embed, compute
//! metrics, and render the report — all into a fixed run-directory layout
//! (`weights/`, `posteriors/`, `fvs/`, `latents/`, `metrics/`, `plots/`,
//! `manifest.json`).

use crate::concept::EncoderParams;
use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::fv::{activation_maximize, save_fv, AmConfig, AmObjective, ColorTransform, FeatureVisualization, TransformSet};
use crate::metrics as m;
use crate::nn::{instance_accuracy, train_map, WeightInstance};
use crate::pipeline::cluster::{cluster_kmeans, select_k, silhouette_score};
use crate::pipeline::config::{ExperimentConfig, Method};
use crate::pipeline::embed2d::{embed_2d, Embed2dMethod};
use crate::pipeline::manifest::RunManifest;
use crate::pipeline::report::{GroupReport, MetricsReport};
use crate::posterior::{kfac_fit, mcdo_fit, multiswag_fit, swag_collect, Posterior};
use crate::rng::child_seed;
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

/// One (method-variant, width) experiment cell.
#[derive(Debug, Clone)]
pub struct GroupSpec {
    /// Label with the method parameter, e.g. `mcdo-5`, `multiswag-k5`.
    pub label: String,
    pub method: Method,
    pub width: f64,
    /// Dropout rate for mcdo groups.
    pub rate: Option<f64>,
}

impl GroupSpec {
    pub fn tag(&self) -> String {
        format!("{}-b{}", self.label, self.width)
    }
}

/// Expands the config's method/width grid into group specs.
pub fn enumerate_groups(config: &ExperimentConfig) -> Vec<GroupSpec> {
    let mut out = Vec::new();
    for &width in &config.network.width_factors {
        for method in &config.posterior.methods {
            match method {
                Method::Mcdo => {
                    for &rate in &config.posterior.mcdo_rates {
                        let pct = rate * 100.0;
                        let label = if (pct - pct.round()).abs() < 1e-9 {
                            format!("mcdo-{}", pct.round() as i64)
                        } else {
                            format!("mcdo-{pct}")
                        };
                        out.push(GroupSpec { label, method: *method, width, rate: Some(rate) });
                    }
                }
                Method::Multiswag => out.push(GroupSpec {
                    label: format!("multiswag-k{}", config.posterior.k),
                    method: *method,
                    width,
                    rate: None,
                }),
                Method::Kfac => {
                    out.push(GroupSpec { label: "kfac".into(), method: *method, width, rate: None })
                }
                Method::Swag => {
                    out.push(GroupSpec { label: "swag".into(), method: *method, width, rate: None })
                }
            }
        }
    }
    out
}

/// Fits one group's posterior from the training data.
pub fn fit_group_posterior(
    config: &ExperimentConfig,
    group: &GroupSpec,
    train: &DatasetSplit,
    master_seed: u64,
) -> Result<Posterior> {
    let chw = train.image_shape();
    let net = config.network_config(group.width, chw);
    let stage = format!("fit:{}", group.tag());
    let mut settings = config.train.clone();
    settings.seed = child_seed(master_seed, &stage, 0);
    match group.method {
        Method::Mcdo => {
            let rate = group.rate.expect("mcdo group has a rate");
            settings.dropout = rate;
            let (map, _) = train_map(&net, train, &settings)?;
            Ok(Posterior::Dropout(mcdo_fit(&map, rate)?))
        }
        Method::Kfac => {
            let (map, _) = train_map(&net, train, &settings)?;
            let fit_data = train.take(config.posterior.kfac_fit_samples)?;
            Ok(Posterior::Kfac(kfac_fit(&map, &fit_data, config.posterior.damping)?))
        }
        Method::Swag => {
            let (map, _) = train_map(&net, train, &settings)?;
            let mut collect = config.posterior.swag.clone();
            collect.max_rank = config.posterior.max_rank;
            collect.seed = child_seed(master_seed, &stage, 1);
            Ok(Posterior::Swag(swag_collect(&map, train, &collect)?))
        }
        Method::Multiswag => {
            let mut collect = config.posterior.swag.clone();
            collect.max_rank = config.posterior.max_rank;
            let posterior = multiswag_fit(
                &net,
                train,
                config.posterior.k,
                &settings,
                &collect,
                child_seed(master_seed, &stage, 2),
            )?;
            Ok(Posterior::MultiSwag(posterior))
        }
    }
}

/// Draws the group's instances. Mixture draws carry their component index.
pub fn sample_group_instances(
    posterior: &Posterior,
    group: &GroupSpec,
    count: usize,
    master_seed: u64,
) -> Result<Vec<WeightInstance>> {
    let stage = format!("sample:{}", group.tag());
    let mut out = Vec::with_capacity(count);
    match posterior {
        Posterior::Kfac(p) => {
            // prepare the factor inverse square roots once
            let sampler = crate::posterior::KfacSampler::prepare(p)?;
            for t in 0..count {
                out.push(sampler.sample(child_seed(master_seed, &stage, t as u64))?);
            }
        }
        _ => {
            for t in 0..count {
                out.push(posterior.sample(child_seed(master_seed, &stage, t as u64))?);
            }
        }
    }
    Ok(out)
}

/// The AM configuration for a run, with the dataset-derived color transform.
pub fn am_config_for_run(config: &ExperimentConfig, color: ColorTransform) -> AmConfig {
    AmConfig {
        steps: config.am.steps,
        step_size: config.am.step_size,
        image_side: config.am.image_side,
        transforms: config
            .am
            .transforms
            .unwrap_or_else(|| TransformSet::defaults_for_side(config.am.image_side)),
        frequency_space: config.am.frequency_space,
        color,
        seed: 0,
    }
}

/// Runs AM for every (instance, replicate-seed) pair in parallel.
pub fn generate_group_fvs(
    instances: &[WeightInstance],
    objective: &AmObjective,
    base: &AmConfig,
    seeds_per_instance: usize,
    group_tag: &str,
    master_seed: u64,
) -> Result<Vec<Vec<FeatureVisualization>>> {
    let stage = format!("am:{group_tag}");
    let jobs: Vec<(usize, usize)> = (0..instances.len())
        .flat_map(|t| (0..seeds_per_instance).map(move |s| (t, s)))
        .collect();
    let results: Vec<Result<(usize, FeatureVisualization)>> = jobs
        .par_iter()
        .map(|&(t, s)| {
            let seed =
                child_seed(master_seed, &stage, (t * seeds_per_instance + s) as u64);
            let fv = activation_maximize(&instances[t], objective, &base.with_seed(seed))?;
            Ok((t, fv))
        })
        .collect();
    let mut per_instance: Vec<Vec<FeatureVisualization>> = vec![Vec::new(); instances.len()];
    for r in results {
        let (t, fv) = r?;
        per_instance[t].push(fv);
    }
    Ok(per_instance)
}

/// Everything known about one group after the generation stages.
pub struct GroupArtifacts {
    pub spec: GroupSpec,
    pub posterior: Posterior,
    pub instances: Vec<WeightInstance>,
    /// FV replicates per instance (one per AM seed).
    pub fvs: Vec<Vec<FeatureVisualization>>,
    /// Mode-mean instances and their FVs, for mixtures.
    pub mode_means: Vec<WeightInstance>,
    pub mode_mean_fvs: Vec<FeatureVisualization>,
}

/// Per-group metrics given the embedded latents. `latent_of` must yield the
/// latent for any FV produced in this run.
#[allow(clippy::too_many_arguments)]
pub fn compute_group_report(
    group: &GroupArtifacts,
    encoder: &EncoderParams,
    eval: &DatasetSplit,
    ece_bins: usize,
    knn_starts: usize,
    cluster_k: usize,
    tsne_perplexity: f64,
    master_seed: u64,
) -> Result<GroupReport> {
    let t = group.instances.len();
    let latents_per_instance: Vec<Vec<Array1<f64>>> = group
        .fvs
        .iter()
        .map(|reps| {
            reps.iter()
                .map(|fv| encoder.embed(&fv.image))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    // one latent per instance: the first AM seed
    let instance_latents: Vec<Array1<f64>> = latents_per_instance
        .iter()
        .map(|reps| reps.first().cloned().ok_or_else(|| Error::Input("instance without FV".into())))
        .collect::<Result<Vec<_>>>()?;
    let fv_var = m::fv_var(&instance_latents)?;

    // per-instance predictive probabilities over the evaluation set
    let per_instance_probs: Vec<Array2<f64>> = group
        .instances
        .par_iter()
        .map(|inst| inst.predict_probs_batch(eval.images()))
        .collect::<Result<Vec<_>>>()?;
    let mut ensemble = Array2::<f64>::zeros((eval.len(), eval.class_count()));
    for p in &per_instance_probs {
        ensemble += p;
    }
    ensemble /= t as f64;
    let labels: Vec<usize> = (0..eval.len()).map(|i| eval.label_index(i)).collect();
    let mean_predictive_entropy = m::mean_entropy_of_probs(&ensemble)?;
    let ensemble_accuracy = crate::nn::accuracy(&ensemble, eval)?;
    let ensemble_ece = m::ece(&ensemble, &labels, ece_bins)?;
    let average_instance_accuracy = {
        let mut acc = 0.0;
        for inst in &group.instances {
            acc += instance_accuracy(inst, eval)?;
        }
        acc / t as f64
    };

    // mode structure (mixtures only)
    let components: Vec<Option<usize>> =
        group.instances.iter().map(|i| i.provenance.component).collect();
    let mut inter_mode_var = None;
    let mut intra_mode_var = None;
    let mut intra_mean_centered = None;
    let mut accuracy_delta = None;
    let mut ece_delta = None;
    if !group.mode_mean_fvs.is_empty() {
        let centers: Vec<Array1<f64>> = group
            .mode_mean_fvs
            .iter()
            .map(|fv| encoder.embed(&fv.image))
            .collect::<Result<Vec<_>>>()?;
        inter_mode_var = Some(m::inter_mode_var(&centers)?);
        let k = centers.len();
        let mut modes: Vec<m::ModeLatents> = (0..k)
            .map(|ki| m::ModeLatents { center: centers[ki].clone(), members: Vec::new() })
            .collect();
        for (i, comp) in components.iter().enumerate() {
            if let Some(ki) = comp {
                if *ki < k {
                    modes[*ki].members.push(instance_latents[i].clone());
                }
            }
        }
        if modes.iter().all(|mo| !mo.members.is_empty()) {
            intra_mode_var = Some(m::intra_mode_var(&modes)?);
            intra_mean_centered = Some(m::intra_mode_var_mean_centered(&modes)?);
        }
        // ensembling deltas: pooled ensemble vs average per-mode ensemble
        let mut mode_accs = Vec::new();
        let mut mode_eces = Vec::new();
        for ki in 0..k {
            let idx: Vec<usize> = (0..t).filter(|&i| components[i] == Some(ki)).collect();
            if idx.is_empty() {
                continue;
            }
            let mut probs = Array2::<f64>::zeros((eval.len(), eval.class_count()));
            for &i in &idx {
                probs += &per_instance_probs[i];
            }
            probs /= idx.len() as f64;
            mode_accs.push(crate::nn::accuracy(&probs, eval)?);
            mode_eces.push(m::ece(&probs, &labels, ece_bins)?);
        }
        if !mode_accs.is_empty() {
            let avg_acc = mode_accs.iter().sum::<f64>() / mode_accs.len() as f64;
            let avg_ece = mode_eces.iter().sum::<f64>() / mode_eces.len() as f64;
            accuracy_delta = Some(ensemble_accuracy - avg_acc);
            ece_delta = Some(ensemble_ece - avg_ece);
        }
    }

    // replicate centers (Fig.-3 style) when multiple AM seeds exist
    let centers = if latents_per_instance.iter().any(|r| r.len() >= 2) {
        let replicates: Vec<(String, Vec<Array1<f64>>)> = group
            .instances
            .iter()
            .zip(&latents_per_instance)
            .map(|(inst, reps)| (inst.provenance.id(), reps.clone()))
            .collect();
        Some(m::instance_centers(&replicates, child_seed(master_seed, "centers", 0))?)
    } else {
        None
    };

    // k-NN diversity sweep
    let ids: Vec<String> = group.instances.iter().map(|i| i.provenance.id()).collect();
    let (knn, knn_correlation) = if knn_starts > 0 && t >= 3 {
        let mut rng = crate::rng::stage_rng(master_seed, "knn-starts", 0);
        let mut pool: Vec<usize> = (0..t).collect();
        use rand::seq::SliceRandom;
        pool.shuffle(&mut rng);
        let starts: Vec<usize> = pool.into_iter().take(knn_starts.min(t)).collect();
        let input = m::KnnSweepInput { ids: &ids, latents: &instance_latents, probs: &per_instance_probs };
        let sweep = m::knn_diversity_sweep(&input, &starts)?;
        let corr = m::pearson_corr(&sweep.fv_vars, &sweep.mean_entropies).ok();
        (Some(sweep), corr)
    } else {
        (None, None)
    };

    // clustering and 2-D embedding over instance latents
    let z = instance_latents[0].len();
    let mut latmat = Array2::<f64>::zeros((t, z));
    for (i, l) in instance_latents.iter().enumerate() {
        latmat.row_mut(i).assign(l);
    }
    let (cluster_k_used, cluster_assignments, silhouette) = if t >= 4 {
        let k = if cluster_k >= 1 {
            cluster_k.min(t)
        } else {
            match select_k(&latmat, 2..=8.min(t - 1), child_seed(master_seed, "select-k", 0)) {
                Ok(sel) => sel.recommended_k,
                Err(_) => 1,
            }
        };
        let res = cluster_kmeans(&latmat, k, child_seed(master_seed, "kmeans", 0))?;
        let sil = if k >= 2 && k < t {
            silhouette_score(&latmat, &res.assignments, k).ok()
        } else {
            None
        };
        (k, res.assignments, sil)
    } else {
        (1, vec![0; t], None)
    };
    let embedding_2d: Vec<(f64, f64)> = if t >= 4 {
        let perp = tsne_perplexity.min((t - 1) as f64).max(2.0).min(t as f64 - 1.0);
        let coords = embed_2d(&latmat, Embed2dMethod::Tsne, perp, child_seed(master_seed, "tsne", 0))?;
        (0..t).map(|i| (coords[[i, 0]], coords[[i, 1]])).collect()
    } else {
        Vec::new()
    };

    Ok(GroupReport {
        method: group.spec.label.clone(),
        width_factor: group.spec.width,
        instance_count: t,
        instance_ids: ids,
        components,
        fv_var,
        mean_predictive_entropy,
        ensemble_accuracy,
        ensemble_ece,
        average_instance_accuracy,
        inter_mode_var,
        intra_mode_var,
        intra_mode_var_mean_centered: intra_mean_centered,
        accuracy_delta,
        ece_delta,
        centers,
        knn,
        knn_correlation,
        cluster_k: cluster_k_used,
        cluster_assignments,
        silhouette,
        embedding_2d,
    })
}

fn run_stage<T>(
    manifest: &mut RunManifest,
    run_dir: &Path,
    name: &str,
    f: impl FnOnce() -> Result<T>,
) -> Result<T> {
    match f() {
        Ok(v) => {
            manifest.record_stage_ok(name);
            Ok(v)
        }
        Err(e) => {
            manifest.record_stage_failed(name, &e);
            // keep partial artifacts; index and persist what exists
            let _ = manifest.index_remaining(run_dir);
            let _ = manifest.save(run_dir);
            Err(Error::Stage { stage: name.to_string(), source: Box::new(e) })
        }
    }
}

/// Writes the latent CSV: one row per FV with id, instance, group, component,
/// AM seed and the latent coordinates.
fn write_latents_csv(
    path: &Path,
    rows: &[(String, String, String, Option<usize>, u64, Array1<f64>)],
) -> Result<()> {
    let z = rows.first().map(|r| r.5.len()).unwrap_or(0);
    let mut header: Vec<String> =
        vec!["fv_id".into(), "instance".into(), "group".into(), "component".into(), "am_seed".into()];
    for i in 0..z {
        header.push(format!("z{}", i + 1));
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(id, inst, group, comp, seed, lat)| {
            let mut row = vec![
                id.clone(),
                inst.clone(),
                group.clone(),
                comp.map(|k| k.to_string()).unwrap_or_default(),
                seed.to_string(),
            ];
            row.extend(lat.iter().map(|v| crate::io::fmt_f64(*v)));
            row
        })
        .collect();
    crate::io::write_csv(path, &header_refs, &body)
}

/// Executes the full pipeline for `config` into `run_dir`. Deterministic per
/// `(config, master_seed)`: artifact hashes of re-runs match for every
/// deterministic stage.
pub fn run_experiment(config: &ExperimentConfig, run_dir: &Path) -> Result<RunManifest> {
    config.validate()?;
    std::fs::create_dir_all(run_dir)?;
    for sub in ["weights", "posteriors", "fvs", "latents", "metrics", "plots"] {
        std::fs::create_dir_all(run_dir.join(sub))?;
    }
    let mut manifest = RunManifest::new(&config.digest());
    let master = config.master_seed;

    // persist the exact configuration driving this run
    let config_path = run_dir.join("config.toml");
    std::fs::write(
        &config_path,
        toml::to_string_pretty(config).map_err(|e| Error::Serde(e.to_string()))?,
    )?;
    manifest.index_artifact(run_dir, &config_path, "config")?;

    let (train, test) = run_stage(&mut manifest, run_dir, "dataset", || config.dataset.load(master))?;
    let eval = test.take(config.metrics.eval_samples)?;
    let color = match train.channel_covariance() {
        Ok(cov) => ColorTransform::from_channel_covariance(&cov)?,
        Err(_) => ColorTransform::identity(),
    };
    let am_base = am_config_for_run(config, color);
    let objective = AmObjective::ClassLogit { class: config.am.target_class };

    let specs = enumerate_groups(config);
    let mut groups: Vec<GroupArtifacts> = Vec::with_capacity(specs.len());
    for spec in specs {
        let tag = spec.tag();
        let posterior = run_stage(&mut manifest, run_dir, &format!("fit:{tag}"), || {
            let p = fit_group_posterior(config, &spec, &train, master)?;
            p.save(&run_dir.join("posteriors").join(format!("{tag}.blab")))?;
            Ok(p)
        })?;
        manifest.index_artifact(
            run_dir,
            &run_dir.join("posteriors").join(format!("{tag}.blab")),
            "posterior",
        )?;

        let instances = run_stage(&mut manifest, run_dir, &format!("sample:{tag}"), || {
            let instances =
                sample_group_instances(&posterior, &spec, config.posterior.instances, master)?;
            let dir = run_dir.join("weights").join(&tag);
            std::fs::create_dir_all(&dir)?;
            for (t, inst) in instances.iter().enumerate() {
                inst.save(&dir.join(format!("t{t:03}.blab")))?;
            }
            Ok(instances)
        })?;

        let (fvs, mode_means, mode_mean_fvs) =
            run_stage(&mut manifest, run_dir, &format!("am:{tag}"), || {
                let fvs = generate_group_fvs(
                    &instances,
                    &objective,
                    &am_base,
                    config.am.seeds_per_instance,
                    &tag,
                    master,
                )?;
                // mode-mean FVs for mixtures (fixed AM seed per component)
                let mut mode_means = Vec::new();
                let mut mode_mean_fvs = Vec::new();
                if let Posterior::MultiSwag(p) = &posterior {
                    for k in 0..p.k() {
                        let mut mean_inst = p.component_mean_instance(k)?;
                        mean_inst.provenance.method = format!("{}-mean", spec.label);
                        mean_inst.provenance.seed = k as u64;
                        let seed = child_seed(master, &format!("am-mode:{tag}"), k as u64);
                        let fv =
                            activation_maximize(&mean_inst, &objective, &am_base.with_seed(seed))?;
                        mode_means.push(mean_inst);
                        mode_mean_fvs.push(fv);
                    }
                }
                let fv_dir = run_dir.join("fvs").join(&tag);
                for reps in &fvs {
                    for fv in reps {
                        save_fv(fv, &fv_dir)?;
                    }
                }
                for fv in &mode_mean_fvs {
                    save_fv(fv, &fv_dir)?;
                }
                Ok((fvs, mode_means, mode_mean_fvs))
            })?;

        groups.push(GroupArtifacts { spec, posterior, instances, fvs, mode_means, mode_mean_fvs });
    }

    // one encoder over the pooled FV corpus so latent distances are
    // comparable across methods and widths
    let corpus: Vec<ndarray::Array3<f64>> = groups
        .iter()
        .flat_map(|g| {
            g.fvs
                .iter()
                .flat_map(|reps| reps.iter().map(|fv| fv.image.clone()))
                .chain(g.mode_mean_fvs.iter().map(|fv| fv.image.clone()))
        })
        .collect();
    let encoder = run_stage(&mut manifest, run_dir, "encoder", || {
        let mut enc_cfg = config
            .encoder
            .to_encoder_config(config.am.image_side, child_seed(master, "encoder", 0));
        enc_cfg.batch_size = enc_cfg.batch_size.min((corpus.len() / 2).max(2));
        let (enc, _losses) = crate::concept::train_encoder(&corpus, &enc_cfg)?;
        enc.save(&run_dir.join("encoder.blab"))?;
        Ok(enc)
    })?;
    manifest.index_artifact(run_dir, &run_dir.join("encoder.blab"), "encoder")?;

    // embed every FV and persist the latent table
    run_stage(&mut manifest, run_dir, "embed", || {
        let mut rows = Vec::new();
        for g in &groups {
            for reps in &g.fvs {
                for fv in reps {
                    let lat = encoder.embed(&fv.image)?;
                    rows.push((
                        fv.id(),
                        fv.instance.id(),
                        g.spec.tag(),
                        fv.instance.component,
                        fv.init_seed,
                        lat,
                    ));
                }
            }
            for fv in &g.mode_mean_fvs {
                let lat = encoder.embed(&fv.image)?;
                rows.push((
                    fv.id(),
                    fv.instance.id(),
                    g.spec.tag(),
                    fv.instance.component,
                    fv.init_seed,
                    lat,
                ));
            }
        }
        write_latents_csv(&run_dir.join("latents").join("latents.csv"), &rows)
    })?;
    manifest.index_artifact(run_dir, &run_dir.join("latents").join("latents.csv"), "latents")?;

    // metrics per group
    let report = run_stage(&mut manifest, run_dir, "metrics", || {
        let mut group_reports = Vec::new();
        for g in &groups {
            group_reports.push(compute_group_report(
                g,
                &encoder,
                &eval,
                config.metrics.ece_bins,
                config.metrics.knn_starts,
                config.metrics.cluster_k,
                config.metrics.tsne_perplexity,
                master,
            )?);
        }
        let mut expected: Vec<String> = vec!["fvvar_by_method".into()];
        if group_reports.iter().any(|g| g.knn.is_some()) {
            expected.push("diversity_vs_entropy".into());
        }
        if group_reports.iter().any(|g| g.centers.is_some()) {
            expected.push("centers_hist".into());
        }
        if group_reports.iter().any(|g| !g.embedding_2d.is_empty()) {
            expected.push("latent_scatter".into());
        }
        if group_reports.iter().any(|g| g.inter_mode_var.is_some()) {
            expected.push("inter_intra_vs_width".into());
        }
        if group_reports.iter().any(|g| g.accuracy_delta.is_some()) {
            expected.push("ensemble_deltas_vs_width".into());
        }
        let report = MetricsReport {
            schema_version: 1,
            config_digest: config.digest(),
            groups: group_reports,
            expected_plots: expected,
        };
        report.save(run_dir)?;
        Ok(report)
    })?;
    manifest.index_artifact(run_dir, &run_dir.join(crate::pipeline::report::REPORT_FILE), "metrics")?;

    run_stage(&mut manifest, run_dir, "report", || {
        crate::pipeline::report::render_report(run_dir).map(|_| ())
    })?;
    let _ = report;

    manifest.index_remaining(run_dir)?;
    manifest.save(run_dir)?;
    Ok(manifest)
}

/// Reloads one group's artifacts from a run directory (posterior, sampled
/// instances, FVs with replicate order re-derived from the seed schedule).
pub fn load_group_artifacts(
    run_dir: &Path,
    config: &ExperimentConfig,
    spec: &GroupSpec,
) -> Result<GroupArtifacts> {
    let tag = spec.tag();
    let master = config.master_seed;
    let posterior = Posterior::load(&run_dir.join("posteriors").join(format!("{tag}.blab")))?;

    let weights_dir = run_dir.join("weights").join(&tag);
    let mut instance_files: Vec<PathBuf> = std::fs::read_dir(&weights_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|e| e == "blab").unwrap_or(false))
        .collect();
    instance_files.sort();
    let instances: Vec<WeightInstance> =
        instance_files.iter().map(|p| WeightInstance::load(p)).collect::<Result<Vec<_>>>()?;

    // index FV records by id
    let fv_dir = run_dir.join("fvs").join(&tag);
    let mut records: std::collections::BTreeMap<String, crate::fv::FvRecord> =
        std::collections::BTreeMap::new();
    if fv_dir.exists() {
        for entry in std::fs::read_dir(&fv_dir)? {
            let p = entry?.path();
            if p.extension().map(|e| e == "json").unwrap_or(false) {
                let rec: crate::fv::FvRecord =
                    serde_json::from_str(&std::fs::read_to_string(&p)?)?;
                records.insert(rec.id.clone(), rec);
            }
        }
    }
    let load_image = |id: &str| -> Result<ndarray::Array3<f64>> {
        crate::io::load_png(&fv_dir.join(format!("{id}.png")))
    };

    // replicate order re-derived from the AM seed schedule
    let s_per = config.am.seeds_per_instance;
    let am_stage = format!("am:{tag}");
    let mut fvs: Vec<Vec<FeatureVisualization>> = Vec::with_capacity(instances.len());
    for (t, inst) in instances.iter().enumerate() {
        let mut reps = Vec::with_capacity(s_per);
        for s in 0..s_per {
            let seed = child_seed(master, &am_stage, (t * s_per + s) as u64);
            let id = format!("{}-am{}", inst.provenance.id(), seed);
            let rec = records
                .get(&id)
                .ok_or_else(|| Error::Format(format!("missing FV record {id}")))?;
            reps.push(FeatureVisualization {
                image: load_image(&id)?,
                instance: rec.instance.clone(),
                objective: rec.objective,
                config: rec.config.clone(),
                init_seed: rec.init_seed,
                final_objective: rec.final_objective,
            });
        }
        fvs.push(reps);
    }

    // mode means for mixtures
    let mut mode_means = Vec::new();
    let mut mode_mean_fvs = Vec::new();
    if let Posterior::MultiSwag(p) = &posterior {
        for k in 0..p.k() {
            let mut mean_inst = p.component_mean_instance(k)?;
            mean_inst.provenance.method = format!("{}-mean", spec.label);
            mean_inst.provenance.seed = k as u64;
            let seed = child_seed(master, &format!("am-mode:{tag}"), k as u64);
            let id = format!("{}-am{}", mean_inst.provenance.id(), seed);
            let rec = records
                .get(&id)
                .ok_or_else(|| Error::Format(format!("missing mode-mean FV record {id}")))?;
            mode_mean_fvs.push(FeatureVisualization {
                image: load_image(&id)?,
                instance: rec.instance.clone(),
                objective: rec.objective,
                config: rec.config.clone(),
                init_seed: rec.init_seed,
                final_objective: rec.final_objective,
            });
            mode_means.push(mean_inst);
        }
    }
    Ok(GroupArtifacts { spec: spec.clone(), posterior, instances, fvs, mode_means, mode_mean_fvs })
}

/// Recomputes the metrics report of an existing run directory from its stored
/// artifacts and re-renders the report.
pub fn recompute_metrics(run_dir: &Path) -> Result<MetricsReport> {
    let config = ExperimentConfig::from_file(&run_dir.join("config.toml"))?;
    let (_, test) = config.dataset.load(config.master_seed)?;
    let eval = test.take(config.metrics.eval_samples)?;
    let encoder = EncoderParams::load(&run_dir.join("encoder.blab"))?;
    let mut group_reports = Vec::new();
    let mut expected: Vec<String> = vec!["fvvar_by_method".into()];
    for spec in enumerate_groups(&config) {
        let g = load_group_artifacts(run_dir, &config, &spec)?;
        group_reports.push(compute_group_report(
            &g,
            &encoder,
            &eval,
            config.metrics.ece_bins,
            config.metrics.knn_starts,
            config.metrics.cluster_k,
            config.metrics.tsne_perplexity,
            config.master_seed,
        )?);
    }
    if group_reports.iter().any(|g| g.knn.is_some()) {
        expected.push("diversity_vs_entropy".into());
    }
    if group_reports.iter().any(|g| g.centers.is_some()) {
        expected.push("centers_hist".into());
    }
    if group_reports.iter().any(|g| !g.embedding_2d.is_empty()) {
        expected.push("latent_scatter".into());
    }
    if group_reports.iter().any(|g| g.inter_mode_var.is_some()) {
        expected.push("inter_intra_vs_width".into());
    }
    if group_reports.iter().any(|g| g.accuracy_delta.is_some()) {
        expected.push("ensemble_deltas_vs_width".into());
    }
    let report = MetricsReport {
        schema_version: 1,
        config_digest: config.digest(),
        groups: group_reports,
        expected_plots: expected,
    };
    report.save(run_dir)?;
    Ok(report)
}

/// Collects the FV images stored in a run directory (for re-embedding via the
/// CLI).
pub fn load_fv_corpus(run_dir: &Path) -> Result<Vec<(PathBuf, ndarray::Array3<f64>)>> {
    let mut out = Vec::new();
    let fv_root = run_dir.join("fvs");
    let mut stack = vec![fv_root];
    while let Some(dir) = stack.pop() {
        if !dir.exists() {
            continue;
        }
        for entry in std::fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().map(|e| e == "png").unwrap_or(false) {
                let img = crate::io::load_png(&p)?;
                out.push((p, img));
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}
