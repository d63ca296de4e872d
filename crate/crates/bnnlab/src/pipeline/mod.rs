//! Experiment orchestration: configs, run directories with manifests,
//! clustering and 2-D embedding of latent sets, the decision-manipulation
//! recipe, and report rendering.

pub mod cluster;
pub mod config;
pub mod embed2d;
pub mod manifest;
pub mod manipulate;
pub mod patch_experiment;
pub mod plot;
pub mod report;
pub mod run;

pub use cluster::{cluster_kmeans, select_k, silhouette_score, KSelection, KmeansResult};
pub use config::{DatasetConfig, DatasetKind, ExperimentConfig, Method, DATA_ROOT_ENV};
pub use embed2d::{embed_2d, Embed2dMethod, TSNE_MAX_POINTS};
pub use manifest::{RunManifest, MANIFEST_FILE};
pub use manipulate::{patch_paste, per_instance_prediction_breakdown, PredictionBreakdown, Rect};
pub use patch_experiment::{run_patch_experiment, PatchExperimentConfig, PatchExperimentOutcome};
pub use report::{render_report, GroupReport, MetricsReport, RenderOutcome};
pub use run::{
    am_config_for_run, compute_group_report, enumerate_groups, fit_group_posterior,
    generate_group_fvs, load_group_artifacts, recompute_metrics, run_experiment, GroupArtifacts,
    GroupSpec,
};
