//! The structured metrics report of a run, its CSV exports, and the plot
//! rendering stage. Every plotted number is also present in a CSV, written
//! from the same in-memory values.

use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_csv};
use crate::metrics::{CentersReport, KnnSweep};
use crate::pipeline::plot;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const REPORT_FILE: &str = "metrics/report.json";

/// Per-(method, width) experiment group metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupReport {
    /// Method label including its parameter, e.g. `mcdo-5`, `multiswag-k5`.
    pub method: String,
    pub width_factor: f64,
    pub instance_count: usize,
    pub instance_ids: Vec<String>,
    /// Mixture component per instance, when drawn from a mixture.
    pub components: Vec<Option<usize>>,
    pub fv_var: f64,
    pub mean_predictive_entropy: f64,
    pub ensemble_accuracy: f64,
    pub ensemble_ece: f64,
    pub average_instance_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inter_mode_var: Option<f64>,
    /// Mode centers taken as the latent of the mode-mean instance's FV.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intra_mode_var: Option<f64>,
    /// Variant with per-mode member-mean centers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intra_mode_var_mean_centered: Option<f64>,
    /// Ensemble accuracy minus the average per-mode ensemble accuracy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy_delta: Option<f64>,
    /// Ensemble ECE minus the average per-mode ensemble ECE.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ece_delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centers: Option<CentersReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knn: Option<KnnSweep>,
    /// Pearson correlation of FVVar vs mean entropy over the prefix sweep.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knn_correlation: Option<f64>,
    pub cluster_k: usize,
    pub cluster_assignments: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub silhouette: Option<f64>,
    /// 2-D embedding coordinates per instance (empty when the group is too
    /// small to embed).
    pub embedding_2d: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub config_digest: String,
    pub groups: Vec<GroupReport>,
    /// Plot families the report stage is expected to render.
    pub expected_plots: Vec<String>,
}

pub const PLOT_FAMILIES: [&str; 6] = [
    "fvvar_by_method",
    "diversity_vs_entropy",
    "centers_hist",
    "latent_scatter",
    "inter_intra_vs_width",
    "ensemble_deltas_vs_width",
];

impl MetricsReport {
    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(REPORT_FILE);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(REPORT_FILE);
        let s = std::fs::read_to_string(&path)
            .map_err(|_| Error::MissingMetric(format!("{} not found", path.display())))?;
        Ok(serde_json::from_str(&s)?)
    }

    /// Families that have data to plot.
    fn available_plots(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.groups.is_empty() {
            out.push("fvvar_by_method");
        }
        if self.groups.iter().any(|g| g.knn.is_some()) {
            out.push("diversity_vs_entropy");
        }
        if self.groups.iter().any(|g| g.centers.is_some()) {
            out.push("centers_hist");
        }
        if self.groups.iter().any(|g| !g.embedding_2d.is_empty()) {
            out.push("latent_scatter");
        }
        if self.groups.iter().any(|g| g.inter_mode_var.is_some()) {
            out.push("inter_intra_vs_width");
        }
        if self.groups.iter().any(|g| g.accuracy_delta.is_some()) {
            out.push("ensemble_deltas_vs_width");
        }
        out
    }
}

/// What the report stage produced.
#[derive(Debug, Clone)]
pub struct RenderOutcome {
    pub plots: Vec<PathBuf>,
    pub csvs: Vec<PathBuf>,
    pub summary: PathBuf,
    /// Families skipped because the run has no such structure.
    pub notices: Vec<String>,
    /// Families expected but missing from the metrics (an error condition).
    pub gaps: Vec<String>,
}

fn group_tag(g: &GroupReport) -> String {
    format!("{}-b{}", g.method, g.width_factor)
}

/// Renders every plot family with data, exports the matching CSVs, and
/// writes a human-readable summary. Families listed as expected in the
/// report but without data are reported as a named-gap error after all other
/// plots have been emitted.
pub fn render_report(run_dir: &Path) -> Result<RenderOutcome> {
    let report = MetricsReport::load(run_dir)?;
    let plots_dir = run_dir.join("plots");
    let metrics_dir = run_dir.join("metrics");
    std::fs::create_dir_all(&plots_dir)?;
    std::fs::create_dir_all(&metrics_dir)?;

    let available = report.available_plots();
    let mut outcome = RenderOutcome {
        plots: Vec::new(),
        csvs: Vec::new(),
        summary: run_dir.join("summary.md"),
        notices: Vec::new(),
        gaps: Vec::new(),
    };

    for family in PLOT_FAMILIES {
        let has_data = available.contains(&family);
        let expected = report.expected_plots.iter().any(|e| e == family);
        if !has_data {
            if expected {
                outcome.gaps.push(family.to_string());
            } else {
                outcome
                    .notices
                    .push(format!("{family}: skipped (run has no data of this kind)"));
            }
            continue;
        }
        match family {
            "fvvar_by_method" => {
                let bars: Vec<(String, f64)> =
                    report.groups.iter().map(|g| (group_tag(g), g.fv_var)).collect();
                let p = plots_dir.join("fvvar_by_method.svg");
                plot::bars_svg(&p, "Feature visualization variance by method", "FVVar", &bars)?;
                outcome.plots.push(p);
                let rows: Vec<Vec<String>> = report
                    .groups
                    .iter()
                    .map(|g| {
                        vec![
                            g.method.clone(),
                            fmt_f64(g.width_factor),
                            fmt_f64(g.fv_var),
                            fmt_f64(g.mean_predictive_entropy),
                            fmt_f64(g.ensemble_accuracy),
                            fmt_f64(g.ensemble_ece),
                            fmt_f64(g.average_instance_accuracy),
                        ]
                    })
                    .collect();
                let c = metrics_dir.join("fvvar_by_method.csv");
                write_csv(
                    &c,
                    &["method", "width", "fv_var", "mean_entropy", "accuracy", "ece", "avg_instance_accuracy"],
                    &rows,
                )?;
                outcome.csvs.push(c);
            }
            "diversity_vs_entropy" => {
                let mut rows = Vec::new();
                for g in &report.groups {
                    if let Some(knn) = &g.knn {
                        let pts: Vec<(f64, f64)> = knn
                            .fv_vars
                            .iter()
                            .zip(&knn.mean_entropies)
                            .map(|(&a, &b)| (a, b))
                            .collect();
                        let ann = g
                            .knn_correlation
                            .map(|r| format!("{}: pearson r = {r:.4}", group_tag(g)));
                        let p = plots_dir.join(format!("diversity_vs_entropy-{}.svg", group_tag(g)));
                        plot::scatter_svg(
                            &p,
                            &format!("FVVar vs mean predictive entropy ({})", group_tag(g)),
                            "FVVar",
                            "mean predictive entropy",
                            &pts,
                            None,
                            ann.as_deref(),
                        )?;
                        outcome.plots.push(p);
                        for ((e, fv), ent) in
                            knn.prefix_sizes.iter().zip(&knn.fv_vars).zip(&knn.mean_entropies)
                        {
                            rows.push(vec![
                                group_tag(g),
                                e.to_string(),
                                fmt_f64(*fv),
                                fmt_f64(*ent),
                            ]);
                        }
                    }
                }
                let c = metrics_dir.join("knn_sweep.csv");
                write_csv(&c, &["group", "prefix_size", "fv_var", "mean_entropy"], &rows)?;
                outcome.csvs.push(c);
            }
            "centers_hist" => {
                let mut rows = Vec::new();
                for g in &report.groups {
                    if let Some(cr) = &g.centers {
                        let p = plots_dir.join(format!("centers_hist-{}.svg", group_tag(g)));
                        plot::histogram_svg(
                            &p,
                            &format!(
                                "FV distance to own vs other instance centers ({}) overlap {:.4}",
                                group_tag(g),
                                cr.overlap_fraction
                            ),
                            "euclidean distance in latent space",
                            "to own center",
                            &cr.within,
                            "to other center",
                            &cr.between,
                            50,
                        )?;
                        outcome.plots.push(p);
                        for v in &cr.within {
                            rows.push(vec![group_tag(g), "within".into(), fmt_f64(*v)]);
                        }
                        for v in &cr.between {
                            rows.push(vec![group_tag(g), "between".into(), fmt_f64(*v)]);
                        }
                    }
                }
                let c = metrics_dir.join("centers_hist.csv");
                write_csv(&c, &["group", "kind", "distance"], &rows)?;
                outcome.csvs.push(c);
            }
            "latent_scatter" => {
                let mut rows = Vec::new();
                for g in &report.groups {
                    if g.embedding_2d.is_empty() {
                        continue;
                    }
                    let classes: Vec<usize> = if g.components.iter().any(|c| c.is_some()) {
                        g.components.iter().map(|c| c.unwrap_or(0)).collect()
                    } else {
                        g.cluster_assignments.clone()
                    };
                    let p = plots_dir.join(format!("latent_scatter-{}.svg", group_tag(g)));
                    plot::scatter_svg(
                        &p,
                        &format!("latent concept space, 2-D embedding ({})", group_tag(g)),
                        "dim 1",
                        "dim 2",
                        &g.embedding_2d,
                        Some(&classes),
                        None,
                    )?;
                    outcome.plots.push(p);
                    for (i, (x, y)) in g.embedding_2d.iter().enumerate() {
                        rows.push(vec![
                            group_tag(g),
                            g.instance_ids.get(i).cloned().unwrap_or_default(),
                            fmt_f64(*x),
                            fmt_f64(*y),
                            g.cluster_assignments.get(i).map(|c| c.to_string()).unwrap_or_default(),
                            g.components
                                .get(i)
                                .and_then(|c| c.map(|k| k.to_string()))
                                .unwrap_or_default(),
                        ]);
                    }
                }
                let c = metrics_dir.join("embedding.csv");
                write_csv(&c, &["group", "instance", "x", "y", "cluster", "component"], &rows)?;
                outcome.csvs.push(c);
            }
            "inter_intra_vs_width" => {
                let mut with_modes: Vec<&GroupReport> =
                    report.groups.iter().filter(|g| g.inter_mode_var.is_some()).collect();
                with_modes.sort_by(|a, b| {
                    a.width_factor.partial_cmp(&b.width_factor).unwrap_or(std::cmp::Ordering::Equal)
                });
                let inter: Vec<(f64, f64)> = with_modes
                    .iter()
                    .map(|g| (g.width_factor, g.inter_mode_var.unwrap_or(0.0)))
                    .collect();
                let intra: Vec<(f64, f64)> = with_modes
                    .iter()
                    .map(|g| (g.width_factor, g.intra_mode_var.unwrap_or(0.0)))
                    .collect();
                let p = plots_dir.join("inter_intra_vs_width.svg");
                plot::lines_svg(
                    &p,
                    "Inter- and intra-mode variance vs width factor",
                    "width factor",
                    "variance",
                    &[
                        plot::Series { name: "inter-mode", points: inter },
                        plot::Series { name: "intra-mode", points: intra },
                    ],
                )?;
                outcome.plots.push(p);
                let rows: Vec<Vec<String>> = with_modes
                    .iter()
                    .map(|g| {
                        vec![
                            g.method.clone(),
                            fmt_f64(g.width_factor),
                            fmt_f64(g.inter_mode_var.unwrap_or(f64::NAN)),
                            fmt_f64(g.intra_mode_var.unwrap_or(f64::NAN)),
                            fmt_f64(g.intra_mode_var_mean_centered.unwrap_or(f64::NAN)),
                        ]
                    })
                    .collect();
                let c = metrics_dir.join("width_trends.csv");
                write_csv(
                    &c,
                    &["method", "width", "inter_mode_var", "intra_mode_var", "intra_mode_var_mean_centered"],
                    &rows,
                )?;
                outcome.csvs.push(c);
            }
            "ensemble_deltas_vs_width" => {
                let mut with_deltas: Vec<&GroupReport> =
                    report.groups.iter().filter(|g| g.accuracy_delta.is_some()).collect();
                with_deltas.sort_by(|a, b| {
                    a.width_factor.partial_cmp(&b.width_factor).unwrap_or(std::cmp::Ordering::Equal)
                });
                let acc: Vec<(f64, f64)> = with_deltas
                    .iter()
                    .map(|g| (g.width_factor, g.accuracy_delta.unwrap_or(0.0)))
                    .collect();
                let ece: Vec<(f64, f64)> = with_deltas
                    .iter()
                    .map(|g| (g.width_factor, g.ece_delta.unwrap_or(0.0)))
                    .collect();
                let p = plots_dir.join("ensemble_deltas_vs_width.svg");
                plot::lines_svg(
                    &p,
                    "Ensembling deltas vs width factor",
                    "width factor",
                    "ensemble minus average single-mode",
                    &[
                        plot::Series { name: "accuracy delta", points: acc },
                        plot::Series { name: "ece delta", points: ece },
                    ],
                )?;
                outcome.plots.push(p);
                let rows: Vec<Vec<String>> = with_deltas
                    .iter()
                    .map(|g| {
                        vec![
                            g.method.clone(),
                            fmt_f64(g.width_factor),
                            fmt_f64(g.accuracy_delta.unwrap_or(f64::NAN)),
                            fmt_f64(g.ece_delta.unwrap_or(f64::NAN)),
                        ]
                    })
                    .collect();
                let c = metrics_dir.join("ensemble_deltas.csv");
                write_csv(&c, &["method", "width", "accuracy_delta", "ece_delta"], &rows)?;
                outcome.csvs.push(c);
            }
            _ => unreachable!("unknown plot family"),
        }
    }

    write_summary(run_dir, &report, &outcome)?;
    if !outcome.gaps.is_empty() {
        return Err(Error::MissingMetric(outcome.gaps.join(", ")));
    }
    Ok(outcome)
}

fn write_summary(run_dir: &Path, report: &MetricsReport, outcome: &RenderOutcome) -> Result<()> {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "# Run summary\n");
    let _ = writeln!(s, "config digest: `{}`\n", report.config_digest);
    let _ = writeln!(
        s,
        "| group | width | instances | FVVar | mean entropy | accuracy | ECE |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|");
    for g in &report.groups {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {:.6} | {:.6} | {:.4} | {:.4} |",
            g.method,
            g.width_factor,
            g.instance_count,
            g.fv_var,
            g.mean_predictive_entropy,
            g.ensemble_accuracy,
            g.ensemble_ece
        );
    }
    let _ = writeln!(s);
    for g in &report.groups {
        if let (Some(inter), Some(intra)) = (g.inter_mode_var, g.intra_mode_var) {
            let _ = writeln!(
                s,
                "- {} width {}: inter-mode {:.6}, intra-mode {:.6} (mean-centered {:.6}), accuracy delta {:+.4}, ece delta {:+.4}",
                g.method,
                g.width_factor,
                inter,
                intra,
                g.intra_mode_var_mean_centered.unwrap_or(f64::NAN),
                g.accuracy_delta.unwrap_or(f64::NAN),
                g.ece_delta.unwrap_or(f64::NAN),
            );
        }
        if let Some(c) = &g.centers {
            let _ = writeln!(
                s,
                "- {} width {}: within/between overlap {:.4}, mean within {:.4}, mean between {:.4}",
                g.method, g.width_factor, c.overlap_fraction, c.mean_within, c.mean_between
            );
        }
        if let Some(r) = g.knn_correlation {
            let _ = writeln!(
                s,
                "- {} width {}: FVVar-entropy correlation over prefix sweep r = {:.4}",
                g.method, g.width_factor, r
            );
        }
    }
    if !outcome.notices.is_empty() {
        let _ = writeln!(s, "\n## Notices\n");
        for n in &outcome.notices {
            let _ = writeln!(s, "- {n}");
        }
    }
    if !outcome.gaps.is_empty() {
        let _ = writeln!(s, "\n## Missing metrics\n");
        for g in &outcome.gaps {
            let _ = writeln!(s, "- {g}");
        }
    }
    std::fs::write(run_dir.join("summary.md"), s)?;
    Ok(())
}
