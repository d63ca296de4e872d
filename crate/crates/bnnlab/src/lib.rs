//! A desk-scale laboratory for quantifying and visualizing the diversity of
//! decision-making strategies across Bayesian neural-network posterior
//! samples.
//!
//! The lab trains small convolutional classifiers, draws weight instances
//! from four approximate posteriors (KFAC Laplace, Monte-Carlo dropout, SWAG
//! and MultiSWAG), renders one feature visualization per instance by
//! activation maximization, embeds the visualizations into a contrastively
//! learned concept space, and computes diversity and uncertainty metrics over
//! the resulting latent vectors.
//!
//! Start with the runnable examples (`cargo run --release --example ...`) or
//! the `lab` binary, which drives full experiments from TOML configs.

pub mod concept;
pub mod data;
pub mod error;
pub mod fv;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod posterior;
pub mod rng;

pub use error::{Error, Result};
