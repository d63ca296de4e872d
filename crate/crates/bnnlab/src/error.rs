//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by any lab operation.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration is structurally invalid (bad channel counts, shapes, ranges).
    #[error("configuration error: {0}")]
    Config(String),

    /// An input to an operation violates its contract (shape mismatch, empty list, bad rect).
    #[error("input error: {0}")]
    Input(String),

    /// Training diverged or could not proceed.
    #[error("training error at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    /// A posterior fit could not be completed.
    #[error("fit error: {0}")]
    Fit(String),

    /// A numerical routine failed (singular factor, zero-norm vector, non-PSD matrix).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Activation maximization hit a non-finite objective.
    #[error("activation maximization error at step {step}: {message}")]
    Am { step: usize, message: String },

    /// A contrastive batch has no negatives.
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    /// Correlation is undefined (zero variance in one of the series).
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// Silhouette score is undefined (degenerate latents).
    #[error("undefined silhouette: {0}")]
    UndefinedSilhouette(String),

    /// A multi-component fit failed in one of its components.
    #[error("component {component} failed: {source}")]
    Component {
        component: usize,
        #[source]
        source: Box<Error>,
    },

    /// A pipeline stage failed.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    /// A report input that should have been produced is missing.
    #[error("missing metric(s): {0}")]
    MissingMetric(String),

    /// Malformed artifact or dataset file.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
