use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GhsError>;

#[derive(Debug, Error)]
pub enum GhsError {
    /// Input outside the mathematical domain of an operation (non-PD matrix,
    /// nonpositive scale, degenerate weights).
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller broke a documented precondition (shape mismatch, bad range).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("column {index} ({name}) has zero variance")]
    DegenerateColumn { index: usize, name: String },

    #[error("network {index}: {source}")]
    Network {
        index: usize,
        #[source]
        source: Box<GhsError>,
    },

    #[error("fit at tau_sq = {tau_sq:e} failed: {source}")]
    GridPoint {
        tau_sq: f64,
        #[source]
        source: Box<GhsError>,
    },

    #[error("{failed} of {total} bootstrap fits failed")]
    BootstrapFailures { failed: usize, total: usize },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GhsError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        GhsError::Domain(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        GhsError::Contract(msg.into())
    }

    pub(crate) fn in_network(self, index: usize) -> Self {
        GhsError::Network {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GhsError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            GhsError::Domain(_) => "domain",
            GhsError::Contract(_) => "contract",
            GhsError::DegenerateColumn { .. } => "degenerate_column",
            GhsError::Network { .. } => "network",
            GhsError::GridPoint { .. } => "grid_point",
            GhsError::BootstrapFailures { .. } => "bootstrap_failures",
            GhsError::Parse(_) => "parse",
            GhsError::Io { .. } => "io",
            GhsError::Csv(_) => "csv",
            GhsError::Json(_) => "json",
        }
    }
}
