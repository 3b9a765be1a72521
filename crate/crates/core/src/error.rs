use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no binding for {kind} leaf #{slot}")]
    MissingBinding { kind: &'static str, slot: u32 },

    #[error("expected a single scalar root, got {0} outputs")]
    Rank(usize),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("solver diverged at step {step}: |u| = {magnitude:e}")]
    Divergence { step: usize, magnitude: f64 },

    #[error("non-finite loss at step {step}: {snapshot}")]
    NonFiniteLoss { step: usize, snapshot: String },

    #[error("relative L2 undefined for a zero reference")]
    UndefinedMetric,

    #[error("validation error: {0}")]
    Validation(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::NonFiniteLoss { .. } | Error::Numerical(_)
        )
    }
}
