use std::path::PathBuf;

use chrono::NaiveDate;

/// Errors produced by the postprocessing library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("inconsistent ensemble size at line {line}: expected {expected} members, found {found}")]
    InconsistentEnsembleSize {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("insufficient training data for {valid_date}: {found} cases, at least {required} required")]
    InsufficientTrainingData {
        valid_date: NaiveDate,
        found: usize,
        required: usize,
    },
    #[error("unknown station `{0}`")]
    UnknownStation(String),
    #[error("all sites are collinear")]
    CollinearSites,
    #[error("mesh refinement exceeded the node budget of {budget}; loosen min_angle or max_edge")]
    NodeBudgetExceeded { budget: usize },
    #[error("points outside the mesh hull at indices {0:?}")]
    OutsideMesh(Vec<usize>),
    #[error("degenerate triangle {0} with zero area")]
    DegenerateTriangle(usize),
    #[error("precision not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("optimizer did not converge after {iterations} iterations (best objective {best_value})")]
    NoConvergence {
        iterations: usize,
        best: [f64; 3],
        best_value: f64,
    },
    #[error("MCMC acceptance rate {rate:.3} stayed below 5% after adaptation; review prior scales and proposal settings")]
    LowAcceptance { rate: f64 },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
