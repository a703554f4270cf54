use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error(
        "lasso did not converge after {iterations} sweeps (last max change {last_change:.3e})"
    )]
    Convergence {
        iterations: usize,
        last_change: f64,
        /// Last coordinate-descent iterate.
        beta: Vec<f64>,
    },

    #[error("gram matrix of the active set is singular or ill-conditioned (condition ~ {condition:.3e})")]
    Rank { condition: f64 },

    #[error("trimmed candidate range is unbounded")]
    UnboundedTrimSet,

    #[error("trimmed candidate range is empty")]
    EmptyTrimSet,

    #[error("fit failed at candidate y = {y}: {source}")]
    AtCandidate {
        y: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {total} trials failed for {method}")]
    ExcessiveFailures {
        method: String,
        failed: usize,
        total: usize,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at(y: f64, err: Error) -> Self {
        Error::AtCandidate {
            y,
            source: Box::new(err),
        }
    }
}
