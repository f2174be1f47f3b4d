use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid thermal network: {0}")]
    InvalidNetwork(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("weather data: {0}")]
    Data(String),

    #[error(
        "calibration set too small: {got} samples, at least {required} needed for eps={eps}, beta={beta}"
    )]
    InsufficientCalibration {
        required: usize,
        got: usize,
        eps: f64,
        beta: f64,
    },

    #[error("SVC dual did not converge after {iterations} iterations (KKT residual {residual:.3e})")]
    QpNonConvergence { iterations: usize, residual: f64 },

    #[error("uncertainty set is unbounded")]
    UnboundedSet,

    #[error("uncertainty set is empty")]
    EmptySet,

    #[error("robust row is infeasible: worst case over the set is unbounded")]
    RobustInfeasibleRow,

    #[error("LP solve failed: {0}")]
    Solver(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
