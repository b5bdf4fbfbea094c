use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quantile level must lie strictly inside (0, 1), got {0}")]
    InvalidQuantileLevel(f64),

    #[error("gamma must lie in [0, 0.5), got {0}")]
    InvalidGamma(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("insufficient data: {m} observations for {p} parameters (need at least p + 1)")]
    InsufficientData { m: usize, p: usize },

    #[error("objective is not finite at beta = {beta:?}")]
    NonFiniteObjective { beta: Vec<f64> },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix has no positive eigenvalue")]
    AllZeroMatrix,

    #[error("critical value must be positive, got {0}")]
    InvalidCriticalValue(f64),

    #[error("no observations have been monitored yet")]
    NoObservations,

    #[error("monitoring horizon of {0} observations is exhausted")]
    HorizonExhausted(usize),

    #[error("no critical value for p={p}, gamma={gamma}, alpha={alpha}, procedure={procedure}")]
    MissingCriticalValue {
        p: usize,
        gamma: f64,
        alpha: f64,
        procedure: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        match e.classify() {
            serde_json::error::Category::Io => Error::Io(e.into()),
            _ => Error::Format(e.to_string()),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                other => Error::Format(format!("{other:?}")),
            }
        } else {
            Error::Format(e.to_string())
        }
    }
}
