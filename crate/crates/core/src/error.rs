use crate::graph::GraphError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix not factorizable after {escalations} jitter escalations (last jitter {jitter:e})")]
    NotFactorizable { escalations: u32, jitter: f64 },

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("dataset does not retain latent draws")]
    MissingLatents,

    #[error("kernel mismatch: {0}")]
    KernelMismatch(String),

    #[error("too few nonzero differences for the signed-rank test: {0} (need at least 5)")]
    TooFewDifferences(usize),

    #[error("correlation undefined: zero-variance {0}")]
    ZeroVariance(&'static str),

    #[error("every grid candidate failed to fit")]
    GridExhausted,

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the linear algebra (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NotFactorizable { .. } | Error::NotSymmetric(_))
    }
}
