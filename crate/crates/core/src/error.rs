use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("row {row}, column '{column}': {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("non-identifiable subsample: {0}")]
    NonIdentifiable(String),

    #[error("Newton iteration did not converge in {iterations} iterations (gradient sup-norm {gradient_norm:e})")]
    NewtonNotConverged {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error(
        "coordinate descent did not converge in {sweeps} sweeps (KKT residual {kkt_residual:e})"
    )]
    SolverNotConverged { sweeps: usize, kkt_residual: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("subsample {id}: {source}")]
    Subsample {
        id: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("replication {rep}: {source}")]
    Replication {
        rep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("summary file: {0}")]
    SummaryFormat(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 configuration, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::DimensionMismatch { .. }
            | Error::NonFinite(_)
            | Error::Data(_)
            | Error::Cell { .. }
            | Error::SummaryFormat(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Io(_) => 3,
            Error::NonIdentifiable(_)
            | Error::NewtonNotConverged { .. }
            | Error::SolverNotConverged { .. }
            | Error::Singular(_) => 4,
            Error::Subsample { source, .. } | Error::Replication { source, .. } => {
                source.exit_code()
            }
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
