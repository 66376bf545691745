use thiserror::Error;

/// Errors raised by the fair-regression pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Input violates an operation's domain (empty measure, t outside (0,1), ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value is invalid or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// The constraint set of the sieve is empty for the requested inputs.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Malformed or missing user input (CSV columns, group counts).
    #[error("input error: {0}")]
    Input(String),

    /// Data does not match a fitted model (unknown group label, feature width).
    #[error("schema error: {0}")]
    Schema(String),

    /// A truth sidecar could not be parsed or is inconsistent.
    #[error("sidecar error: {0}")]
    Sidecar(String),

    /// Too many sweep cells failed.
    #[error("sweep failure budget exceeded: {failed} of {total} cells failed")]
    SweepBudget { failed: usize, total: usize },

    /// Violated internal invariant.
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Csv(_) => 2,
            Error::Domain(_) => 3,
            Error::Infeasible(_) => 4,
            Error::Schema(_) => 5,
            Error::Sidecar(_) => 6,
            Error::SweepBudget { .. } => 7,
            Error::Config(_) | Error::Json(_) => 2,
            Error::Io(_) | Error::Internal(_) => 1,
        }
    }
}
