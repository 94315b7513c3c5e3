use thiserror::Error;

/// Errors raised anywhere in the simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Layout would produce a zero or non-finite distance, or is otherwise unusable.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// A physical or solver parameter is out of its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Matrix dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Structural(String),

    /// Factorization failure, non-finite value, or a violated numerical precondition.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The multiplier bracket could not be grown far enough to satisfy the budget.
    #[error("bracket error: power {power:.6e} still above budget {budget:.6e} at multiplier {upper:.6e}")]
    Bracket { upper: f64, power: f64, budget: f64 },

    /// The alternating loop lost more objective than the guard allows.
    #[error("divergence at iteration {iteration}: objective fell from {previous:.12e} to {current:.12e}")]
    Divergence {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    /// Campaign configuration could not be parsed or validated.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors that come from numerics rather than from user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::Bracket { .. } | Error::Divergence { .. }
        )
    }

    /// True for errors caused by the supplied configuration.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. } | Error::Geometry(_) | Error::Parameter(_) | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
