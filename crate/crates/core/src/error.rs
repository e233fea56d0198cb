use crate::glm::FitDiagnostics;
use crate::panel::Violation;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("panel failed validation ({} violation(s)); first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    Validation(Vec<Violation>),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("fit did not converge after {} iterations (max gradient {:.3e})", .0.iterations, .0.max_gradient)]
    NonConvergence(FitDiagnostics),

    #[error("rank deficient design: {0}")]
    Rank(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{arm} arm is empty at m = {m}; the contrast is not estimable")]
    Estimability { arm: &'static str, m: usize },

    #[error("degenerate pair test at m = {m}: zero variance with nonzero difference {difference:.3e}")]
    DegenerateTest { m: usize, difference: f64 },

    #[error("positivity violation: {0}")]
    Positivity(String),

    #[error("state space too large: {0}")]
    StateSpace(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("selection failed at m = {m}: {source}")]
    Selection {
        m: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
