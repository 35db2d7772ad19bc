use thiserror::Error;

/// Errors raised by the solver and certification routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("classification error: y[{index}] = {value} lies outside [0, 1]")]
    Classification { index: usize, value: f64 },

    #[error("infeasible input: {0}")]
    InfeasibleInput(String),

    #[error("point is not stationary: {0}")]
    NotStationary(String),

    #[error("subproblem failure: {0}")]
    SubproblemFailure(String),

    #[error("enumeration limit exceeded: {count} > cap {cap}")]
    EnumerationLimit { count: u128, cap: u128 },

    #[error("branch explosion: {count} branches exceed cap {cap}")]
    BranchExplosion { count: u128, cap: u128 },

    #[error("regularization path stalled at t = {t:e} with complementarity violation {comp_violation:e}")]
    PathStalled { t: f64, comp_violation: f64 },

    #[error("unknown problem '{0}'")]
    UnknownProblem(String),

    #[error("parse error in field '{field}': {message}")]
    Parse { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
