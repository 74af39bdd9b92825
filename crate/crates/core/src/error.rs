use thiserror::Error;

/// Errors raised across the estimation engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("model is not identifiable: {0}")]
    Identifiability(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("observation {value} is outside the support of experiment {experiment}")]
    Support { experiment: usize, value: f64 },

    #[error("matrix is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("initial experiments give a singular information matrix (min eigenvalue {min_eigenvalue:e})")]
    SingularInitialization { min_eigenvalue: f64 },

    #[error("policy `{policy}` cannot be used with a {model} model")]
    PolicyModelMismatch { policy: String, model: String },

    #[error("solver did not converge after {iterations} iterations (projected gradient norm {norm:e})")]
    NonConvergence { iterations: usize, norm: f64 },

    #[error("functional gradient vanishes at the estimate")]
    DegenerateGradient,

    #[error("no {k}-regular graph exists on {vertices} vertices")]
    InfeasibleDegree { k: usize, vertices: usize },

    #[error("no unused records remain for any candidate experiment")]
    Exhausted,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("range error at line {line}: {message}")]
    Range { line: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
