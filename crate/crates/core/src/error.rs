use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("non-finite value at index {index} in {context}")]
    NonFinite { index: usize, context: String },

    #[error("{solver} did not converge in {iterations} iterations (relative residual {residual:.3e}); {advice}")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
        advice: &'static str,
    },

    #[error("checksum mismatch for {path}")]
    Checksum { path: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("{stage} stage failed: {source}")]
    Stage { stage: &'static str, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for failures that come from the numerics rather than from input validation.
    pub fn is_convergence(&self) -> bool {
        match self {
            Error::NoConvergence { .. } => true,
            Error::Stage { source, .. } => source.is_convergence(),
            _ => false,
        }
    }

    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
