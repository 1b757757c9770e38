use std::io;

use thiserror::Error;

use crate::linalg::SolveReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("point ({x}, {y}) lies outside the mesh")]
    OutOfDomain { x: f64, y: f64 },

    #[error(
        "conjugate gradient did not converge: {} iterations, relative residual {:.3e}",
        .0.iterations,
        .0.relative_residual
    )]
    IterativeFailure(SolveReport),

    #[error("zero diagonal entry in row {row}; Jacobi preconditioner is singular")]
    SingularPreconditioner { row: usize },

    #[error("degenerate state: non-degeneracy margin {margin:.4} at or below {threshold}")]
    DegenerateState { margin: f64, threshold: f64 },

    #[error("fixed-point iteration did not converge in {iterations} iterations (last change {change:.3e})")]
    FixedPointDivergence { iterations: usize, change: f64 },

    #[error("power-law fit failed: {reason} (residual {residual:.6e})")]
    FitFailure { reason: String, residual: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("level {level}: {source}")]
    AtLevel {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn at_step(self, step: usize) -> Self {
        Error::AtStep { step, source: Box::new(self) }
    }

    pub fn at_level(self, level: usize) -> Self {
        Error::AtLevel { level, source: Box::new(self) }
    }

    /// The innermost error, with step and level context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } | Error::AtLevel { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self.root(), Error::DegenerateState { .. })
    }
}
