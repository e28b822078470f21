use std::path::PathBuf;

use nalgebra::DVector;
use thiserror::Error;

/// Errors raised by the feedback-optimization toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("row {row} of the constraint matrix has zero norm")]
    ZeroRow { row: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("quadratic term is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("QP is infeasible: no point satisfies the inequality constraints")]
    Infeasible,

    #[error("QP solver exceeded {0} iterations")]
    MaxIterations(usize),

    #[error("enumeration oracle limited to {limit} constraints, got {found}")]
    TooManyConstraints { limit: usize, found: usize },

    #[error("linearized feasible set is empty at u = {u:?}")]
    LinearizedSetEmpty { u: Vec<f64> },

    #[error("point is not feasible (max violation {violation:e})")]
    NotFeasible { violation: f64 },

    #[error("set is empty or unbounded; cannot {0}")]
    Unbounded(&'static str),

    #[error("unknown problem {0:?}")]
    UnknownProblem(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty parameter grid")]
    EmptyGrid,

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

pub(crate) fn check_finite(context: &'static str, v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}
