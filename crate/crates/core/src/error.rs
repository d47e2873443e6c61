use std::path::PathBuf;

use thiserror::Error;

use crate::lasso::LassoSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("input contains a non-finite value at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },

    #[error("design matrix is identically zero")]
    AllZeroMatrix,

    #[error("support Gram matrix is numerically singular (condition number {condition:.3e})")]
    SingularGram { condition: f64 },

    #[error("support set is empty")]
    EmptySupport,

    #[error("invalid support: {0}")]
    InvalidSupport(String),

    #[error("coordinate descent did not converge within {iterations} sweeps (kkt residual {kkt_residual:.3e})")]
    MaxIterationsExceeded {
        iterations: usize,
        kkt_residual: f64,
        solution: Box<LassoSolution>,
    },

    #[error("no model on the path satisfies the selection rule: {0}")]
    NoSuchModel(String),

    #[error("column {column} has zero variance")]
    ZeroVarianceColumn { column: usize },

    #[error("invalid design specification: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at row {row}, column {col}: {message}")]
    Parse {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("column not found: {0}")]
    MissingColumn(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("{failed} of {total} replicates failed (more than 10%)")]
    ExperimentFailed { failed: usize, total: usize },

    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the numbers rather than by the input files.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::AllZeroMatrix
                | Error::SingularGram { .. }
                | Error::MaxIterationsExceeded { .. }
                | Error::NoSuchModel(_)
                | Error::ZeroVarianceColumn { .. }
                | Error::ExperimentFailed { .. }
        )
    }
}
