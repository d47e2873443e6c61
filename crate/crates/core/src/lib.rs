//! Sparse regression with the Puffer preconditioner.
//!
//! The crate solves the Lasso by coordinate descent, optionally after
//! left-multiplying the regression by `F = U D⁻¹ Uᵀ` from the thin SVD of the
//! design, and measures how the preconditioner changes the irrepresentable
//! condition and sign recovery. The [`experiments`] module runs the
//! corresponding Monte-Carlo studies.

pub mod cli;
pub mod designs;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod io;
pub mod lasso;
pub mod linalg;
pub mod precondition;
pub mod problem;
pub mod selection;

pub use error::{Error, Result};
pub use lasso::{lasso_path, solve_lasso, LassoOptions, LassoPath, LassoSolution, PathOptions};
pub use precondition::{puffer_transform, thin_svd, PufferDecomposition, TransformedProblem};
pub use problem::{RegressionProblem, SupportSet};
