//! Thin SVD and the Puffer preconditioner `F = U D⁻¹ Uᵀ`.
//!
//! Left-multiplying a regression by `F` keeps the singular vectors of the
//! design and sets every retained singular value to one, so `F X = U Vᵀ`.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::{check_finite, RegressionProblem};

/// Singular values below this fraction of the largest one are dropped.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-10;

/// Largest `n` for which [`PufferDecomposition::dense_preconditioner`] will
/// build the `n × n` matrix.
pub const MAX_DENSE_PRECONDITIONER: usize = 1000;

/// Thin SVD factors `X = U diag(D) Vᵀ` truncated to the numerical rank.
#[derive(Debug, Clone)]
pub struct PufferDecomposition {
    u: DMatrix<f64>,
    singular_values: DVector<f64>,
    v: DMatrix<f64>,
    rank_tolerance: f64,
    tikhonov_delta: f64,
}

impl PufferDecomposition {
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// Singular values, descending and strictly positive.
    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Numerical rank `d`.
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn rank_tolerance(&self) -> f64 {
        self.rank_tolerance
    }

    pub fn tikhonov_delta(&self) -> f64 {
        self.tikhonov_delta
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn p(&self) -> usize {
        self.v.nrows()
    }

    /// Same factors with a different ridge term on the inverted singular values.
    pub fn with_tikhonov(mut self, delta: f64) -> Result<Self> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "tikhonov delta must be >= 0, got {delta}"
            )));
        }
        self.tikhonov_delta = delta;
        Ok(self)
    }

    /// Diagonal of the preconditioner in the U basis: `D / (D² + δ)`.
    pub fn inverse_weights(&self) -> DVector<f64> {
        let delta = self.tikhonov_delta;
        self.singular_values.map(|d| d / (d * d + delta))
    }

    /// `F v = U diag(1/D) Uᵀ v` without forming `F`.
    pub fn apply_preconditioner(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "vector has length {} but the preconditioner acts on length {}",
                v.len(),
                self.n()
            )));
        }
        let mut coords = self.u.tr_mul(v);
        coords.component_mul_assign(&self.inverse_weights());
        Ok(&self.u * coords)
    }

    /// `F` as an explicit matrix. Refused for `n > 1000`.
    pub fn dense_preconditioner(&self) -> Result<DMatrix<f64>> {
        if self.n() > MAX_DENSE_PRECONDITIONER {
            return Err(Error::InvalidArgument(format!(
                "refusing to materialise a {0}x{0} preconditioner",
                self.n()
            )));
        }
        let scaled = &self.u * DMatrix::from_diagonal(&self.inverse_weights());
        Ok(scaled * self.u.transpose())
    }

    /// Noise covariance after preconditioning divided by `σ²`: `U D⁻² Uᵀ`
    /// (with the ridge, `U diag(D/(D²+δ))² Uᵀ`). Its largest eigenvalue is
    /// the square of the largest inverse weight.
    pub fn noise_scale_max(&self) -> f64 {
        let w = self.inverse_weights();
        w.iter().fold(0.0_f64, |m, x| m.max(x * x))
    }
}

/// Thin SVD of `x`, dropping singular values below `rank_tolerance · D_max`.
pub fn thin_svd(x: &DMatrix<f64>, rank_tolerance: f64) -> Result<PufferDecomposition> {
    if !(rank_tolerance > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "rank tolerance must be positive, got {rank_tolerance}"
        )));
    }
    check_finite(x)?;
    if x.iter().all(|v| *v == 0.0) {
        return Err(Error::AllZeroMatrix);
    }
    let (n, p) = x.shape();
    // Wide matrices are decomposed through the transpose, which keeps the
    // bidiagonalisation on the tall side.
    let (u_full, s, v_full) = if n >= p {
        let svd = SVD::try_new(x.clone(), true, true, f64::EPSILON, 0)
            .ok_or(Error::InvalidArgument("svd failed to converge".into()))?;
        (svd.u.unwrap(), svd.singular_values, svd.v_t.unwrap().transpose())
    } else {
        let svd = SVD::try_new(x.transpose(), true, true, f64::EPSILON, 0)
            .ok_or(Error::InvalidArgument("svd failed to converge".into()))?;
        (svd.v_t.unwrap().transpose(), svd.singular_values, svd.u.unwrap())
    };
    let d_max = s[0];
    if d_max == 0.0 {
        return Err(Error::AllZeroMatrix);
    }
    let rank = s.iter().take_while(|&&d| d >= rank_tolerance * d_max).count();
    Ok(PufferDecomposition {
        u: u_full.columns(0, rank).into_owned(),
        singular_values: s.rows(0, rank).into_owned(),
        v: v_full.columns(0, rank).into_owned(),
        rank_tolerance,
        tikhonov_delta: 0.0,
    })
}

/// A regression after left-multiplication by the preconditioner:
/// `Ỹ = X̃ β* + ε̃` with `X̃ = F X`, `Ỹ = F Y`.
#[derive(Debug, Clone)]
pub struct TransformedProblem {
    x_tilde: DMatrix<f64>,
    y_tilde: DVector<f64>,
    source: RegressionProblem,
    decomposition: PufferDecomposition,
}

impl TransformedProblem {
    pub fn x_tilde(&self) -> &DMatrix<f64> {
        &self.x_tilde
    }

    pub fn y_tilde(&self) -> &DVector<f64> {
        &self.y_tilde
    }

    pub fn source(&self) -> &RegressionProblem {
        &self.source
    }

    pub fn decomposition(&self) -> &PufferDecomposition {
        &self.decomposition
    }

    /// The transformed data as a plain problem, carrying over the truth.
    pub fn to_problem(&self) -> Result<RegressionProblem> {
        let prob = RegressionProblem::new(self.x_tilde.clone(), self.y_tilde.clone())?;
        match (self.source.beta_star(), self.source.sigma2()) {
            (Some(b), Some(s2)) => prob.with_truth(b.clone(), s2),
            _ => Ok(prob),
        }
    }

    /// Largest entrywise deviation of `X̃ᵀX̃` (n ≥ p) or `X̃X̃ᵀ` (n < p) from
    /// the identity.
    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.x_tilde)
    }
}

/// `‖XᵀX − I‖_max` for tall or square input, `‖XXᵀ − I‖_max` for wide input.
pub fn orthonormality_error(x: &DMatrix<f64>) -> f64 {
    let (n, p) = x.shape();
    let gram = if n >= p { x.tr_mul(x) } else { x * x.transpose() };
    let k = gram.nrows();
    linalg::max_abs_diff(&gram, &DMatrix::identity(k, k))
}

/// Applies the Puffer transformation to a regression problem.
///
/// With `tikhonov_delta = 0`, `X̃ = U Vᵀ` and `Ỹ = U diag(1/D) Uᵀ Y`. A positive
/// `δ` replaces `1/D` by `D/(D² + δ)`.
pub fn puffer_transform(
    problem: &RegressionProblem,
    rank_tolerance: f64,
    tikhonov_delta: f64,
) -> Result<TransformedProblem> {
    let decomposition = thin_svd(problem.x(), rank_tolerance)?.with_tikhonov(tikhonov_delta)?;
    let x_tilde = if tikhonov_delta == 0.0 {
        decomposition.u() * decomposition.v().transpose()
    } else {
        let shrink = decomposition
            .singular_values()
            .map(|d| d * d / (d * d + tikhonov_delta));
        (decomposition.u() * DMatrix::from_diagonal(&shrink)) * decomposition.v().transpose()
    };
    let y_tilde = decomposition.apply_preconditioner(problem.y())?;
    Ok(TransformedProblem {
        x_tilde,
        y_tilde,
        source: problem.clone(),
        decomposition,
    })
}

/// `F X` for a bare design matrix, `δ = 0`.
pub fn precondition_design(x: &DMatrix<f64>, rank_tolerance: f64) -> Result<DMatrix<f64>> {
    let dec = thin_svd(x, rank_tolerance)?;
    Ok(dec.u() * dec.v().transpose())
}
