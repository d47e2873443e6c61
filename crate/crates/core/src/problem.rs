use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed data of a linear model `Y = X β* + ε`, optionally with the
/// simulation ground truth attached.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    x: DMatrix<f64>,
    y: DVector<f64>,
    beta_star: Option<DVector<f64>>,
    sigma2: Option<f64>,
}

impl RegressionProblem {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "X has {} rows but Y has length {}",
                x.nrows(),
                y.len()
            )));
        }
        check_finite(&x)?;
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { row: i, col: 0 });
        }
        Ok(RegressionProblem {
            x,
            y,
            beta_star: None,
            sigma2: None,
        })
    }

    pub fn with_truth(mut self, beta_star: DVector<f64>, sigma2: f64) -> Result<Self> {
        if beta_star.len() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "beta_star has length {} but X has {} columns",
                beta_star.len(),
                self.p()
            )));
        }
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma2 must be >= 0, got {sigma2}")));
        }
        self.beta_star = Some(beta_star);
        self.sigma2 = Some(sigma2);
        Ok(self)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn beta_star(&self) -> Option<&DVector<f64>> {
        self.beta_star.as_ref()
    }

    pub fn sigma2(&self) -> Option<f64> {
        self.sigma2
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Noise realisation `Y - X β*`, when the truth is known.
    pub fn noise(&self) -> Option<DVector<f64>> {
        self.beta_star.as_ref().map(|b| &self.y - &self.x * b)
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DVector<f64>) {
        (self.x, self.y)
    }
}

pub(crate) fn check_finite(x: &DMatrix<f64>) -> Result<()> {
    let n = x.nrows();
    if let Some(k) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput {
            row: k % n.max(1),
            col: k / n.max(1),
        });
    }
    Ok(())
}

/// Support of a coefficient vector together with the signs of its entries.
///
/// Indices are zero-based column positions, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportSet {
    indices: Vec<usize>,
    signs: Vec<i8>,
}

impl SupportSet {
    pub fn new(indices: Vec<usize>, signs: Vec<i8>, p: usize) -> Result<Self> {
        if indices.len() != signs.len() {
            return Err(Error::InvalidSupport(format!(
                "{} indices but {} signs",
                indices.len(),
                signs.len()
            )));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSupport(
                "indices must be strictly increasing".into(),
            ));
        }
        if let Some(&j) = indices.iter().find(|&&j| j >= p) {
            return Err(Error::InvalidSupport(format!(
                "index {j} out of range for {p} columns"
            )));
        }
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidSupport("signs must be +1 or -1".into()));
        }
        Ok(SupportSet { indices, signs })
    }

    /// Support with every sign positive.
    pub fn positive(indices: Vec<usize>, p: usize) -> Result<Self> {
        let signs = vec![1; indices.len()];
        Self::new(indices, signs, p)
    }

    /// The leading `s` columns `{0, …, s-1}` with positive signs.
    pub fn leading(s: usize, p: usize) -> Result<Self> {
        Self::positive((0..s).collect(), p)
    }

    /// Nonzero pattern and signs of `beta`.
    pub fn from_coefficients(beta: &[f64]) -> Self {
        let (indices, signs) = beta
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(j, b)| (j, if *b > 0.0 { 1 } else { -1 }))
            .unzip();
        SupportSet { indices, signs }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn sign_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.signs.len(), self.signs.iter().map(|&s| s as f64))
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Columns of `0..p` outside the support, increasing.
    pub fn complement(&self, p: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(p.saturating_sub(self.len()));
        let mut it = self.indices.iter().peekable();
        for j in 0..p {
            if it.peek() == Some(&&j) {
                it.next();
            } else {
                out.push(j);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_row_mismatch() {
        let err = RegressionProblem::new(DMatrix::zeros(3, 2), DVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn rejects_non_finite() {
        let mut x = DMatrix::zeros(2, 2);
        x[(1, 0)] = f64::NAN;
        let err = RegressionProblem::new(x, DVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteInput { row: 1, col: 0 }));
    }

    #[test]
    fn truth_length_checked() {
        let prob = RegressionProblem::new(DMatrix::zeros(3, 2), DVector::zeros(3)).unwrap();
        assert!(prob.with_truth(DVector::zeros(3), 1.0).is_err());
    }

    #[test]
    fn support_validation() {
        assert!(SupportSet::new(vec![0, 2], vec![1, -1], 3).is_ok());
        assert!(SupportSet::new(vec![2, 0], vec![1, 1], 3).is_err());
        assert!(SupportSet::new(vec![0, 0], vec![1, 1], 3).is_err());
        assert!(SupportSet::new(vec![3], vec![1], 3).is_err());
        assert!(SupportSet::new(vec![0], vec![0], 3).is_err());
        assert!(SupportSet::new(vec![0, 1], vec![1], 3).is_err());
    }

    #[test]
    fn complement_and_signs() {
        let s = SupportSet::from_coefficients(&[0.0, -2.0, 0.0, 3.0]);
        assert_eq!(s.indices(), &[1, 3]);
        assert_eq!(s.signs(), &[-1, 1]);
        assert_eq!(s.complement(5), vec![0, 2, 4]);
    }
}
