//! Choosing one model from a Lasso path: OLS-BIC and first-with-k-predictors.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lasso::LassoPath;
use crate::linalg::select_columns;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    OlsBic,
    FirstWithDf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub rule: SelectionRule,
    pub chosen_lambda: f64,
    /// Position of the chosen solution in the path.
    pub path_index: usize,
    pub chosen_support: Vec<usize>,
    pub df: usize,
    /// BIC of each scored df (OLS-BIC only).
    pub bic_scores: Option<BTreeMap<usize, f64>>,
}

fn result_for(path: &LassoPath, idx: usize, rule: SelectionRule) -> SelectionResult {
    let sol = &path.solutions[idx];
    SelectionResult {
        rule,
        chosen_lambda: sol.lambda,
        path_index: idx,
        chosen_support: sol.support(),
        df: sol.active_count,
        bic_scores: None,
    }
}

/// First solution, in decreasing-λ order, with at least `k` nonzeros.
///
/// When no model has exactly `k` predictors the next larger one is taken.
pub fn first_with_df(path: &LassoPath, k: usize) -> Result<SelectionResult> {
    path.solutions
        .iter()
        .position(|s| s.active_count >= k)
        .map(|idx| result_for(path, idx, SelectionRule::FirstWithDf))
        .ok_or_else(|| {
            Error::NoSuchModel(format!(
                "largest model on the path has {} predictors, {k} requested",
                path.solutions.iter().map(|s| s.active_count).max().unwrap_or(0)
            ))
        })
}

/// Least-squares fit on the columns in `support`, optionally with an
/// intercept (listed first in the coefficients). Returns the coefficients and
/// the residual sum of squares.
pub fn ols_refit(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    support: &[usize],
    intercept: bool,
) -> Result<(DVector<f64>, f64)> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "X has {} rows but Y has length {}",
            x.nrows(),
            y.len()
        )));
    }
    let n = x.nrows();
    let k = support.len() + usize::from(intercept);
    if k == 0 {
        return Ok((DVector::zeros(0), y.norm_squared()));
    }
    if k > n {
        return Err(Error::SingularGram {
            condition: f64::INFINITY,
        });
    }
    let mut design = DMatrix::zeros(n, k);
    let offset = usize::from(intercept);
    if intercept {
        design.column_mut(0).fill(1.0);
    }
    design
        .columns_mut(offset, support.len())
        .copy_from(&select_columns(x, support));

    let qr = design.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..k).map(|i| r[(i, i)].abs()).collect();
    let rmax = diag.iter().cloned().fold(0.0, f64::max);
    let rmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    // κ(AᵀA) ≈ (r_max / r_min)², matched against the Gram singularity cutoff
    if !(rmin > 0.0) || (rmax / rmin).powi(2) > crate::linalg::MAX_GRAM_CONDITION {
        return Err(Error::SingularGram {
            condition: if rmin > 0.0 { (rmax / rmin).powi(2) } else { f64::INFINITY },
        });
    }
    let qty = qr.q().tr_mul(y);
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::SingularGram {
            condition: f64::INFINITY,
        })?;
    let rss = (y - design * &coef).norm_squared();
    Ok((coef, rss))
}

/// Gaussian BIC with unknown variance:
/// `n log(2π rss/n) + n + k log n`, `k` counting every mean parameter plus
/// the variance.
pub fn gaussian_bic(n: usize, rss: f64, mean_params: usize) -> f64 {
    let nf = n as f64;
    let k = (mean_params + 1) as f64;
    nf * (2.0 * std::f64::consts::PI * rss / nf).ln() + nf + k * nf.ln()
}

/// For each `df` in `1..=df_max`, refits OLS on the original data for the
/// first path model with exactly `df` nonzeros and keeps the lowest BIC.
///
/// Unattained df values are skipped, as are refits that are rank deficient.
pub fn ols_bic_select(
    path: &LassoPath,
    x_orig: &DMatrix<f64>,
    y_orig: &DVector<f64>,
    df_max: usize,
    intercept: bool,
) -> Result<SelectionResult> {
    if df_max < 1 {
        return Err(Error::InvalidArgument("df_max must be at least 1".into()));
    }
    let n = x_orig.nrows();
    let mut first_at: BTreeMap<usize, usize> = BTreeMap::new();
    for (idx, sol) in path.solutions.iter().enumerate() {
        if (1..=df_max).contains(&sol.active_count) {
            first_at.entry(sol.active_count).or_insert(idx);
        }
    }
    if first_at.is_empty() {
        return Err(Error::NoSuchModel(format!(
            "no path model with 1..={df_max} predictors"
        )));
    }
    let mut scores = BTreeMap::new();
    let mut best: Option<(f64, usize)> = None;
    for (&df, &idx) in &first_at {
        let support = path.solutions[idx].support();
        match ols_refit(x_orig, y_orig, &support, intercept) {
            Ok((_, rss)) => {
                let bic = gaussian_bic(n, rss, df + usize::from(intercept));
                scores.insert(df, bic);
                if best.is_none_or(|(b, _)| bic < b) {
                    best = Some((bic, idx));
                }
            }
            Err(Error::SingularGram { condition }) => {
                log::warn!("ols-bic: skipping df = {df}, refit is singular (condition {condition:.3e})");
            }
            Err(e) => return Err(e),
        }
    }
    let (_, idx) = best.ok_or_else(|| {
        Error::NoSuchModel("every OLS refit was rank deficient".into())
    })?;
    let mut result = result_for(path, idx, SelectionRule::OlsBic);
    result.bic_scores = Some(scores);
    Ok(result)
}
