//! Irrepresentable-condition scores, exact-recovery certificates and the
//! recovery probability bounds.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column, dot, select_columns, SupportGram};
use crate::precondition::PufferDecomposition;
use crate::problem::{RegressionProblem, SupportSet};

/// Direction `w = X(S) (X(S)ᵀX(S))⁻¹ b` whose inner products with the
/// off-support columns give the irrepresentable-condition vector.
fn ic_direction(x: &DMatrix<f64>, support: &SupportSet) -> Result<(DVector<f64>, SupportGram)> {
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    if let Some(&j) = support.indices().last() {
        if j >= x.ncols() {
            return Err(Error::InvalidSupport(format!(
                "index {j} out of range for {} columns",
                x.ncols()
            )));
        }
    }
    let xs = select_columns(x, support.indices());
    let gram = SupportGram::new(&xs)?;
    let coef = gram.solve(&support.sign_vector());
    Ok((&xs * coef, gram))
}

/// `‖X(Sᶜ)ᵀ X(S) (X(S)ᵀX(S))⁻¹ b‖_∞` with `b` the support signs.
///
/// The irrepresentable condition holds exactly when the score is below one.
/// A support covering every column scores zero.
pub fn ic_score(x: &DMatrix<f64>, support: &SupportSet) -> Result<f64> {
    let (w, _) = ic_direction(x, support)?;
    let w = w.as_slice();
    Ok(support
        .complement(x.ncols())
        .into_iter()
        .map(|j| dot(column(x, j), w).abs())
        .fold(0.0, f64::max))
}

/// Scores `IC(X, {0..q})` for `q = 1..=q_max` with all-positive signs.
///
/// Stops at the first singular support Gram and reports it in place.
pub fn ic_scores_leading(x: &DMatrix<f64>, q_max: usize) -> Vec<Result<f64>> {
    (1..=q_max)
        .map(|q| SupportSet::leading(q, x.ncols()).and_then(|s| ic_score(x, &s)))
        .collect()
}

/// Outcome of the two exact-recovery conditions for one noise realisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConditions {
    /// `max_{j∉S} |X_jᵀX(S)G⁻¹(X(S)ᵀε − λb) − X_jᵀε| / λ`; (R1) holds when ≤ 1.
    pub r1_ratio: f64,
    /// Sign of `β*(S) + G⁻¹(X(S)ᵀε − λb)` equals `b`.
    pub r2_holds: bool,
}

impl RecoveryConditions {
    pub fn r1_holds(&self) -> bool {
        self.r1_ratio <= 1.0
    }

    pub fn r1_strict(&self) -> bool {
        self.r1_ratio < 1.0
    }

    /// Both conditions with (R1) strict: the Lasso solution is unique and has
    /// the sign pattern of `β*`.
    pub fn recovers(&self) -> bool {
        self.r1_strict() && self.r2_holds
    }
}

/// Evaluates the primal-dual witness conditions (R1) and (R2).
pub fn kkt_recovery_conditions(
    problem: &RegressionProblem,
    support: &SupportSet,
    lambda: f64,
    epsilon: &DVector<f64>,
) -> Result<RecoveryConditions> {
    let beta_star = problem
        .beta_star()
        .ok_or_else(|| Error::InvalidArgument("problem has no beta_star".into()))?;
    let x = problem.x();
    if epsilon.len() != problem.n() {
        return Err(Error::DimensionMismatch(format!(
            "epsilon has length {} but n = {}",
            epsilon.len(),
            problem.n()
        )));
    }
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let xs = select_columns(x, support.indices());
    let gram = SupportGram::new(&xs)?;
    let b = support.sign_vector();
    let rhs = xs.tr_mul(epsilon) - &b * lambda;
    let shift = gram.solve(&rhs);
    // X(S) G⁻¹ (X(S)ᵀε − λb) − ε, so that X_jᵀ of it is the (R1) entry
    let witness = &xs * &shift - epsilon;
    let r1_ratio = support
        .complement(problem.p())
        .into_iter()
        .map(|j| dot(column(x, j), witness.as_slice()).abs() / lambda)
        .fold(0.0, f64::max);
    let r2_holds = support
        .indices()
        .iter()
        .zip(support.signs())
        .zip(shift.iter())
        .all(|((&j, &s), d)| {
            let v = beta_star[j] + d;
            (v > 0.0 && s > 0) || (v < 0.0 && s < 0)
        });
    Ok(RecoveryConditions { r1_ratio, r2_holds })
}

/// True iff (R1) holds strictly and (R2) holds for this noise realisation.
pub fn kkt_recovery_check(
    problem: &RegressionProblem,
    support: &SupportSet,
    lambda: f64,
    epsilon: &DVector<f64>,
) -> Result<bool> {
    Ok(kkt_recovery_conditions(problem, support, lambda, epsilon)?.recovers())
}

/// `Ψ = λ [η / √C_min + ‖(X(S)ᵀX(S))⁻¹ b‖_∞]`.
///
/// Negative `η` (condition violated) is clamped to zero.
pub fn psi_bound(x: &DMatrix<f64>, support: &SupportSet, lambda: f64, eta: f64) -> Result<f64> {
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let xs = select_columns(x, support.indices());
    let gram = SupportGram::new(&xs)?;
    let inv_b = gram.solve(&support.sign_vector());
    Ok(lambda * (eta.max(0.0) / gram.eig_min.sqrt() + inv_b.amax()))
}

/// Recovery probability `1 − 2p exp(−λ²η² / (2 Λ_max(Σ_ε)))`.
pub fn recovery_probability_bound(p: usize, lambda: f64, eta: f64, noise_eig_max: f64) -> f64 {
    let eta = eta.max(0.0);
    1.0 - 2.0 * p as f64 * (-(lambda * lambda * eta * eta) / (2.0 * noise_eig_max)).exp()
}

/// Low-dimensional bound `1 − 2p exp(−nλ²C̃_min / (2σ²))`. May be negative.
pub fn theorem1_bound(n: usize, p: usize, lambda: f64, sigma2: f64, c_min_scaled: f64) -> f64 {
    1.0 - 2.0 * p as f64 * (-(n as f64) * lambda * lambda * c_min_scaled / (2.0 * sigma2)).exp()
}

/// High-dimensional bound `1 − 2p exp(−pλ²η²d_min / (2σ²))`. May be negative.
///
/// `n` is accepted for symmetry with the low-dimensional bound; it enters only
/// through `d_min`.
pub fn theorem3_bound(_n: usize, p: usize, lambda: f64, sigma2: f64, eta: f64, d_min: f64) -> f64 {
    let p = p as f64;
    1.0 - 2.0 * p * (-p * lambda * lambda * eta * eta * d_min / (2.0 * sigma2)).exp()
}

/// λ from `λ² = √(n log p / (s p²))`.
pub fn corollary_lambda(n: usize, p: usize, s: usize) -> f64 {
    let (n, p, s) = (n as f64, p as f64, s as f64);
    (n * p.ln() / (s * p * p)).sqrt().sqrt()
}

/// Signal/support/noise summary of a design against a support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub ic_score: f64,
    /// `1 − ic_score`; negative when the condition fails.
    pub eta: f64,
    /// Smallest eigenvalue of `X(S)ᵀX(S)`.
    pub c_min: f64,
    /// Smallest eigenvalue of `X(S)ᵀX(S) / n`.
    pub c_min_scaled: f64,
    /// `min_i D_ii² / p` from the singular values of the full design.
    pub d_min_proxy: f64,
    /// `min_{j∈S} |β*_j|`, when the truth is known.
    pub m_beta: Option<f64>,
    pub psi: f64,
    /// Recovery probability lower bound; negative values are vacuous.
    pub prob_bound: f64,
    /// Raw `n / p` for comparing `c_min` against `n/(cp)`.
    pub n_over_p: f64,
}

/// Builds a report for `x` against `support` at penalty `lambda`.
///
/// `noise_eig_max` is the largest eigenvalue of the noise covariance seen by
/// this design: `σ²` for the raw data, `σ²/D_min²` after preconditioning.
pub fn diagnostics_report(
    x: &DMatrix<f64>,
    support: &SupportSet,
    decomposition: &PufferDecomposition,
    beta_star: Option<&DVector<f64>>,
    lambda: f64,
    noise_eig_max: f64,
) -> Result<DiagnosticsReport> {
    let (n, p) = x.shape();
    let score = ic_score(x, support)?;
    let eta = 1.0 - score;
    let xs = select_columns(x, support.indices());
    let gram = SupportGram::new(&xs)?;
    let d_last = decomposition.singular_values().min();
    let m_beta = beta_star.map(|b| {
        support
            .indices()
            .iter()
            .map(|&j| b[j].abs())
            .fold(f64::INFINITY, f64::min)
    });
    Ok(DiagnosticsReport {
        ic_score: score,
        eta,
        c_min: gram.eig_min,
        c_min_scaled: gram.eig_min / n as f64,
        d_min_proxy: d_last * d_last / p as f64,
        m_beta,
        psi: psi_bound(x, support, lambda, eta)?,
        prob_bound: recovery_probability_bound(p, lambda, eta, noise_eig_max),
        n_over_p: n as f64 / p as f64,
    })
}

/// Per-coefficient support comparison against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignReport {
    pub false_positives: usize,
    pub false_negatives: usize,
    pub sign_match: bool,
    pub l2_error: f64,
}

/// Counts false positives/negatives with `|β̂_j| ≤ zero_tol` read as zero.
pub fn sign_report(beta_hat: &[f64], beta_star: &[f64], zero_tol: f64) -> Result<SignReport> {
    if beta_hat.len() != beta_star.len() {
        return Err(Error::DimensionMismatch(format!(
            "beta_hat has length {} but beta_star has length {}",
            beta_hat.len(),
            beta_star.len()
        )));
    }
    let mut fp = 0;
    let mut fneg = 0;
    let mut sign_flip = false;
    let mut sq = 0.0;
    for (&bh, &bs) in beta_hat.iter().zip(beta_star) {
        let selected = bh.abs() > zero_tol;
        match (selected, bs != 0.0) {
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (true, true) if bh.signum() != bs.signum() => sign_flip = true,
            _ => {}
        }
        sq += (bh - bs) * (bh - bs);
    }
    Ok(SignReport {
        false_positives: fp,
        false_negatives: fneg,
        sign_match: fp == 0 && fneg == 0 && !sign_flip,
        l2_error: sq.sqrt(),
    })
}

/// Independent KKT certificate for a Lasso solution: the worst relative
/// violation computed from a fresh dense residual `Y − Xβ`.
pub fn kkt_check(x: &DMatrix<f64>, y: &DVector<f64>, beta: &[f64], lambda: f64) -> Result<f64> {
    if x.ncols() != beta.len() || x.nrows() != y.len() {
        return Err(Error::DimensionMismatch("kkt_check operands".into()));
    }
    let b = DVector::from_column_slice(beta);
    let grad = x.tr_mul(&(y - x * &b));
    Ok(grad
        .iter()
        .zip(beta)
        .map(|(g, &bj)| {
            if bj != 0.0 {
                (g - lambda * bj.signum()).abs() / lambda
            } else {
                (g.abs() / lambda - 1.0).max(0.0)
            }
        })
        .fold(0.0, f64::max))
}

/// Population standard deviation (divide by `n`) or sample (divide by `n − 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SdConvention {
    #[default]
    Population,
    Sample,
}

/// Centres each column to mean zero and scales it to unit population
/// standard deviation.
pub fn center_and_scale(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    center_and_scale_with(x, SdConvention::Population)
}

pub fn center_and_scale_with(x: &DMatrix<f64>, convention: SdConvention) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let denom = match convention {
        SdConvention::Population => n as f64,
        SdConvention::Sample => n as f64 - 1.0,
    };
    let mut out = x.clone();
    for j in 0..x.ncols() {
        let mut col = out.column_mut(j);
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
        let ss = col.norm_squared();
        let sd = (ss / denom).sqrt();
        if !(sd > 0.0) || sd <= f64::EPSILON * mean.abs() {
            return Err(Error::ZeroVarianceColumn { column: j });
        }
        col /= sd;
    }
    Ok(out)
}

#[cfg(test)]
/// Maps a linear index over unordered pairs `i < j` to the pair.
fn pair_from_index(mut k: usize, p: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = p - 1 - i;
        if k < row {
            return (i, i + 1 + k);
        }
        k -= row;
        i += 1;
    }
}

/// Draws `num_pairs` distinct unordered column pairs uniformly without
/// replacement, in sampling order.
pub fn sample_column_pairs(p: usize, num_pairs: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if p < 2 {
        return Err(Error::InvalidArgument("need at least two columns".into()));
    }
    let total = p * (p - 1) / 2;
    if num_pairs > total {
        return Err(Error::InvalidArgument(format!(
            "{num_pairs} pairs requested but only {total} exist"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, total, num_pairs).into_vec();
    // sorting the linear indices lets the pair decoding walk forward once
    picks.sort_unstable();
    let mut out = Vec::with_capacity(num_pairs);
    let (mut i, mut base) = (0usize, 0usize);
    for k in picks {
        while k >= base + (p - 1 - i) {
            base += p - 1 - i;
            i += 1;
        }
        out.push((i, i + 1 + (k - base)));
    }
    Ok(out)
}

/// Pearson correlations of sampled column pairs, reproducible from `seed`.
pub fn pairwise_correlation_sample(
    x: &DMatrix<f64>,
    num_pairs: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let pairs = sample_column_pairs(x.ncols(), num_pairs, seed)?;
    correlations_for_pairs(x, &pairs)
}

/// Pearson correlations for the given column pairs.
pub fn correlations_for_pairs(x: &DMatrix<f64>, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    let n = x.nrows() as f64;
    let mut centered: std::collections::HashMap<usize, (Vec<f64>, f64)> = Default::default();
    let mut prepare = |j: usize| -> Result<()> {
        if centered.contains_key(&j) {
            return Ok(());
        }
        let c = column(x, j);
        let mean = c.iter().sum::<f64>() / n;
        let v: Vec<f64> = c.iter().map(|a| a - mean).collect();
        let norm = dot(&v, &v).sqrt();
        if !(norm > 0.0) {
            return Err(Error::ZeroVarianceColumn { column: j });
        }
        centered.insert(j, (v, norm));
        Ok(())
    };
    for &(i, j) in pairs {
        prepare(i)?;
        prepare(j)?;
    }
    Ok(pairs
        .iter()
        .map(|(i, j)| {
            let (a, na) = &centered[i];
            let (b, nb) = &centered[j];
            dot(a, b) / (na * nb)
        })
        .collect())
}

/// Mean and population standard deviation.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
