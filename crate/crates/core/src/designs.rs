//! Seeded generators for designs, coefficients and noise.
//!
//! Every generator is a pure function of its arguments: the same seed always
//! yields the same draw, on every platform (ChaCha8 stream).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precondition::{precondition_design, DEFAULT_RANK_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DesignKind {
    IidGaussian,
    /// Unit variances, every off-diagonal correlation equal to `rho`.
    ConstantCorrelation { rho: f64 },
    /// Rows drawn from `N(0, Σ)`; `sigma` given row by row.
    Covariance { sigma: Vec<Vec<f64>> },
    /// `F Z` for an iid Gaussian `Z`, uniform on the Stiefel manifold.
    StiefelUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a master seed with a path of indices into an independent stream
/// seed (SplitMix64 finaliser).
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(master), |acc, &k| {
        mix(acc ^ k.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xd6e8_feb8_6659_fd93))
    })
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn sigma_matrix(rows: &[Vec<f64>], p: usize) -> Result<DMatrix<f64>> {
    if rows.len() != p || rows.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidSpec(format!("covariance must be {p}x{p}")));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
}

/// Symmetric square root `Q Λ^{1/2} Qᵀ` of an SPD matrix.
pub fn spd_sqrt(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = sigma.nrows();
    if sigma.ncols() != p {
        return Err(Error::InvalidSpec("covariance must be square".into()));
    }
    let scale = sigma.amax().max(1.0);
    for i in 0..p {
        for j in 0..i {
            if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::InvalidSpec("covariance must be symmetric".into()));
            }
        }
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSpec("covariance has non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(sigma.clone());
    if eig.eigenvalues.min() <= 0.0 {
        return Err(Error::InvalidSpec(
            "covariance must be positive definite".into(),
        ));
    }
    let root = eig.eigenvalues.map(f64::sqrt);
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

fn validate(spec: &DesignSpec) -> Result<()> {
    if spec.n == 0 || spec.p == 0 {
        return Err(Error::InvalidSpec("n and p must be at least 1".into()));
    }
    match &spec.kind {
        DesignKind::ConstantCorrelation { rho } if !(0.0..1.0).contains(rho) => Err(
            Error::InvalidSpec(format!("rho must lie in [0, 1), got {rho}")),
        ),
        DesignKind::StiefelUniform if spec.n > spec.p => Err(Error::InvalidSpec(format!(
            "Stiefel designs need n <= p, got n = {}, p = {}",
            spec.n, spec.p
        ))),
        _ => Ok(()),
    }
}

/// Draws an `n × p` design according to `spec`.
///
/// Constant correlation uses the one-factor construction
/// `X_ij = √ρ g_i + √(1−ρ) z_ij`, which never forms the `p × p` covariance.
pub fn sample_design(spec: &DesignSpec) -> Result<DMatrix<f64>> {
    validate(spec)?;
    let (n, p) = (spec.n, spec.p);
    let mut rng = rng_from_seed(spec.seed);
    match &spec.kind {
        DesignKind::IidGaussian => Ok(gaussian_matrix(&mut rng, n, p)),
        DesignKind::ConstantCorrelation { rho } => {
            let factor: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let mut x = gaussian_matrix(&mut rng, n, p);
            let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
            for mut col in x.column_iter_mut() {
                for (v, g) in col.iter_mut().zip(&factor) {
                    *v = a * g + b * *v;
                }
            }
            Ok(x)
        }
        DesignKind::Covariance { sigma } => {
            let root = spd_sqrt(&sigma_matrix(sigma, p)?)?;
            Ok(gaussian_matrix(&mut rng, n, p) * root)
        }
        DesignKind::StiefelUniform => {
            precondition_design(&gaussian_matrix(&mut rng, n, p), DEFAULT_RANK_TOLERANCE)
        }
    }
}

/// Uniform draw from `{V ∈ ℝ^{n×p} : V Vᵀ = I_n}`.
pub fn sample_stiefel_uniform(n: usize, p: usize, seed: u64) -> Result<DMatrix<f64>> {
    sample_design(&DesignSpec {
        kind: DesignKind::StiefelUniform,
        n,
        p,
        seed,
    })
}

/// Coefficients with `s` nonzeros of size `magnitude`.
///
/// By default the support is `{0, …, s−1}` with positive signs; with
/// `randomize` the positions and signs are drawn from `seed`.
pub fn sample_beta_star(
    p: usize,
    s: usize,
    magnitude: f64,
    seed: u64,
    randomize: bool,
) -> Result<DVector<f64>> {
    if s > p {
        return Err(Error::InvalidSpec(format!("s = {s} exceeds p = {p}")));
    }
    let mut beta = DVector::zeros(p);
    if !randomize {
        beta.rows_mut(0, s).fill(magnitude);
        return Ok(beta);
    }
    let mut rng = rng_from_seed(seed);
    let mut idx: Vec<usize> = (0..p).collect();
    idx.shuffle(&mut rng);
    for &j in &idx[..s] {
        beta[j] = if rng.random::<bool>() { magnitude } else { -magnitude };
    }
    Ok(beta)
}

/// iid `N(0, σ²)` noise.
pub fn sample_noise(n: usize, sigma2: f64, seed: u64) -> Result<DVector<f64>> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidSpec(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    let mut rng = rng_from_seed(seed);
    let sd = sigma2.sqrt();
    Ok(DVector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal)))
}

/// Unit-variance covariance in which the support columns `0..s` are mutually
/// independent and column `s` has correlation `coupling` with each of them.
///
/// The irrepresentable score of the population design is `s · coupling`, so
/// `coupling > 1/s` violates the condition; positive definiteness needs
/// `coupling < 1/√s`.
pub fn confounded_covariance(p: usize, s: usize, coupling: f64) -> Result<DMatrix<f64>> {
    if s == 0 || s >= p {
        return Err(Error::InvalidSpec(format!("need 0 < s < p, got s = {s}, p = {p}")));
    }
    if !(coupling.abs() * (s as f64).sqrt() < 1.0) {
        return Err(Error::InvalidSpec(format!(
            "coupling {coupling} makes the covariance indefinite for s = {s}"
        )));
    }
    let mut sigma = DMatrix::identity(p, p);
    for j in 0..s {
        sigma[(j, s)] = coupling;
        sigma[(s, j)] = coupling;
    }
    Ok(sigma)
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}
