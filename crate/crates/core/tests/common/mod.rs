#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Orthonormal columns via QR, independent of the SVD code under test.
pub fn orthonormal_columns(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    assert!(n >= p);
    gaussian(rng, n, p).qr().q().columns(0, p).into_owned()
}

pub fn soft(z: f64, t: f64) -> f64 {
    z.signum() * (z.abs() - t).max(0.0)
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `½‖y − Xβ‖² + λ‖β‖₁`.
pub fn objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &[f64], lambda: f64) -> f64 {
    let b = DVector::from_column_slice(beta);
    0.5 * (y - x * b).norm_squared() + lambda * beta.iter().map(|v| v.abs()).sum::<f64>()
}
