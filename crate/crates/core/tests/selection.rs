mod common;

use common::{gaussian, gaussian_vec, orthonormal_columns, rng};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use puffer::selection::{first_with_df, gaussian_bic, ols_bic_select, ols_refit};
use puffer::{lasso_path, PathOptions};

fn normal_equations_rss(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let beta = x.tr_mul(x).try_inverse().unwrap() * x.tr_mul(y);
    (y - x * beta).norm_squared()
}

#[test]
fn refit_matches_normal_equations() {
    let mut r = rng(50);
    let x = gaussian(&mut r, 50, 10);
    let y = gaussian_vec(&mut r, 50);
    let support = [1, 4, 7];
    let xs = puffer::linalg::select_columns(&x, &support);

    let (_, rss) = ols_refit(&x, &y, &support, false).unwrap();
    let oracle = normal_equations_rss(&xs, &y);
    assert!((rss - oracle).abs() < 1e-8 * oracle);

    let mut with_one = DMatrix::from_element(50, 4, 1.0);
    with_one.columns_mut(1, 3).copy_from(&xs);
    let (coef, rss) = ols_refit(&x, &y, &support, true).unwrap();
    let oracle = normal_equations_rss(&with_one, &y);
    assert_eq!(coef.len(), 4);
    assert!((rss - oracle).abs() < 1e-8 * oracle);
}

#[test]
fn first_model_on_orthonormal_path_is_the_top_column() {
    let mut r = rng(3);
    let x = orthonormal_columns(&mut r, 30, 6);
    let y = gaussian_vec(&mut r, 30);
    let xty = x.tr_mul(&y).abs();
    let top = xty.imax();
    let path = lasso_path(&x, &y, PathOptions::for_shape(30, 6)).unwrap();
    let chosen = first_with_df(&path, 1).unwrap();
    assert_eq!(chosen.chosen_support, vec![top]);
    assert!(chosen.chosen_lambda < xty[top]);
    assert!(path.solutions[chosen.path_index - 1].lambda >= xty[top] * (1.0 - 1e-12));
}

#[test]
fn pure_noise_selects_small_models() {
    let mut small = 0;
    for seed in 0..50 {
        let mut r = rng(500 + seed);
        let x = gaussian(&mut r, 500, 20);
        let y = gaussian_vec(&mut r, 500);
        let path = lasso_path(&x, &y, PathOptions::for_shape(500, 20)).unwrap();
        let chosen = ols_bic_select(&path, &x, &y, 20, true).unwrap();
        small += usize::from(chosen.df <= 3);
    }
    assert!(small >= 45, "{small} of 50 replicates chose df <= 3");
}

#[test]
fn strong_signal_selects_true_support() {
    // each null column enters with probability P(χ²₁ > log n) ≈ 0.02, so keep
    // a single one
    let (n, p, s) = (200, 6, 5);
    let mut exact = 0;
    for seed in 0..50 {
        let mut r = rng(900 + seed);
        let x = orthonormal_columns(&mut r, n, p);
        let mut beta = DVector::zeros(p);
        beta.rows_mut(0, s).fill(10.0);
        let y = &x * &beta + gaussian_vec(&mut r, n);
        let path = lasso_path(&x, &y, PathOptions::for_shape(n, p)).unwrap();
        let chosen = ols_bic_select(&path, &x, &y, p, true).unwrap();
        exact += usize::from(chosen.chosen_support == (0..s).collect::<Vec<_>>());
    }
    assert!(exact >= 48, "{exact} of 50 replicates selected S exactly");
}

#[test]
fn bic_prefers_smaller_rss_at_equal_size() {
    assert!(gaussian_bic(100, 10.0, 3) < gaussian_bic(100, 20.0, 3));
    let gap = gaussian_bic(100, 10.0, 4) - gaussian_bic(100, 10.0, 3);
    assert!((gap - 100f64.ln()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bic_choice_is_the_argmin(seed in any::<u64>(), n in 30usize..60, p in 5usize..40) {
        let mut r = rng(seed);
        let x = gaussian(&mut r, n, p);
        let mut beta = DVector::zeros(p);
        beta[0] = 3.0;
        beta[1] = -2.0;
        let y = &x * beta + gaussian_vec(&mut r, n);
        let mut opts = PathOptions::for_shape(n, p);
        opts.grid_size = 30;
        let path = lasso_path(&x, &y, opts).unwrap();
        let chosen = ols_bic_select(&path, &x, &y, 10, true).unwrap();
        let scores = chosen.bic_scores.clone().unwrap();
        let best = scores.values().copied().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(scores[&chosen.df], best);
        // selection reads the path only
        prop_assert_eq!(ols_bic_select(&path, &x, &y, 10, true).unwrap(), chosen);
    }

    #[test]
    fn first_with_df_meets_target(seed in any::<u64>(), k in 1usize..12) {
        let mut r = rng(seed);
        let x = gaussian(&mut r, 20, 15);
        let y = gaussian_vec(&mut r, 20);
        let mut opts = PathOptions::for_shape(20, 15);
        opts.grid_size = 40;
        let path = lasso_path(&x, &y, opts).unwrap();
        if let Ok(chosen) = first_with_df(&path, k) {
            prop_assert!(chosen.df >= k);
            prop_assert!(path.solutions[..chosen.path_index].iter().all(|s| s.active_count < k));
        }
    }
}
