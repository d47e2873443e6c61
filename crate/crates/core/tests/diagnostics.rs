mod common;

use common::{gaussian, gaussian_vec, orthonormal_columns, rng};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use puffer::designs::{sample_design, DesignKind, DesignSpec};
use puffer::diagnostics::{
    center_and_scale, ic_score, kkt_recovery_check, kkt_recovery_conditions, psi_bound,
    recovery_probability_bound, sign_report,
};
use puffer::linalg::select_columns;
use puffer::precondition::{precondition_design, DEFAULT_RANK_TOLERANCE};
use puffer::{solve_lasso, LassoOptions, RegressionProblem, SupportSet};

/// `‖X(Sᶜ)ᵀ X(S) (X(S)ᵀX(S))⁻¹ b‖_∞` with an explicit inverse.
fn brute_ic(x: &DMatrix<f64>, support: &SupportSet) -> f64 {
    let xs = select_columns(x, support.indices());
    let xc = select_columns(x, &support.complement(x.ncols()));
    let g_inv = xs.tr_mul(&xs).try_inverse().unwrap();
    (xc.tr_mul(&xs) * g_inv * support.sign_vector()).amax()
}

#[test]
fn three_column_confounded_example() {
    let sigma = vec![
        vec![1.0, 0.0, 0.6],
        vec![0.0, 1.0, 0.6],
        vec![0.6, 0.6, 1.0],
    ];
    let x = sample_design(&DesignSpec {
        kind: DesignKind::Covariance { sigma },
        n: 10_000,
        p: 3,
        seed: 17,
    })
    .unwrap();
    let support = SupportSet::positive(vec![0, 1], 3).unwrap();
    let before = ic_score(&x, &support).unwrap();
    assert!(before > 1.0, "population value 1.2, got {before}");
    assert!((before - brute_ic(&x, &support)).abs() < 1e-10);

    let beta = DVector::from_vec(vec![1.0, 1.0, 0.0]);
    let y = &x * &beta + gaussian_vec(&mut rng(1), 10_000) * 1e-3;
    let problem = RegressionProblem::new(x, y).unwrap();
    let t = puffer::puffer_transform(&problem, DEFAULT_RANK_TOLERANCE, 0.0).unwrap();
    assert!(ic_score(t.x_tilde(), &support).unwrap() < 1e-6);
}

#[test]
fn single_column_support_by_hand() {
    let x = gaussian(&mut rng(12), 25, 7);
    let support = SupportSet::leading(1, 7).unwrap();
    let x0 = x.column(0);
    let direct = (1..7)
        .map(|j| (x.column(j).dot(&x0) / x0.norm_squared()).abs())
        .fold(0.0, f64::max);
    let score = ic_score(&x, &support).unwrap();
    assert!((score - direct).abs() < 1e-10 * direct.max(1.0));
}

#[test]
fn psi_matches_dense_formula() {
    let mut r = rng(31);
    let x = gaussian(&mut r, 20, 6);
    let support = SupportSet::new(vec![1, 4], vec![1, -1], 6).unwrap();
    let lambda = 0.7;
    let eta = 1.0 - ic_score(&x, &support).unwrap();
    let xs = select_columns(&x, support.indices());
    let g = xs.tr_mul(&xs);
    let c_min = g.clone().symmetric_eigen().eigenvalues.min();
    let dense = lambda
        * (eta.max(0.0) / c_min.sqrt() + (g.try_inverse().unwrap() * support.sign_vector()).amax());
    let psi = psi_bound(&x, &support, lambda, eta).unwrap();
    assert!((psi - dense).abs() < 1e-12 * dense.max(1.0));
}

#[test]
fn witness_agrees_with_solver() {
    let mut checked = 0;
    let mut recovered = 0;
    for trial in 0..200u64 {
        let mut r = rng(1000 + trial);
        let x = gaussian(&mut r, 30, 8);
        let mut beta = DVector::zeros(8);
        let signs = [1.0, -1.0, 1.0];
        for j in 0..3 {
            beta[j] = signs[j] * (0.3 + 0.4 * (trial % 4) as f64);
        }
        let eps = gaussian_vec(&mut r, 30);
        let y = &x * &beta + &eps;
        let lambda = 8.0 + (trial % 7) as f64 * 3.0;
        let problem = RegressionProblem::new(x.clone(), y.clone())
            .unwrap()
            .with_truth(beta.clone(), 1.0)
            .unwrap();
        let support = SupportSet::from_coefficients(beta.as_slice());
        let cond = kkt_recovery_conditions(&problem, &support, lambda, &eps).unwrap();
        if !cond.r1_strict() {
            continue;
        }
        let opts = LassoOptions {
            tol: 1e-10,
            max_iter: 100_000,
        };
        let sol = solve_lasso(&x, &y, lambda, opts, None).unwrap();
        let matched = sign_report(&sol.beta_hat, beta.as_slice(), 0.0).unwrap().sign_match;
        assert_eq!(
            kkt_recovery_check(&problem, &support, lambda, &eps).unwrap(),
            matched,
            "trial {trial}"
        );
        checked += 1;
        recovered += usize::from(matched);
    }
    // the comparison must exercise both outcomes
    assert!(checked >= 100, "only {checked} trials with strict (R1)");
    assert!(recovered > 0 && recovered < checked);
}

#[test]
fn probability_bound_is_conservative() {
    let mut r = rng(77);
    let (n, p, sigma) = (200, 8, 1.0);
    let x = gaussian(&mut r, n, p) / (n as f64).sqrt();
    let support = SupportSet::leading(2, p).unwrap();
    let eta = 1.0 - ic_score(&x, &support).unwrap();
    assert!(eta > 0.2, "design should satisfy the condition comfortably");
    // large enough for a nonvacuous bound
    let lambda = 1.2 * (2.0 * sigma * sigma * (2.0 * p as f64).ln()).sqrt() / eta;
    let bound = recovery_probability_bound(p, lambda, eta, sigma * sigma);
    assert!(bound > 0.0);
    let psi = psi_bound(&x, &support, lambda, eta).unwrap();
    let mut beta = DVector::zeros(p);
    beta[0] = 1.2 * psi;
    beta[1] = 1.2 * psi;
    let mut hits = 0;
    let draws = 500;
    for _ in 0..draws {
        let eps = gaussian_vec(&mut r, n) * sigma;
        let y = &x * &beta + &eps;
        let sol = solve_lasso(&x, &y, lambda, LassoOptions::default(), None).unwrap();
        hits += usize::from(sign_report(&sol.beta_hat, beta.as_slice(), 0.0).unwrap().sign_match);
    }
    let freq = hits as f64 / draws as f64;
    assert!(freq >= bound, "frequency {freq} below bound {bound}");
}

#[test]
fn center_and_scale_post_check() {
    let x = gaussian(&mut rng(2), 40, 6) * 3.0 + DMatrix::from_element(40, 6, 5.0);
    let z = center_and_scale(&x).unwrap();
    for j in 0..6 {
        let c = z.column(j);
        let mean = c.sum() / 40.0;
        let sd = (c.map(|v| (v - mean) * (v - mean)).sum() / 40.0).sqrt();
        assert!(mean.abs() < 1e-12);
        assert!((sd - 1.0).abs() < 1e-12);
    }
}

#[test]
fn orthonormal_support_psi_is_two_lambda() {
    let x = orthonormal_columns(&mut rng(6), 12, 4);
    let support = SupportSet::leading(2, 4).unwrap();
    assert_eq!(psi_bound(&x, &support, 0.3, 1.0).unwrap(), 0.6);
}

fn support_strategy(p: usize) -> impl Strategy<Value = SupportSet> {
    proptest::sample::subsequence((0..p).collect::<Vec<_>>(), 1..p).prop_flat_map(move |idx| {
        let k = idx.len();
        proptest::collection::vec(prop_oneof![Just(1i8), Just(-1i8)], k)
            .prop_map(move |signs| SupportSet::new(idx.clone(), signs, p).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ic_score_is_scale_invariant(
        seed in any::<u64>(),
        support in support_strategy(8),
        c in 0.001f64..1000.0,
    ) {
        let x = gaussian(&mut rng(seed), 30, 8);
        let a = ic_score(&x, &support).unwrap();
        let b = ic_score(&(&x * c), &support).unwrap();
        prop_assert!((a - b).abs() < 1e-10 * a.max(1.0));
    }

    #[test]
    fn orthonormal_columns_collapse_ic(
        seed in any::<u64>(),
        n in 10usize..40,
        support in support_strategy(8),
    ) {
        let x = gaussian(&mut rng(seed), n, 8);
        let fx = precondition_design(&x, DEFAULT_RANK_TOLERANCE).unwrap();
        prop_assert!(ic_score(&fx, &support).unwrap() < 1e-8);
    }

    #[test]
    fn ic_score_matches_brute_force(seed in any::<u64>(), support in support_strategy(6)) {
        let x = gaussian(&mut rng(seed), 15, 6);
        let a = ic_score(&x, &support).unwrap();
        prop_assert!((a - brute_ic(&x, &support)).abs() < 1e-8 * a.max(1.0));
    }
}
