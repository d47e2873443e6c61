//! Cyclic coordinate descent for `½‖Y − Xb‖² + λ‖b‖₁`.
//!
//! No intercept and no standardisation: callers pass the design they want
//! penalised. Convergence is declared on the relative KKT residual, which
//! gives an optimality certificate for every returned solution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, column, dot, inf_norm, select_columns, xt_times};

pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITER: usize = 10_000;
pub const DEFAULT_GRID_SIZE: usize = 100;

/// Active-set sweeps between exact active-set solves.
const NEWTON_EVERY: usize = 10;

/// `sign(z) · max(|z| − λ, 0)`.
#[inline]
pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Smallest λ whose Lasso solution is identically zero: `‖XᵀY‖_∞`.
pub fn lambda_max(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    check_dims(x, y)?;
    Ok(inf_norm(&xt_times(x, y.as_slice())))
}

fn check_dims(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "X has {} rows but Y has length {}",
            x.nrows(),
            y.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoSolution {
    pub lambda: f64,
    pub beta_hat: Vec<f64>,
    /// Number of nonzero coefficients (the model's degrees of freedom).
    pub active_count: usize,
    /// Worst KKT violation relative to λ.
    pub kkt_residual: f64,
    /// Coordinate-descent sweeps used, full and active-set combined.
    pub iterations: usize,
    pub converged: bool,
}

impl LassoSolution {
    pub fn support(&self) -> Vec<usize> {
        self.beta_hat
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(j, _)| j)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Relative KKT tolerance.
    pub tol: f64,
    /// Maximum number of sweeps.
    pub max_iter: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Mutable coordinate-descent state for one λ.
///
/// Exposed so the sweep-level behaviour (objective decrease, KKT residual) can
/// be observed directly.
pub struct CoordinateDescent<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    col_sq: Vec<f64>,
    lambda: f64,
    beta: Vec<f64>,
    residual: Vec<f64>,
}

impl<'a> CoordinateDescent<'a> {
    pub fn new(
        x: &'a DMatrix<f64>,
        y: &'a DVector<f64>,
        lambda: f64,
        warm_start: Option<&[f64]>,
    ) -> Result<Self> {
        check_dims(x, y)?;
        let col_sq = (0..x.ncols())
            .map(|j| {
                let c = column(x, j);
                dot(c, c)
            })
            .collect();
        Self::with_column_norms(x, y, col_sq, lambda, warm_start)
    }

    fn with_column_norms(
        x: &'a DMatrix<f64>,
        y: &'a DVector<f64>,
        col_sq: Vec<f64>,
        lambda: f64,
        warm_start: Option<&[f64]>,
    ) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        let p = x.ncols();
        let beta = match warm_start {
            Some(w) if w.len() != p => {
                return Err(Error::DimensionMismatch(format!(
                    "warm start has length {} but X has {p} columns",
                    w.len()
                )))
            }
            Some(w) => w.to_vec(),
            None => vec![0.0; p],
        };
        let mut cd = CoordinateDescent {
            x,
            y,
            col_sq,
            lambda,
            beta,
            residual: Vec::new(),
        };
        cd.refresh_residual();
        Ok(cd)
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Recomputes `Y − Xβ` from scratch, discarding accumulated rounding.
    pub fn refresh_residual(&mut self) {
        let mut r = self.y.as_slice().to_vec();
        for (j, &b) in self.beta.iter().enumerate() {
            if b != 0.0 {
                axpy(-b, column(self.x, j), &mut r);
            }
        }
        self.residual = r;
    }

    #[inline]
    fn update(&mut self, j: usize) {
        let sq = self.col_sq[j];
        let old = self.beta[j];
        if sq == 0.0 {
            self.beta[j] = 0.0;
            return;
        }
        let xj = column(self.x, j);
        let z = dot(xj, &self.residual) + sq * old;
        let new = soft_threshold(z, self.lambda) / sq;
        if new != old {
            axpy(old - new, xj, &mut self.residual);
            self.beta[j] = new;
        }
    }

    /// One cyclic pass over every coordinate.
    pub fn sweep_all(&mut self) {
        for j in 0..self.beta.len() {
            self.update(j);
        }
    }

    /// One cyclic pass over the currently nonzero coordinates.
    pub fn sweep_active(&mut self) {
        for j in 0..self.beta.len() {
            if self.beta[j] != 0.0 {
                self.update(j);
            }
        }
    }

    pub fn objective(&self) -> f64 {
        0.5 * dot(&self.residual, &self.residual)
            + self.lambda * self.beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    fn coordinate_violation(&self, j: usize) -> f64 {
        let g = dot(column(self.x, j), &self.residual);
        let b = self.beta[j];
        if b != 0.0 {
            (g - self.lambda * b.signum()).abs() / self.lambda
        } else {
            (g.abs() / self.lambda - 1.0).max(0.0)
        }
    }

    /// Worst relative KKT violation over all coordinates.
    pub fn kkt_residual(&self) -> f64 {
        (0..self.beta.len()).fold(0.0, |m, j| m.max(self.coordinate_violation(j)))
    }

    fn active_kkt_residual(&self) -> f64 {
        (0..self.beta.len())
            .filter(|&j| self.beta[j] != 0.0)
            .fold(0.0, |m, j| m.max(self.coordinate_violation(j)))
    }

    /// Exact minimiser of the objective restricted to the current sign
    /// pattern, `β_A = (X_AᵀX_A)⁻¹(X_AᵀY − λ s_A)`. When that point leaves the
    /// orthant the step stops at the first coordinate to hit zero. The move is
    /// kept only if the objective does not increase.
    ///
    /// Coordinate descent alone crawls when the active columns are nearly
    /// collinear; this step removes that dependence on conditioning.
    fn newton_step(&mut self) {
        let active: Vec<usize> = (0..self.beta.len()).filter(|&j| self.beta[j] != 0.0).collect();
        if active.is_empty() || active.len() > self.x.nrows() {
            return;
        }
        let xa = select_columns(self.x, &active);
        let signs = DVector::from_iterator(active.len(), active.iter().map(|&j| self.beta[j].signum()));
        let rhs = xa.tr_mul(self.y) - &signs * self.lambda;
        let Some(chol) = nalgebra::Cholesky::new(xa.tr_mul(&xa)) else {
            return;
        };
        let target = chol.solve(&rhs);
        if target.iter().any(|v| !v.is_finite()) {
            return;
        }
        let mut step = 1.0;
        let mut blocking = None;
        for (k, &j) in active.iter().enumerate() {
            let (b, t) = (self.beta[j], target[k]);
            if t * signs[k] <= 0.0 {
                let cross = b / (b - t);
                if cross < step {
                    step = cross;
                    blocking = Some(j);
                }
            }
        }
        let before = self.beta.clone();
        let old_objective = self.objective();
        for (k, &j) in active.iter().enumerate() {
            self.beta[j] += step * (target[k] - self.beta[j]);
        }
        if let Some(j) = blocking {
            self.beta[j] = 0.0;
        }
        self.refresh_residual();
        if self.objective() > old_objective {
            self.beta = before;
            self.refresh_residual();
        }
    }

    /// Runs full sweeps to discover the active set, then active-set sweeps
    /// until the active coordinates are optimal, then a full KKT check.
    pub fn run(mut self, options: LassoOptions) -> Result<LassoSolution> {
        if !(options.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive, got {}",
                options.tol
            )));
        }
        let mut sweeps = 0;
        let mut kkt;
        loop {
            self.sweep_all();
            sweeps += 1;
            let mut inner = 0;
            while sweeps < options.max_iter && self.active_kkt_residual() > 0.5 * options.tol {
                self.sweep_active();
                sweeps += 1;
                inner += 1;
                if inner % NEWTON_EVERY == 0 {
                    self.newton_step();
                }
            }
            self.refresh_residual();
            kkt = self.kkt_residual();
            if kkt <= options.tol || sweeps >= options.max_iter {
                break;
            }
        }
        let converged = kkt <= options.tol;
        let solution = LassoSolution {
            lambda: self.lambda,
            active_count: self.beta.iter().filter(|b| **b != 0.0).count(),
            beta_hat: self.beta,
            kkt_residual: kkt,
            iterations: sweeps,
            converged,
        };
        if converged {
            Ok(solution)
        } else {
            Err(Error::MaxIterationsExceeded {
                iterations: sweeps,
                kkt_residual: kkt,
                solution: Box::new(solution),
            })
        }
    }
}

/// Solves the Lasso at a single λ.
///
/// On non-convergence the best iterate is returned inside
/// [`Error::MaxIterationsExceeded`] with `converged = false`.
pub fn solve_lasso(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    options: LassoOptions,
    warm_start: Option<&[f64]>,
) -> Result<LassoSolution> {
    CoordinateDescent::new(x, y, lambda, warm_start)?.run(options)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoPath {
    /// Solutions ordered by strictly decreasing λ.
    pub solutions: Vec<LassoSolution>,
    pub lambda_max: f64,
    pub grid_size: usize,
}

impl LassoPath {
    pub fn lambdas(&self) -> Vec<f64> {
        self.solutions.iter().map(|s| s.lambda).collect()
    }

    pub fn active_counts(&self) -> Vec<usize> {
        self.solutions.iter().map(|s| s.active_count).collect()
    }

    pub fn all_converged(&self) -> bool {
        self.solutions.iter().all(|s| s.converged)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOptions {
    pub grid_size: usize,
    pub lambda_min_ratio: f64,
    pub solver: LassoOptions,
    /// Stop after the first solution with at least this many nonzeros.
    pub stop_at_active: Option<usize>,
}

impl PathOptions {
    /// Defaults for an `n × p` design: ratio 1e-4 when `n > p`, else 1e-3.
    pub fn for_shape(n: usize, p: usize) -> Self {
        PathOptions {
            grid_size: DEFAULT_GRID_SIZE,
            lambda_min_ratio: if n > p { 1e-4 } else { 1e-3 },
            solver: LassoOptions::default(),
            stop_at_active: None,
        }
    }
}

/// Geometric grid from `lambda_max` down to `lambda_max · ratio`.
pub fn lambda_grid(lambda_max: f64, grid_size: usize, lambda_min_ratio: f64) -> Vec<f64> {
    let last = (grid_size - 1) as f64;
    (0..grid_size)
        .map(|k| lambda_max * lambda_min_ratio.powf(k as f64 / last))
        .collect()
}

/// Warm-started regularisation path on a geometric λ grid.
///
/// A grid point that hits the sweep limit is kept, flagged `converged = false`,
/// and the path continues from it. When `Y` is orthogonal to every column the
/// grid is laid out below 1 and every solution is zero.
pub fn lasso_path(x: &DMatrix<f64>, y: &DVector<f64>, options: PathOptions) -> Result<LassoPath> {
    if options.grid_size < 2 {
        return Err(Error::InvalidArgument("grid_size must be at least 2".into()));
    }
    if !(options.lambda_min_ratio > 0.0 && options.lambda_min_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda_min_ratio must lie in (0, 1), got {}",
            options.lambda_min_ratio
        )));
    }
    let lmax = lambda_max(x, y)?;
    let scale = if lmax > 0.0 { lmax } else { 1.0 };
    let grid = lambda_grid(scale, options.grid_size, options.lambda_min_ratio);
    let col_sq: Vec<f64> = (0..x.ncols())
        .map(|j| {
            let c = column(x, j);
            dot(c, c)
        })
        .collect();

    let mut solutions: Vec<LassoSolution> = Vec::with_capacity(grid.len());
    for &lambda in &grid {
        let warm = solutions.last().map(|s| s.beta_hat.as_slice());
        let cd = CoordinateDescent::with_column_norms(x, y, col_sq.clone(), lambda, warm)?;
        let sol = match cd.run(options.solver) {
            Ok(sol) => sol,
            Err(Error::MaxIterationsExceeded { solution, .. }) => {
                log::warn!(
                    "lasso path: no convergence at lambda = {lambda:.6e} (kkt {:.3e})",
                    solution.kkt_residual
                );
                *solution
            }
            Err(e) => return Err(e),
        };
        let stop = options
            .stop_at_active
            .is_some_and(|k| sol.active_count >= k);
        solutions.push(sol);
        if stop {
            break;
        }
    }
    Ok(LassoPath {
        solutions,
        lambda_max: lmax,
        grid_size: options.grid_size,
    })
}
