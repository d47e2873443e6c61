//! Monte-Carlo studies: correlation reduction, recovery sweeps under two
//! tuning rules, the Stiefel-versus-Gaussian IC comparison, fixed-λ recovery
//! rates and column coherence.
//!
//! Each replicate draws from its own seed derived from the master seed and the
//! replicate's grid position, so replicates run in parallel and the merged
//! table is identical from run to run. Aggregate rows are plain means of the
//! replicate rows they summarise.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designs::{
    confounded_covariance, derive_seed, matrix_to_rows, sample_beta_star, sample_design,
    sample_noise, sample_stiefel_uniform, DesignKind, DesignSpec,
};
use crate::diagnostics::{
    correlations_for_pairs, ic_score, mean_sd, sample_column_pairs, sign_report, theorem1_bound,
    center_and_scale,
};
use crate::error::{Error, Result};
use crate::lasso::{lasso_path, solve_lasso, LassoOptions, PathOptions};
use crate::linalg::{column, dot};
use crate::precondition::{
    precondition_design, puffer_transform, DEFAULT_RANK_TOLERANCE,
};
use crate::problem::{RegressionProblem, SupportSet};
use crate::selection::{first_with_df, ols_bic_select};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "PUFFER_THREADS";

/// Share of failed replicates above which a study is reported as failed.
pub const MAX_FAILURE_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    CorrelationReduction,
    BicSweep,
    FirstDfSweep,
    StiefelIcStudy,
    RecoveryRate,
    StiefelCoherence,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::CorrelationReduction => "correlation_reduction",
            Study::BicSweep => "bic_sweep",
            Study::FirstDfSweep => "first_df_sweep",
            Study::StiefelIcStudy => "stiefel_ic_study",
            Study::RecoveryRate => "recovery_rate",
            Study::StiefelCoherence => "stiefel_coherence",
        }
    }

    fn code(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    StandardLasso,
    PreconditionedLasso,
}

/// Row label: a fitting method, or the kind of matrix a row describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    Design,
    StandardLasso,
    PreconditionedLasso,
    Gaussian,
    Stiefel,
}

impl Series {
    pub fn name(self) -> &'static str {
        match self {
            Series::Design => "design",
            Series::StandardLasso => "standard_lasso",
            Series::PreconditionedLasso => "preconditioned_lasso",
            Series::Gaussian => "gaussian",
            Series::Stiefel => "stiefel",
        }
    }
}

impl From<Method> for Series {
    fn from(m: Method) -> Self {
        match m {
            Method::StandardLasso => Series::StandardLasso,
            Method::PreconditionedLasso => Series::PreconditionedLasso,
        }
    }
}

/// Design family of a study. The correlation parameter comes from
/// `rho_grid`: it is `ρ` for constant correlation and the coupling of the
/// confounding column for `confounded`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DesignTemplate {
    IidGaussian { n: usize },
    ConstantCorrelation { n: usize },
    Covariance { n: usize, sigma: Vec<Vec<f64>> },
    StiefelUniform { n: usize },
    /// See [`confounded_covariance`]: support columns independent, column `s`
    /// correlated with each of them.
    Confounded { n: usize },
}

impl DesignTemplate {
    pub fn n(&self) -> usize {
        match self {
            DesignTemplate::IidGaussian { n }
            | DesignTemplate::ConstantCorrelation { n }
            | DesignTemplate::Covariance { n, .. }
            | DesignTemplate::StiefelUniform { n }
            | DesignTemplate::Confounded { n } => *n,
        }
    }

    fn spec(&self, n: usize, p: usize, rho: f64, s: usize, seed: u64) -> Result<DesignSpec> {
        let kind = match self {
            DesignTemplate::IidGaussian { .. } => DesignKind::IidGaussian,
            DesignTemplate::ConstantCorrelation { .. } => DesignKind::ConstantCorrelation { rho },
            DesignTemplate::Covariance { sigma, .. } => DesignKind::Covariance {
                sigma: sigma.clone(),
            },
            DesignTemplate::StiefelUniform { .. } => DesignKind::StiefelUniform,
            DesignTemplate::Confounded { .. } => DesignKind::Covariance {
                sigma: matrix_to_rows(&confounded_covariance(p, s, rho)?),
            },
        };
        Ok(DesignSpec { kind, n, p, seed })
    }
}

fn default_rho_grid() -> Vec<f64> {
    vec![0.0]
}
fn default_magnitude() -> f64 {
    10.0
}
fn default_sigma2() -> f64 {
    1.0
}
fn default_methods() -> Vec<Method> {
    vec![Method::StandardLasso, Method::PreconditionedLasso]
}
fn default_seed() -> u64 {
    42
}
fn default_num_pairs() -> usize {
    10_000
}
fn default_df_max() -> usize {
    40
}
fn default_first_df() -> usize {
    10
}
fn default_grid_size() -> usize {
    crate::lasso::DEFAULT_GRID_SIZE
}
fn default_q_max() -> usize {
    30
}
fn default_true() -> bool {
    true
}
fn default_tol() -> f64 {
    crate::lasso::DEFAULT_TOL
}
fn default_max_iter() -> usize {
    crate::lasso::DEFAULT_MAX_ITER
}

/// Declarative description of one study. Unknown keys are rejected when
/// parsed from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub study: Study,
    pub design: DesignTemplate,
    pub p_grid: Vec<usize>,
    #[serde(default = "default_rho_grid")]
    pub rho_grid: Vec<f64>,
    #[serde(default)]
    pub s: usize,
    #[serde(default = "default_magnitude")]
    pub beta_magnitude: f64,
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    pub replicates: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_seed")]
    pub master_seed: u64,

    /// Column pairs sampled for correlation and coherence statistics.
    #[serde(default = "default_num_pairs")]
    pub num_pairs: usize,
    /// Largest model size scored by OLS-BIC.
    #[serde(default = "default_df_max")]
    pub df_max: usize,
    /// Model size targeted by the first-with-df rule.
    #[serde(default = "default_first_df")]
    pub first_df: usize,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    /// Defaults to 1e-4 when n > p, else 1e-3.
    #[serde(default)]
    pub lambda_min_ratio: Option<f64>,
    /// Largest leading support size in the IC study.
    #[serde(default = "default_q_max")]
    pub q_max: usize,
    /// Fixed penalty for the recovery-rate study; defaults to √(log n / n).
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Row counts for the coherence study; defaults to the design's `n`.
    #[serde(default)]
    pub n_grid: Option<Vec<usize>>,
    /// Fit an intercept in the OLS-BIC refits.
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl ExperimentConfig {
    /// Config with every optional knob at its default.
    pub fn new(study: Study, design: DesignTemplate, p_grid: Vec<usize>, replicates: usize) -> Self {
        ExperimentConfig {
            study,
            design,
            p_grid,
            rho_grid: default_rho_grid(),
            s: 0,
            beta_magnitude: default_magnitude(),
            sigma2: default_sigma2(),
            replicates,
            methods: default_methods(),
            master_seed: default_seed(),
            num_pairs: default_num_pairs(),
            df_max: default_df_max(),
            first_df: default_first_df(),
            grid_size: default_grid_size(),
            lambda_min_ratio: None,
            q_max: default_q_max(),
            lambda: None,
            n_grid: None,
            intercept: true,
            tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if self.p_grid.is_empty() || self.rho_grid.is_empty() {
            return bad("p_grid and rho_grid must be nonempty");
        }
        if self.methods.is_empty() {
            return bad("methods must be nonempty");
        }
        if self.design.n() == 0 || self.p_grid.contains(&0) {
            return bad("n and every p must be at least 1");
        }
        if self.n_grid.as_ref().is_some_and(|g| g.is_empty() || g.contains(&0)) {
            return bad("n_grid must be nonempty and positive");
        }
        if !(self.sigma2 >= 0.0) {
            return bad("sigma2 must be >= 0");
        }
        if self.grid_size < 2 {
            return bad("grid_size must be at least 2");
        }
        Ok(())
    }

    fn path_options(&self, n: usize, p: usize, stop_at_active: Option<usize>) -> PathOptions {
        let mut opts = PathOptions::for_shape(n, p);
        opts.grid_size = self.grid_size;
        if let Some(r) = self.lambda_min_ratio {
            opts.lambda_min_ratio = r;
        }
        opts.solver = LassoOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        };
        opts.stop_at_active = stop_at_active;
        opts
    }
}

macro_rules! metrics {
    ($($name:ident),* $(,)?) => {
        /// Numeric columns of a result row; `None` where a study does not
        /// produce the quantity.
        #[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
        pub struct Metrics {
            $(pub $name: Option<f64>,)*
        }

        impl Metrics {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($name)),*];

            pub fn values(&self) -> Vec<Option<f64>> {
                vec![$(self.$name),*]
            }

            pub fn from_values(values: &[Option<f64>]) -> Self {
                let mut it = values.iter().copied();
                Metrics { $($name: it.next().flatten(),)* }
            }
        }
    };
}

metrics!(
    false_negatives,
    false_positives,
    l2_error,
    df,
    recovered,
    lambda,
    ic_score_before,
    ic_score_after,
    ic_diff,
    mean_cor_before,
    sd_cor_before,
    mean_cor_after,
    sd_cor_after,
    coherence_max,
    coherence_q99,
    cor_max,
    cor_q99,
    bound,
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub study: Study,
    pub series: Series,
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    /// Leading support size (IC study).
    pub q: Option<usize>,
    /// Position on the λ grid (recovery-rate study, standard Lasso).
    pub grid_index: Option<usize>,
    /// `None` for aggregate rows.
    pub replicate: Option<usize>,
    /// Replicate rows averaged into this row (1 for a replicate row).
    pub count: usize,
    /// Failed replicates in this row's (n, p, ρ) cell.
    pub failures: usize,
    /// Set when `p` is close to `n`, where preconditioning is known to
    /// amplify noise.
    pub near_square: bool,
    pub metrics: Metrics,
    pub runtime_seconds: f64,
}

impl ResultRow {
    fn new(study: Study, series: Series, task: &Task) -> Self {
        ResultRow {
            study,
            series,
            n: task.n,
            p: task.p,
            rho: task.rho,
            q: None,
            grid_index: None,
            replicate: Some(task.replicate),
            count: 1,
            failures: 0,
            near_square: near_square(task.n, task.p),
            metrics: Metrics::default(),
            runtime_seconds: 0.0,
        }
    }

    pub fn is_aggregate(&self) -> bool {
        self.replicate.is_none()
    }

    fn group_key(&self) -> GroupKey {
        (self.series, self.n, self.p, self.rho.to_bits(), self.q, self.grid_index)
    }
}

type GroupKey = (Series, usize, usize, u64, Option<usize>, Option<usize>);

/// `p` within a factor of two of `n`.
pub fn near_square(n: usize, p: usize) -> bool {
    2 * p >= n && p <= 2 * n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub study: Study,
    /// Replicate rows in task order, followed by aggregate rows in key order.
    pub rows: Vec<ResultRow>,
    pub failed_replicates: usize,
    pub total_replicates: usize,
}

impl ExperimentResult {
    pub fn replicate_rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| !r.is_aggregate())
    }

    pub fn aggregate_rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| r.is_aggregate())
    }

    /// The aggregate row for a series at `(p, ρ)` and optional `q`.
    pub fn aggregate(&self, series: Series, p: usize, rho: f64, q: Option<usize>) -> Option<&ResultRow> {
        self.aggregate_rows().find(|r| {
            r.series == series && r.p == p && r.rho == rho && r.q == q && r.grid_index.is_none()
        })
    }

    /// Writes the table as CSV. With `timing = false` the runtime column is
    /// written as zero, making repeated runs byte-identical.
    pub fn write_csv<W: Write>(&self, writer: W, timing: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = vec![
            "study", "series", "n", "p", "rho", "q", "grid_index", "replicate", "count", "failures",
            "near_square",
        ];
        header.extend_from_slice(Metrics::NAMES);
        header.push("runtime_seconds");
        w.write_record(&header)?;
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        for row in &self.rows {
            let mut rec = vec![
                row.study.name().to_string(),
                row.series.name().to_string(),
                row.n.to_string(),
                row.p.to_string(),
                row.rho.to_string(),
                opt(row.q),
                opt(row.grid_index),
                row.replicate.map(|r| r.to_string()).unwrap_or_else(|| "mean".into()),
                row.count.to_string(),
                row.failures.to_string(),
                row.near_square.to_string(),
            ];
            rec.extend(
                row.metrics
                    .values()
                    .into_iter()
                    .map(|v| v.map(|x| x.to_string()).unwrap_or_default()),
            );
            rec.push(if timing { row.runtime_seconds.to_string() } else { "0".into() });
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self, timing: bool) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, timing)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// One replicate at one grid cell.
#[derive(Debug, Clone, Copy)]
struct Task {
    n: usize,
    p: usize,
    rho: f64,
    replicate: usize,
    seed: u64,
}

fn tasks(config: &ExperimentConfig) -> Vec<Task> {
    let n_grid = match (&config.n_grid, config.study) {
        (Some(g), Study::StiefelCoherence) => g.clone(),
        _ => vec![config.design.n()],
    };
    let mut out = Vec::new();
    for &n in &n_grid {
        for &p in &config.p_grid {
            for &rho in &config.rho_grid {
                for replicate in 0..config.replicates {
                    let seed = derive_seed(
                        config.master_seed,
                        &[config.study.code(), n as u64, p as u64, rho.to_bits(), replicate as u64],
                    );
                    out.push(Task {
                        n,
                        p,
                        rho,
                        replicate,
                        seed,
                    });
                }
            }
        }
    }
    out
}

fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("failed to build thread pool")
}

/// Runs `task_fn` on every task in parallel and merges the rows in task
/// order, then appends aggregates.
fn execute<F>(config: &ExperimentConfig, task_fn: F) -> Result<ExperimentResult>
where
    F: Fn(&ExperimentConfig, &Task) -> Result<Vec<ResultRow>> + Sync,
{
    config.validate()?;
    let all = tasks(config);
    let outcomes: Vec<(Task, Result<Vec<ResultRow>>)> = thread_pool().install(|| {
        all.par_iter()
            .map(|task| {
                let start = Instant::now();
                let rows = task_fn(config, task).map(|mut rows| {
                    let secs = start.elapsed().as_secs_f64();
                    for r in &mut rows {
                        r.runtime_seconds = secs;
                    }
                    rows
                });
                (*task, rows)
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut failures: BTreeMap<(usize, usize, u64), usize> = BTreeMap::new();
    let mut failed = 0;
    for (task, outcome) in outcomes {
        match outcome {
            Ok(r) => rows.extend(r),
            Err(e) => {
                log::warn!(
                    "{}: replicate {} at n = {}, p = {}, rho = {} failed: {e}",
                    config.study.name(),
                    task.replicate,
                    task.n,
                    task.p,
                    task.rho
                );
                failed += 1;
                *failures.entry((task.n, task.p, task.rho.to_bits())).or_default() += 1;
            }
        }
    }
    let total = all.len();
    if failed as f64 > MAX_FAILURE_FRACTION * total as f64 {
        return Err(Error::ExperimentFailed { failed, total });
    }
    let aggregates = aggregate(&rows, &failures);
    rows.extend(aggregates);
    Ok(ExperimentResult {
        study: config.study,
        rows,
        failed_replicates: failed,
        total_replicates: total,
    })
}

/// Mean of every metric over the replicate rows sharing a group key.
pub fn aggregate_rows(rows: &[ResultRow]) -> Vec<ResultRow> {
    aggregate(rows, &BTreeMap::new())
}

fn aggregate(rows: &[ResultRow], failures: &BTreeMap<(usize, usize, u64), usize>) -> Vec<ResultRow> {
    let mut groups: BTreeMap<GroupKey, Vec<&ResultRow>> = BTreeMap::new();
    for row in rows.iter().filter(|r| !r.is_aggregate()) {
        groups.entry(row.group_key()).or_default().push(row);
    }
    groups
        .into_values()
        .map(|members| {
            let first = members[0];
            let k = Metrics::NAMES.len();
            let mut sums = vec![0.0; k];
            let mut counts = vec![0usize; k];
            for m in &members {
                for (i, v) in m.metrics.values().into_iter().enumerate() {
                    if let Some(v) = v {
                        sums[i] += v;
                        counts[i] += 1;
                    }
                }
            }
            let means: Vec<Option<f64>> = sums
                .iter()
                .zip(&counts)
                .map(|(s, &c)| (c > 0).then(|| s / c as f64))
                .collect();
            ResultRow {
                replicate: None,
                count: members.len(),
                failures: failures
                    .get(&(first.n, first.p, first.rho.to_bits()))
                    .copied()
                    .unwrap_or(0),
                metrics: Metrics::from_values(&means),
                runtime_seconds: members.iter().map(|m| m.runtime_seconds).sum::<f64>()
                    / members.len() as f64,
                ..first.clone()
            }
        })
        .collect()
}

fn check_study(config: &ExperimentConfig, allowed: &[Study]) -> Result<()> {
    if allowed.contains(&config.study) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "study {} cannot be run by this runner",
            config.study.name()
        )))
    }
}

/// Dispatches to the runner for `config.study`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    match config.study {
        Study::CorrelationReduction => run_correlation_reduction(config),
        Study::BicSweep | Study::FirstDfSweep => run_recovery_sweep(config),
        Study::StiefelIcStudy => run_stiefel_ic_study(config),
        Study::RecoveryRate => run_recovery_rate(config),
        Study::StiefelCoherence => run_stiefel_coherence(config),
    }
}

fn leading_support(s: usize, p: usize) -> Option<SupportSet> {
    (s > 0 && s < p).then(|| SupportSet::leading(s, p).ok()).flatten()
}

/// Pairwise column correlations of `X` and `F X`, and IC scores of both for
/// the leading `s` columns.
pub fn run_correlation_reduction(config: &ExperimentConfig) -> Result<ExperimentResult> {
    check_study(config, &[Study::CorrelationReduction])?;
    execute(config, |cfg, task| {
        let spec = cfg
            .design
            .spec(task.n, task.p, task.rho, cfg.s, derive_seed(task.seed, &[0]))?;
        let x = sample_design(&spec)?;
        let fx = precondition_design(&x, DEFAULT_RANK_TOLERANCE)?;
        let total_pairs = task.p * (task.p - 1) / 2;
        let pairs = sample_column_pairs(
            task.p,
            cfg.num_pairs.min(total_pairs),
            derive_seed(task.seed, &[1]),
        )?;
        let (mb, sb) = mean_sd(&correlations_for_pairs(&x, &pairs)?);
        let (ma, sa) = mean_sd(&correlations_for_pairs(&fx, &pairs)?);
        let mut row = ResultRow::new(Study::CorrelationReduction, Series::Design, task);
        row.metrics.mean_cor_before = Some(mb);
        row.metrics.sd_cor_before = Some(sb);
        row.metrics.mean_cor_after = Some(ma);
        row.metrics.sd_cor_after = Some(sa);
        if let Some(support) = leading_support(cfg.s, task.p) {
            let before = ic_score(&x, &support)?;
            let after = ic_score(&fx, &support)?;
            row.metrics.ic_score_before = Some(before);
            row.metrics.ic_score_after = Some(after);
            row.metrics.ic_diff = Some(before - after);
        }
        Ok(vec![row])
    })
}

/// Simulated regression for one replicate: design, leading-support truth and
/// Gaussian noise.
fn simulate_problem(cfg: &ExperimentConfig, task: &Task) -> Result<RegressionProblem> {
    let spec = cfg
        .design
        .spec(task.n, task.p, task.rho, cfg.s, derive_seed(task.seed, &[0]))?;
    let x = sample_design(&spec)?;
    let beta = sample_beta_star(task.p, cfg.s, cfg.beta_magnitude, 0, false)?;
    let noise = sample_noise(task.n, cfg.sigma2, derive_seed(task.seed, &[2]))?;
    let y = &x * &beta + noise;
    RegressionProblem::new(x, y)?.with_truth(beta, cfg.sigma2)
}

/// Largest tolerated deviation of the preconditioned design from orthonormal
/// rows or columns.
const ORTHONORMALITY_TOL: f64 = 1e-8;

/// The design and response a method fits on.
fn method_data(
    method: Method,
    problem: &RegressionProblem,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    match method {
        Method::StandardLasso => Ok((problem.x().clone(), problem.y().clone())),
        Method::PreconditionedLasso => {
            let t = puffer_transform(problem, DEFAULT_RANK_TOLERANCE, 0.0)?;
            let err = t.orthonormality_error();
            if err >= ORTHONORMALITY_TOL {
                return Err(Error::InvalidArgument(format!(
                    "preconditioned design deviates from orthonormal by {err:.3e}"
                )));
            }
            let (x, y) = t.to_problem()?.into_parts();
            Ok((x, y))
        }
    }
}

/// Sign-recovery sweep over `(p, ρ)` with OLS-BIC (`BicSweep`) or
/// first-model-with-`first_df`-predictors (`FirstDfSweep`) tuning.
///
/// Both methods see the same draw of `X` and `Y` within a replicate; OLS
/// refits always use the original data.
pub fn run_recovery_sweep(config: &ExperimentConfig) -> Result<ExperimentResult> {
    check_study(config, &[Study::BicSweep, Study::FirstDfSweep])?;
    for &p in &config.p_grid {
        if near_square(config.design.n(), p) {
            log::warn!(
                "p = {p} is close to n = {}: the preconditioner can amplify noise in this regime",
                config.design.n()
            );
        }
    }
    execute(config, |cfg, task| {
        let problem = simulate_problem(cfg, task)?;
        let beta_star = problem.beta_star().expect("simulated truth").clone();
        let mut rows = Vec::new();
        for &method in &cfg.methods {
            let (x, y) = method_data(method, &problem)?;
            let stop = match cfg.study {
                Study::BicSweep => cfg.df_max + 10,
                _ => cfg.first_df,
            };
            let path = lasso_path(&x, &y, cfg.path_options(task.n, task.p, Some(stop)))?;
            let chosen = match cfg.study {
                Study::BicSweep => {
                    ols_bic_select(&path, problem.x(), problem.y(), cfg.df_max, cfg.intercept)?
                }
                _ => first_with_df(&path, cfg.first_df)?,
            };
            let sol = &path.solutions[chosen.path_index];
            let report = sign_report(&sol.beta_hat, beta_star.as_slice(), 0.0)?;
            let mut row = ResultRow::new(cfg.study, method.into(), task);
            row.metrics.false_negatives = Some(report.false_negatives as f64);
            row.metrics.false_positives = Some(report.false_positives as f64);
            row.metrics.l2_error = Some(report.l2_error);
            row.metrics.df = Some(chosen.df as f64);
            row.metrics.recovered = Some(f64::from(u8::from(report.sign_match)));
            row.metrics.lambda = Some(chosen.chosen_lambda);
            rows.push(row);
        }
        Ok(rows)
    })
}

/// IC scores of centred and scaled Gaussian designs and of their Stiefel
/// projections, for leading supports of size `1..=q_max`.
pub fn run_stiefel_ic_study(config: &ExperimentConfig) -> Result<ExperimentResult> {
    check_study(config, &[Study::StiefelIcStudy])?;
    execute(config, |cfg, task| {
        let spec = DesignSpec {
            kind: DesignKind::IidGaussian,
            n: task.n,
            p: task.p,
            seed: derive_seed(task.seed, &[0]),
        };
        let x = sample_design(&spec)?;
        let v = precondition_design(&x, DEFAULT_RANK_TOLERANCE)?;
        let xc = center_and_scale(&x)?;
        let vc = center_and_scale(&v)?;
        let mut rows = Vec::new();
        for q in 1..=cfg.q_max.min(task.p - 1) {
            let support = SupportSet::leading(q, task.p)?;
            let scores = ic_score(&xc, &support).and_then(|a| Ok((a, ic_score(&vc, &support)?)));
            match scores {
                Ok((before, after)) => {
                    let mut row = ResultRow::new(Study::StiefelIcStudy, Series::Design, task);
                    row.q = Some(q);
                    row.metrics.ic_score_before = Some(before);
                    row.metrics.ic_score_after = Some(after);
                    row.metrics.ic_diff = Some(before - after);
                    rows.push(row);
                }
                Err(Error::SingularGram { condition }) => {
                    log::warn!("IC study: q = {q} skipped, singular Gram ({condition:.3e})");
                }
                Err(e) => return Err(e),
            }
        }
        Ok(rows)
    })
}

/// `√(log n / n)`.
pub fn default_recovery_lambda(n: usize) -> f64 {
    let n = n as f64;
    (n.ln() / n).sqrt()
}

/// Fixed-λ sign recovery of the preconditioned Lasso on designs that violate
/// the irrepresentable condition, against the standard Lasso at every point
/// of its λ grid.
pub fn run_recovery_rate(config: &ExperimentConfig) -> Result<ExperimentResult> {
    check_study(config, &[Study::RecoveryRate])?;
    if config.p_grid.iter().any(|&p| p > config.design.n()) {
        return Err(Error::InvalidArgument(
            "recovery-rate study needs n >= p".into(),
        ));
    }
    execute(config, |cfg, task| {
        let problem = simulate_problem(cfg, task)?;
        let beta_star = problem.beta_star().expect("simulated truth").clone();
        let support = SupportSet::from_coefficients(beta_star.as_slice());
        let ic = ic_score(problem.x(), &support)?;
        if ic <= 1.0 {
            return Err(Error::InvalidSpec(format!(
                "design satisfies the irrepresentable condition (score {ic:.3})"
            )));
        }
        let lambda = cfg.lambda.unwrap_or_else(|| default_recovery_lambda(task.n));
        let mut rows = Vec::new();
        for &method in &cfg.methods {
            match method {
                Method::PreconditionedLasso => {
                    let t = puffer_transform(&problem, DEFAULT_RANK_TOLERANCE, 0.0)?;
                    let d_min = t.decomposition().singular_values().min();
                    let opts = LassoOptions {
                        tol: cfg.tol,
                        max_iter: cfg.max_iter,
                    };
                    let sol = solve_lasso(t.x_tilde(), t.y_tilde(), lambda, opts, None)?;
                    let report = sign_report(&sol.beta_hat, beta_star.as_slice(), 0.0)?;
                    let mut row = ResultRow::new(Study::RecoveryRate, Series::PreconditionedLasso, task);
                    row.metrics.recovered = Some(f64::from(u8::from(report.sign_match)));
                    row.metrics.false_negatives = Some(report.false_negatives as f64);
                    row.metrics.false_positives = Some(report.false_positives as f64);
                    row.metrics.l2_error = Some(report.l2_error);
                    row.metrics.lambda = Some(lambda);
                    row.metrics.ic_score_before = Some(ic);
                    row.metrics.bound = Some(theorem1_bound(
                        task.n,
                        task.p,
                        lambda,
                        cfg.sigma2,
                        d_min * d_min / task.n as f64,
                    ));
                    rows.push(row);
                }
                Method::StandardLasso => {
                    let path = lasso_path(
                        problem.x(),
                        problem.y(),
                        cfg.path_options(task.n, task.p, None),
                    )?;
                    for (k, sol) in path.solutions.iter().enumerate() {
                        let report = sign_report(&sol.beta_hat, beta_star.as_slice(), 0.0)?;
                        let mut row = ResultRow::new(Study::RecoveryRate, Series::StandardLasso, task);
                        row.grid_index = Some(k);
                        row.metrics.recovered = Some(f64::from(u8::from(report.sign_match)));
                        row.metrics.lambda = Some(sol.lambda);
                        row.metrics.ic_score_before = Some(ic);
                        rows.push(row);
                    }
                }
            }
        }
        Ok(rows)
    })
}

/// Nearest-rank quantile of unsorted data.
pub fn quantile(values: &[f64], prob: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((prob * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Absolute inner products and absolute cosines of the given column pairs.
pub fn pair_coherence(x: &DMatrix<f64>, pairs: &[(usize, usize)]) -> (Vec<f64>, Vec<f64>) {
    let norms: Vec<f64> = (0..x.ncols())
        .map(|j| {
            let c = column(x, j);
            dot(c, c).sqrt()
        })
        .collect();
    pairs
        .iter()
        .map(|&(i, j)| {
            let ip = dot(column(x, i), column(x, j)).abs();
            (ip, ip / (norms[i] * norms[j]))
        })
        .unzip()
}

/// Coherence of uniform Stiefel matrices next to iid Gaussian matrices with
/// entries of variance `1/p` (rows of unit expected length).
pub fn run_stiefel_coherence(config: &ExperimentConfig) -> Result<ExperimentResult> {
    check_study(config, &[Study::StiefelCoherence])?;
    execute(config, |cfg, task| {
        if task.n > task.p {
            return Err(Error::InvalidSpec(format!(
                "coherence study needs n <= p, got n = {}, p = {}",
                task.n, task.p
            )));
        }
        let v = sample_stiefel_uniform(task.n, task.p, derive_seed(task.seed, &[0]))?;
        let g = sample_design(&DesignSpec {
            kind: DesignKind::IidGaussian,
            n: task.n,
            p: task.p,
            seed: derive_seed(task.seed, &[1]),
        })? / (task.p as f64).sqrt();
        let total_pairs = task.p * (task.p - 1) / 2;
        let pairs = sample_column_pairs(
            task.p,
            cfg.num_pairs.min(total_pairs),
            derive_seed(task.seed, &[2]),
        )?;
        let mut rows = Vec::new();
        for (series, m) in [(Series::Stiefel, &v), (Series::Gaussian, &g)] {
            let (ip, cos) = pair_coherence(m, &pairs);
            let mut row = ResultRow::new(Study::StiefelCoherence, series, task);
            row.metrics.coherence_max = Some(ip.iter().copied().fold(0.0, f64::max));
            row.metrics.coherence_q99 = Some(quantile(&ip, 0.99));
            row.metrics.cor_max = Some(cos.iter().copied().fold(0.0, f64::max));
            row.metrics.cor_q99 = Some(quantile(&cos, 0.99));
            rows.push(row);
        }
        Ok(rows)
    })
}
