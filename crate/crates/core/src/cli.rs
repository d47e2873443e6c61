//! The `puffer` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
//! Every failure prints one line `ERROR <code>: <message>` on stderr.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::designs::{derive_seed, sample_beta_star, sample_design, sample_noise, DesignKind, DesignSpec};
use crate::diagnostics::{
    center_and_scale, diagnostics_report, ic_score, theorem1_bound, theorem3_bound,
    DiagnosticsReport,
};
use crate::error::Error;
use crate::experiments::{default_recovery_lambda, run_experiment, Study};
use crate::io::{
    default_names, load_dataset, read_config, save_dataset_csv, to_json_string, write_json,
    write_result_csv, ColumnRef, Dataset,
};
use crate::lasso::{lasso_path, solve_lasso, LassoOptions, PathOptions};
use crate::precondition::{puffer_transform, thin_svd, DEFAULT_RANK_TOLERANCE};
use crate::problem::SupportSet;
use crate::selection::{first_with_df, ols_bic_select, SelectionRule};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Seed used when `--seed` is absent.
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "puffer", version, about = "Preconditioned Lasso for correlated designs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the preconditioned problem (F X, F Y) and its singular values.
    Precondition(PreconditionArgs),
    /// Fit the Lasso at one λ or along a path with a selection rule.
    Fit(FitArgs),
    /// IC score, η, C_min, Ψ and recovery bounds before and after preconditioning.
    Diagnose(DiagnoseArgs),
    /// Run a simulation study from a JSON config.
    Simulate(SimulateArgs),
    /// Irrepresentable-condition score of a design and support.
    IcScore(IcScoreArgs),
    /// Generate a random design, optionally with a simulated response.
    Sample(SampleArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Headed numeric CSV.
    #[arg(long)]
    input: PathBuf,
    /// Response column: a header name, or a one-based position.
    #[arg(long = "y-col")]
    y_col: Option<String>,
}

#[derive(Debug, Args)]
struct PreconditionArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    output: PathBuf,
    /// Ridge term δ: weights D/(D²+δ) instead of 1/D.
    #[arg(long)]
    tikhonov: Option<f64>,
    /// Singular values below this fraction of the largest are dropped.
    #[arg(long, default_value_t = DEFAULT_RANK_TOLERANCE)]
    rank_tol: f64,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("mode").required(true).args(["lambda", "path"])))]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Fit on F X and F Y.
    #[arg(long)]
    precondition: bool,
    #[arg(long)]
    tikhonov: Option<f64>,
    /// Single penalty.
    #[arg(long)]
    lambda: Option<f64>,
    /// Fit a path and choose a model with --select.
    #[arg(long)]
    path: bool,
    #[arg(long, default_value_t = crate::lasso::DEFAULT_GRID_SIZE)]
    grid: usize,
    #[arg(long)]
    lambda_min_ratio: Option<f64>,
    /// `ols-bic` or `first-df K`.
    #[arg(long, num_args = 1..=2, value_names = ["RULE", "K"], default_values_t = ["ols-bic".to_string()])]
    select: Vec<String>,
    /// Largest model size scored by ols-bic.
    #[arg(long, default_value_t = 40)]
    df_max: usize,
    /// Refit without an intercept in ols-bic.
    #[arg(long)]
    no_intercept: bool,
    #[arg(long, default_value_t = crate::lasso::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = crate::lasso::DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// JSON output file; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SupportArgs {
    /// One-based column positions among the predictors, e.g. 1,2,5.
    #[arg(long)]
    support: String,
    /// Signs for the support, e.g. +,+,-. All positive when absent.
    #[arg(long, allow_hyphen_values = true)]
    signs: Option<String>,
    /// Centre columns and scale them to unit standard deviation first.
    #[arg(long)]
    center_scale: bool,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    support: SupportArgs,
    /// Defaults to √(log n / n).
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long)]
    tikhonov: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IcScoreArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    support: SupportArgs,
    /// Score F X instead of X.
    #[arg(long)]
    precondition: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Result CSV; a `<out>.meta.json` summary is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Omit the timestamp and runtimes so repeated runs are byte-identical.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SampleKind {
    Gaussian,
    Stiefel,
    ConstantCor,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(value_enum)]
    kind: SampleKind,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Also simulate `y` with this many leading nonzero coefficients.
    #[arg(long)]
    s: Option<usize>,
    #[arg(long, default_value_t = 10.0)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Lib(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Lib(_) => EXIT_DATA,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Lib(e) => e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Parses `args` (program name first), runs the command and returns the exit
/// code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(stderr, "ERROR {EXIT_USAGE}: {first}");
            return EXIT_USAGE;
        }
    };
    let outcome = match cli.command {
        Command::Precondition(a) => precondition(a),
        Command::Fit(a) => fit(a, stdout),
        Command::Diagnose(a) => diagnose(a, stdout),
        Command::Simulate(a) => simulate(a),
        Command::IcScore(a) => ic_score_cmd(a, stdout),
        Command::Sample(a) => sample(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            let code = e.code();
            let msg = e.message().replace('\n', " ");
            let _ = writeln!(stderr, "ERROR {code}: {msg}");
            code
        }
    }
}

fn load(input: &InputArgs, need_y: bool) -> CliResult<Dataset> {
    let Some(y) = input.y_col.as_deref() else {
        if need_y {
            return Err(CliError::Usage("--y-col is required for this command".into()));
        }
        return Ok(load_dataset(&input.input, None)?);
    };
    // a header name wins over a numeric position
    match load_dataset(&input.input, Some(&ColumnRef::Name(y.to_string()))) {
        Err(Error::MissingColumn(_)) => match y.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(load_dataset(&input.input, Some(&ColumnRef::Index(k - 1)))?),
            _ => Err(Error::MissingColumn(y.to_string()).into()),
        },
        other => Ok(other?),
    }
}

fn emit(json: String, output: Option<&Path>, stdout: &mut dyn Write) -> CliResult<()> {
    match output {
        Some(path) => std::fs::write(path, json).map_err(|e| Error::io(path, e))?,
        None => stdout
            .write_all(json.as_bytes())
            .map_err(|e| Error::io("<stdout>", e))?,
    }
    Ok(())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn check_delta(delta: Option<f64>) -> CliResult<f64> {
    match delta {
        None => Ok(0.0),
        Some(d) if d >= 0.0 && d.is_finite() => Ok(d),
        Some(d) => Err(CliError::Usage(format!("--tikhonov must be >= 0, got {d}"))),
    }
}

#[derive(Serialize)]
struct SvdSidecar<'a> {
    n: usize,
    p: usize,
    rank: usize,
    rank_tolerance: f64,
    tikhonov_delta: f64,
    singular_values: &'a [f64],
}

fn precondition(a: PreconditionArgs) -> CliResult<()> {
    let delta = check_delta(a.tikhonov)?;
    let data = load(&a.input, true)?;
    let y_name = data.y_name.clone();
    let names = data.x_names.clone();
    let problem = data.into_problem()?;
    let t = puffer_transform(&problem, a.rank_tol, delta)?;
    save_dataset_csv(&a.output, y_name.as_deref(), Some(t.y_tilde()), &names, t.x_tilde())?;
    let d = t.decomposition();
    write_json(
        &sidecar(&a.output, ".svd.json"),
        &SvdSidecar {
            n: d.n(),
            p: d.p(),
            rank: d.rank(),
            rank_tolerance: d.rank_tolerance(),
            tikhonov_delta: d.tikhonov_delta(),
            singular_values: d.singular_values().as_slice(),
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct SelectionSummary {
    rule: SelectionRule,
    df: usize,
    path_index: usize,
    path_length: usize,
    bic_scores: Option<std::collections::BTreeMap<usize, f64>>,
}

#[derive(Serialize)]
struct FitOutput {
    n: usize,
    p: usize,
    preconditioned: bool,
    lambda: f64,
    names: Vec<String>,
    coefficients: Vec<f64>,
    /// One-based predictor positions.
    support: Vec<usize>,
    active_count: usize,
    converged: bool,
    kkt_residual: f64,
    selection: Option<SelectionSummary>,
}

fn parse_rule(select: &[String]) -> CliResult<(SelectionRule, usize)> {
    match select {
        [r] if r == "ols-bic" => Ok((SelectionRule::OlsBic, 0)),
        [r, k] if r == "first-df" => k
            .parse::<usize>()
            .ok()
            .filter(|&k| k >= 1)
            .map(|k| (SelectionRule::FirstWithDf, k))
            .ok_or_else(|| CliError::Usage(format!("first-df needs a positive K, got {k:?}"))),
        [r] if r == "first-df" => Err(CliError::Usage("first-df needs K, e.g. --select first-df 10".into())),
        _ => Err(CliError::Usage(format!(
            "--select must be `ols-bic` or `first-df K`, got {:?}",
            select.join(" ")
        ))),
    }
}

fn fit(a: FitArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let delta = check_delta(a.tikhonov)?;
    let rule = if a.path { Some(parse_rule(&a.select)?) } else { None };
    if let Some(l) = a.lambda {
        if !(l > 0.0) || !l.is_finite() {
            return Err(CliError::Usage(format!("--lambda must be positive, got {l}")));
        }
    }
    let data = load(&a.input, true)?;
    let names = data.x_names.clone();
    let problem = data.into_problem()?;
    let (n, p) = (problem.n(), problem.p());
    let (x, y) = if a.precondition {
        let t = puffer_transform(&problem, DEFAULT_RANK_TOLERANCE, delta)?;
        let (x, y) = t.to_problem()?.into_parts();
        (x, y)
    } else {
        (problem.x().clone(), problem.y().clone())
    };
    let solver = LassoOptions {
        tol: a.tol,
        max_iter: a.max_iter,
    };

    let (solution, selection) = match (a.lambda, rule) {
        (Some(lambda), _) => (solve_lasso(&x, &y, lambda, solver, None)?, None),
        (None, Some((rule, k))) => {
            let mut opts = PathOptions::for_shape(n, p);
            opts.grid_size = a.grid;
            opts.solver = solver;
            if let Some(r) = a.lambda_min_ratio {
                opts.lambda_min_ratio = r;
            }
            let path = lasso_path(&x, &y, opts)?;
            let chosen = match rule {
                SelectionRule::OlsBic => {
                    ols_bic_select(&path, problem.x(), problem.y(), a.df_max, !a.no_intercept)?
                }
                SelectionRule::FirstWithDf => first_with_df(&path, k)?,
            };
            let summary = SelectionSummary {
                rule,
                df: chosen.df,
                path_index: chosen.path_index,
                path_length: path.solutions.len(),
                bic_scores: chosen.bic_scores,
            };
            (path.solutions[chosen.path_index].clone(), Some(summary))
        }
        (None, None) => unreachable!("clap requires --lambda or --path"),
    };
    let out = FitOutput {
        n,
        p,
        preconditioned: a.precondition,
        lambda: solution.lambda,
        names,
        support: solution.support().iter().map(|j| j + 1).collect(),
        coefficients: solution.beta_hat,
        active_count: solution.active_count,
        converged: solution.converged,
        kkt_residual: solution.kkt_residual,
        selection,
    };
    emit(to_json_string(&out)?, a.output.as_deref(), stdout)
}

fn parse_support(args: &SupportArgs, p: usize) -> CliResult<SupportSet> {
    let idx: Vec<usize> = args
        .support
        .split(',')
        .map(|t| match t.trim().parse::<usize>() {
            Ok(k) if k >= 1 => Ok(k - 1),
            _ => Err(CliError::Usage(format!(
                "--support takes one-based positions, got {t:?}"
            ))),
        })
        .collect::<CliResult<_>>()?;
    let signs: Vec<i8> = match &args.signs {
        None => vec![1; idx.len()],
        Some(s) => s
            .split(',')
            .map(|t| match t.trim() {
                "+" | "+1" | "1" => Ok(1),
                "-" | "-1" => Ok(-1),
                other => Err(CliError::Usage(format!("sign must be + or -, got {other:?}"))),
            })
            .collect::<CliResult<_>>()?,
    };
    if signs.len() != idx.len() {
        return Err(CliError::Usage(format!(
            "{} signs for {} support positions",
            signs.len(),
            idx.len()
        )));
    }
    let mut pairs: Vec<(usize, i8)> = idx.into_iter().zip(signs).collect();
    pairs.sort_unstable();
    let (idx, signs) = pairs.into_iter().unzip();
    Ok(SupportSet::new(idx, signs, p)?)
}

fn design(input: &InputArgs, center: bool) -> CliResult<DMatrix<f64>> {
    let data = load(input, false)?;
    Ok(if center { center_and_scale(&data.x)? } else { data.x })
}

#[derive(Serialize)]
struct DiagnoseOutput {
    n: usize,
    p: usize,
    /// One-based predictor positions.
    support: Vec<usize>,
    signs: Vec<i8>,
    lambda: f64,
    sigma2: f64,
    center_scale: bool,
    before: DiagnosticsReport,
    after: DiagnosticsReport,
    /// Low-dimensional bound, reported when n ≥ p.
    theorem1_bound: Option<f64>,
    /// High-dimensional bound, reported when p > n.
    theorem3_bound: Option<f64>,
}

fn diagnose(a: DiagnoseArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let delta = check_delta(a.tikhonov)?;
    if !(a.sigma2 > 0.0) || !a.sigma2.is_finite() {
        return Err(CliError::Usage(format!("--sigma2 must be positive, got {}", a.sigma2)));
    }
    let x = design(&a.input, a.support.center_scale)?;
    let (n, p) = x.shape();
    let support = parse_support(&a.support, p)?;
    let lambda = a.lambda.unwrap_or_else(|| default_recovery_lambda(n));
    let dec = thin_svd(&x, DEFAULT_RANK_TOLERANCE)?.with_tikhonov(delta)?;
    let fx = {
        let w = dec.inverse_weights();
        let scaled = dec.u() * DMatrix::from_diagonal(&w.component_mul(dec.singular_values()));
        scaled * dec.v().transpose()
    };
    let before = diagnostics_report(&x, &support, &dec, None, lambda, a.sigma2)?;
    let after = diagnostics_report(
        &fx,
        &support,
        &dec,
        None,
        lambda,
        a.sigma2 * dec.noise_scale_max(),
    )?;
    let d_min = dec.singular_values().min();
    let out = DiagnoseOutput {
        n,
        p,
        support: support.indices().iter().map(|j| j + 1).collect(),
        signs: support.signs().to_vec(),
        lambda,
        sigma2: a.sigma2,
        center_scale: a.support.center_scale,
        theorem1_bound: (n >= p).then(|| theorem1_bound(n, p, lambda, a.sigma2, d_min * d_min / n as f64)),
        theorem3_bound: (p > n)
            .then(|| theorem3_bound(n, p, lambda, a.sigma2, after.eta, d_min * d_min / p as f64)),
        before,
        after,
    };
    emit(to_json_string(&out)?, a.output.as_deref(), stdout)
}

#[derive(Serialize)]
struct IcScoreOutput {
    ic_score: f64,
    preconditioned: bool,
}

fn ic_score_cmd(a: IcScoreArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let mut x = design(&a.input, a.support.center_scale)?;
    let support = parse_support(&a.support, x.ncols())?;
    if a.precondition {
        x = crate::precondition::precondition_design(&x, DEFAULT_RANK_TOLERANCE)?;
    }
    let out = IcScoreOutput {
        ic_score: ic_score(&x, &support)?,
        preconditioned: a.precondition,
    };
    emit(to_json_string(&out)?, a.output.as_deref(), stdout)
}

#[derive(Serialize)]
struct SimulateMeta {
    study: Study,
    master_seed: u64,
    rows: usize,
    failed_replicates: usize,
    total_replicates: usize,
    /// Seconds since the Unix epoch.
    timestamp: Option<u64>,
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let mut config = read_config(&a.config)?;
    if let Some(seed) = a.seed {
        config.master_seed = seed;
    }
    let result = run_experiment(&config)?;
    write_result_csv(&a.out, &result, !a.no_timestamp)?;
    let timestamp = (!a.no_timestamp).then(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    write_json(
        &sidecar(&a.out, ".meta.json"),
        &SimulateMeta {
            study: config.study,
            master_seed: config.master_seed,
            rows: result.rows.len(),
            failed_replicates: result.failed_replicates,
            total_replicates: result.total_replicates,
            timestamp,
        },
    )?;
    Ok(())
}

fn sample(a: SampleArgs) -> CliResult<()> {
    let kind = match a.kind {
        SampleKind::Gaussian => DesignKind::IidGaussian,
        SampleKind::Stiefel => DesignKind::StiefelUniform,
        SampleKind::ConstantCor => DesignKind::ConstantCorrelation { rho: a.rho },
    };
    let x = sample_design(&DesignSpec {
        kind,
        n: a.n,
        p: a.p,
        seed: derive_seed(a.seed, &[0]),
    })?;
    let y = match a.s {
        None => None,
        Some(s) => {
            let beta = sample_beta_star(a.p, s, a.beta, 0, false)?;
            Some(&x * beta + sample_noise(a.n, a.sigma2, derive_seed(a.seed, &[1]))?)
        }
    };
    save_dataset_csv(&a.output, Some("y"), y.as_ref(), &default_names(a.p), &x)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("puffer").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_one() {
        let (code, _, err) = run_args(&["fit"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.starts_with("ERROR 1:"));
        assert_eq!(err.lines().count(), 1);
        let (code, _, _) = run_args(&["no-such-command"]);
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = run_args(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("simulate"));
    }

    #[test]
    fn rule_parsing() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert!(matches!(parse_rule(&s(&["ols-bic"])), Ok((SelectionRule::OlsBic, _))));
        assert!(matches!(
            parse_rule(&s(&["first-df", "10"])),
            Ok((SelectionRule::FirstWithDf, 10))
        ));
        assert!(parse_rule(&s(&["first-df"])).is_err());
        assert!(parse_rule(&s(&["bic"])).is_err());
    }

    #[test]
    fn support_parsing() {
        let args = SupportArgs {
            support: "5,1,2".into(),
            signs: Some("-,+,+".into()),
            center_scale: false,
        };
        let s = parse_support(&args, 6).unwrap();
        assert_eq!(s.indices(), &[0, 1, 4]);
        assert_eq!(s.signs(), &[1, 1, -1]);
        let args = SupportArgs {
            support: "0".into(),
            signs: None,
            center_scale: false,
        };
        assert!(matches!(parse_support(&args, 3), Err(CliError::Usage(_))));
    }
}
