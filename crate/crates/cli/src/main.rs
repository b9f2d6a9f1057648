//! Command-line front end: fit, detect-outliers, simulate, validate.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;

use rrt_gard::acceptance::{run_criteria, AcceptanceOptions, CriterionResult};
use rrt_gard::baselines::{
    ipod_fit, lad_fit, ls_fit, m_estimate, median, reproject, rmap_fit, sigma_scheme1, sigma_scheme2, ResidualSource,
};
use rrt_gard::bench::boxplot::boxplot_outliers;
use rrt_gard::bench::presets::{preset_grid, PRESETS};
use rrt_gard::bench::runner::{run_monte_carlo, RunOptions};
use rrt_gard::bench::theorem::{validate_theorem2, Theorem2Cell, Theorem2Config};
use rrt_gard::estimate::{MethodInfo, RobustEstimate, SigmaSource};
use rrt_gard::gard::{gard_estimate_with_source, StoppingRule};
use rrt_gard::io::{load_csv_path, load_csv_str, Builtin, Dataset};
use rrt_gard::rrt::{gamma_asymptotics, rrt_gard, AlphaRule, RrtConfig};
use rrt_gard::{Error, RegressionProblem};

use config::FileConfig;

const SCHEMA_VERSION: &str = "1";
const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Parser, Debug)]
#[command(name = "rrt-gard", version, about = "Robust regression with greedy outlier pursuit and residual ratio thresholding")]
struct Cli {
    /// TOML file with default values for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a regression and report coefficients and the outlier support.
    Fit(FitArgs),
    /// Fit, then flag observations whose residual falls outside the box-plot fences.
    DetectOutliers(FitArgs),
    /// Run a Monte Carlo preset and write JSON and CSV reports.
    Simulate(SimulateArgs),
    /// Run the acceptance criteria and write a verdict file.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MethodArg {
    RrtGard,
    Gard,
    Ls,
    Lad,
    MEst,
    Rmap,
    Ipod,
}

impl MethodArg {
    fn needs_sigma(self) -> bool {
        matches!(self, MethodArg::Gard | MethodArg::Rmap | MethodArg::Ipod)
    }

    fn name(self) -> &'static str {
        match self {
            MethodArg::RrtGard => "rrt-gard",
            MethodArg::Gard => "gard",
            MethodArg::Ls => "ls",
            MethodArg::Lad => "lad",
            MethodArg::MEst => "m-est",
            MethodArg::Rmap => "rmap",
            MethodArg::Ipod => "ipod",
        }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    /// CSV path, or a built-in dataset: stackloss, stars, brainbody, ar2000.
    dataset: String,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// RRT-GARD significance level [default: 0.1].
    #[arg(long)]
    alpha: Option<f64>,
    /// Known inlier noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    /// Estimate σ: 1 = LAD residual median, 2 = MAD of the M-estimation residual.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    sigma_scheme: Option<u8>,
    /// Re-projection threshold multiplier for rmap and ipod.
    #[arg(long)]
    gamma: Option<f64>,
    /// Prepend an all-ones column [default: true].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    intercept: Option<bool>,
    /// Response column [default: last numeric column].
    #[arg(long)]
    response: Option<String>,
    /// Comma-separated predictor columns [default: all other numeric columns].
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    /// Take natural logs of every selected column.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    log_transform: Option<bool>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// One of fig1, fig3, fig4, fig5, fig6, fig7a, gamma-asymptotics.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Run only these criteria (comma-separated ids).
    #[arg(long, value_delimiter = ',')]
    criteria: Option<Vec<u8>>,
    /// Override every Monte Carlo trial count; bounds widen accordingly.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Failure split by exit code: 2 for usage, 1 for everything else.
enum Failure {
    Usage(String),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Run(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e.into())
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = FileConfig::load_optional(cli.config.as_deref())
        .map_err(Failure::Usage)
        .and_then(|file| match cli.command {
            Command::Fit(a) => cmd_fit(&a, &file, false),
            Command::DetectOutliers(a) => cmd_fit(&a, &file, true),
            Command::Simulate(a) => cmd_simulate(&a, &file),
            Command::Validate(a) => cmd_validate(&a, &file),
        });
    match outcome {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

impl FileConfig {
    fn load_optional(path: Option<&Path>) -> Result<Self, String> {
        match path {
            Some(p) => Self::load(p).map_err(|e| format!("{e:#}")),
            None => Ok(Self::default()),
        }
    }
}

fn parse_method(name: &str) -> Result<MethodArg, Failure> {
    match MethodArg::from_str(name, true) {
        Ok(m) => Ok(m),
        Err(_) => usage(format!("unknown method '{name}'")),
    }
}

fn load_dataset(args: &FitArgs, file: &FileConfig) -> Result<Dataset, Failure> {
    let path = Path::new(&args.dataset);
    let builtin = Builtin::from_name(&args.dataset).filter(|_| !path.exists());
    let mut spec = builtin.map(Builtin::spec).unwrap_or_default();
    if let Some(r) = args.response.clone().or_else(|| file.response.clone()) {
        spec.response = Some(r);
    }
    if let Some(f) = args.features.clone().or_else(|| file.features.clone()) {
        spec.features = Some(f);
    }
    if let Some(i) = args.intercept.or(file.intercept) {
        spec.intercept = i;
    }
    if let Some(l) = args.log_transform.or(file.log_transform) {
        spec.log_transform = l;
    }
    let loaded = match builtin {
        Some(b) => b.csv().and_then(|text| load_csv_str(&text, &spec)),
        None => load_csv_path(path, &spec),
    };
    Ok(loaded.with_context(|| format!("loading {}", args.dataset))?)
}

/// σ handed to a σ-driven method and where it came from.
fn resolve_sigma(method: MethodArg, args: &FitArgs, file: &FileConfig, problem: &RegressionProblem) -> Result<Option<(f64, SigmaSource)>, Failure> {
    let sigma = args.sigma.or(file.sigma);
    let scheme = args.sigma_scheme.or(file.sigma_scheme);
    if !method.needs_sigma() {
        return Ok(None);
    }
    match (sigma, scheme) {
        (Some(_), Some(_)) => usage("give either --sigma or --sigma-scheme, not both"),
        (Some(s), None) if !(s > 0.0 && s.is_finite()) => usage(format!("--sigma must be positive, got {s}")),
        (Some(s), None) => Ok(Some((s, SigmaSource::True))),
        (None, Some(1)) => Ok(Some((sigma_scheme1(problem)?.sigma_hat, SigmaSource::Scheme1))),
        (None, Some(2)) => Ok(Some((sigma_scheme2(problem, ResidualSource::default())?.sigma_hat, SigmaSource::Scheme2))),
        (None, Some(k)) => usage(format!("--sigma-scheme must be 1 or 2, got {k}")),
        (None, None) => usage(format!("method {} needs --sigma or --sigma-scheme", method.name())),
    }
}

fn or_best(problem: &RegressionProblem, name: &str, r: rrt_gard::Result<RobustEstimate>) -> rrt_gard::Result<RobustEstimate> {
    match r {
        Err(Error::NotConverged { best_beta, .. }) if best_beta.len() == problem.p() => {
            let mut info = MethodInfo::new(name, SigmaSource::None);
            info.flags.push("not-converged".into());
            Ok(RobustEstimate::from_beta(problem, DVector::from_vec(best_beta), info))
        }
        other => other,
    }
}

fn run_method(
    method: MethodArg,
    problem: &RegressionProblem,
    alpha: f64,
    sigma: Option<(f64, SigmaSource)>,
    gamma: Option<f64>,
) -> rrt_gard::Result<RobustEstimate> {
    let est = match (method, sigma) {
        (MethodArg::RrtGard, _) => rrt_gard(problem, RrtConfig::with_alpha(alpha))?,
        (MethodArg::Ls, _) => ls_fit(problem)?,
        (MethodArg::Lad, _) => or_best(problem, "lad", lad_fit(problem))?,
        (MethodArg::MEst, _) => m_estimate(problem)?,
        (MethodArg::Gard, Some((s, src))) => gard_estimate_with_source(problem, StoppingRule::KnownVariance(s * s), src)?,
        (MethodArg::Rmap, Some((s, src))) => or_best(problem, "rmap", rmap_fit(problem, s, src))?,
        (MethodArg::Ipod, Some((s, src))) => ipod_fit(problem, s, src)?,
        (_, None) => unreachable!("sigma resolved before dispatch"),
    };
    match (gamma, sigma) {
        (Some(g), Some((s, _))) => reproject(problem, &est, g, s),
        _ => Ok(est),
    }
}

#[derive(Serialize)]
struct Coefficient {
    name: String,
    value: f64,
}

#[derive(Serialize)]
struct OutlierEntry {
    /// 1-based observation number.
    index: usize,
    value: f64,
}

#[derive(Serialize)]
struct ResidualSummary {
    norm: f64,
    max_abs: f64,
    median_abs: f64,
}

#[derive(Serialize)]
struct Metadata {
    name: String,
    hyperparameters: Vec<(String, f64)>,
    sigma_source: SigmaSource,
    sigma: Option<f64>,
    alpha: Option<f64>,
    alpha_used: Option<f64>,
    fallback_engaged: Option<bool>,
    k_rrt: Option<usize>,
    flags: Vec<String>,
}

#[derive(Serialize)]
struct FitReport {
    schema_version: &'static str,
    command: &'static str,
    dataset: String,
    method: MethodArg,
    n: usize,
    p: usize,
    beta_hat: Vec<Coefficient>,
    /// 1-based observation numbers.
    support: Vec<usize>,
    outliers: Vec<OutlierEntry>,
    residual: ResidualSummary,
    metadata: Metadata,
}

#[derive(Serialize)]
struct Fences {
    lo: f64,
    hi: f64,
    q1: f64,
    median: f64,
    q3: f64,
}

#[derive(Serialize)]
struct DetectReport {
    schema_version: &'static str,
    command: &'static str,
    dataset: String,
    method: MethodArg,
    /// 1-based observation numbers outside the fences.
    flagged: Vec<usize>,
    fences: Fences,
    residuals: Vec<f64>,
    metadata: Metadata,
}

fn metadata(est: &RobustEstimate, sigma: Option<(f64, SigmaSource)>) -> Metadata {
    let rrt = est.method.rrt;
    Metadata {
        name: est.method.name.clone(),
        hyperparameters: est.method.hyperparameters.clone(),
        sigma_source: est.method.sigma_source,
        sigma: sigma.map(|s| s.0),
        alpha: rrt.map(|r| r.alpha),
        alpha_used: rrt.map(|r| r.alpha_used),
        fallback_engaged: rrt.map(|r| r.fallback_engaged),
        k_rrt: rrt.map(|r| r.k_rrt),
        flags: est.method.flags.clone(),
    }
}

fn emit<T: Serialize>(value: &T, output: Option<&Path>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).context("serializing JSON")?;
    match output {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    return Err(anyhow::Error::from(e).context("writing stdout").into())
                }
                _ => {}
            }
        }
    }
    Ok(())
}

fn cmd_fit(args: &FitArgs, file: &FileConfig, detect: bool) -> Result<ExitCode, Failure> {
    let method = match (args.method, &file.method) {
        (Some(m), _) => m,
        (None, Some(name)) => parse_method(name)?,
        (None, None) => MethodArg::RrtGard,
    };
    let alpha = args.alpha.or(file.alpha).unwrap_or(DEFAULT_ALPHA);
    if !(alpha > 0.0 && alpha.is_finite()) {
        return usage(format!("--alpha must be positive, got {alpha}"));
    }
    let gamma = args.gamma.or(file.gamma);
    if let Some(g) = gamma {
        if !matches!(method, MethodArg::Rmap | MethodArg::Ipod) {
            return usage("--gamma applies only to rmap and ipod");
        }
        if !(g > 0.0 && g.is_finite()) {
            return usage(format!("--gamma must be positive, got {g}"));
        }
    }
    let data = load_dataset(args, file)?;
    let problem = &data.problem;
    let sigma = resolve_sigma(method, args, file, problem)?;
    let est = run_method(method, problem, alpha, sigma, gamma)?;
    let residual: Vec<f64> = est.regression_residual(problem).iter().copied().collect();
    let meta = metadata(&est, sigma);
    if detect {
        let bp = boxplot_outliers(&residual)?;
        let report = DetectReport {
            schema_version: SCHEMA_VERSION,
            command: "detect-outliers",
            dataset: args.dataset.clone(),
            method,
            flagged: bp.flagged.iter().map(|i| i + 1).collect(),
            fences: Fences {
                lo: bp.lo,
                hi: bp.hi,
                q1: bp.q1,
                median: bp.median,
                q3: bp.q3,
            },
            residuals: residual,
            metadata: meta,
        };
        emit(&report, args.output.as_deref())?;
    } else {
        let abs: Vec<f64> = residual.iter().map(|r| r.abs()).collect();
        let report = FitReport {
            schema_version: SCHEMA_VERSION,
            command: "fit",
            dataset: args.dataset.clone(),
            method,
            n: problem.n(),
            p: problem.p(),
            beta_hat: data
                .columns
                .iter()
                .zip(est.beta_hat.iter())
                .map(|(name, &value)| Coefficient { name: name.clone(), value })
                .collect(),
            support: est.support.iter().map(|i| i + 1).collect(),
            outliers: est.g_hat.iter().map(|&(i, value)| OutlierEntry { index: i + 1, value }).collect(),
            residual: ResidualSummary {
                norm: abs.iter().map(|a| a * a).sum::<f64>().sqrt(),
                max_abs: abs.iter().copied().fold(0.0, f64::max),
                median_abs: median(&abs).unwrap_or(0.0),
            },
            metadata: meta,
        };
        emit(&report, args.output.as_deref())?;
    }
    Ok(ExitCode::SUCCESS)
}

/// One `x,method,metric,value` row.
struct Row(f64, String, &'static str, f64);

fn rows_to_csv(rows: &[Row]) -> String {
    let mut out = String::from("x,method,metric,value\n");
    for Row(x, m, metric, v) in rows {
        out.push_str(&format!("{x},{m},{metric},{v}\n"));
    }
    out
}

#[derive(Serialize)]
struct Fig1Report {
    schema_version: &'static str,
    preset: &'static str,
    seed: u64,
    trials: usize,
    cells: Vec<Theorem2Cell>,
}

#[derive(Serialize)]
struct GammaCurve {
    rule: String,
    d_lim: f64,
    points: Vec<(usize, f64)>,
}

#[derive(Serialize)]
struct GammaReport {
    schema_version: &'static str,
    preset: &'static str,
    curves: Vec<GammaCurve>,
}

#[derive(Serialize)]
struct GridReport<'a> {
    schema_version: &'static str,
    preset: &'a str,
    #[serde(flatten)]
    report: rrt_gard::bench::ExperimentReport,
}

const GAMMA_N_GRID: [usize; 9] = [20, 50, 100, 200, 500, 1000, 2000, 5000, 10_000];

fn gamma_curves() -> rrt_gard::Result<Vec<GammaCurve>> {
    let mut curves = Vec::new();
    let rules = [
        ("alpha=0.1", AlphaRule::Constant(0.1)),
        ("alpha=1/ln(n)", AlphaRule::InverseLog),
        ("alpha=1/n", AlphaRule::InversePoly(1.0)),
        ("alpha=exp(-0.5n)", AlphaRule::Exponential(-0.5)),
        ("alpha=exp(-n^2/100)", AlphaRule::SquaredExponential(100.0)),
    ];
    for d_lim in [0.0, 0.4, 0.8] {
        for (label, rule) in rules {
            curves.push(GammaCurve {
                rule: label.into(),
                d_lim,
                points: gamma_asymptotics(rule, d_lim, &GAMMA_N_GRID)?,
            });
        }
    }
    Ok(curves)
}

fn write_outputs(dir: &Path, stem: &str, json: &impl Serialize, csv: &str) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    emit(json, Some(&dir.join(format!("{stem}.json"))))?;
    let path = dir.join(format!("{stem}.csv"));
    std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs, file: &FileConfig) -> Result<ExitCode, Failure> {
    let Some(preset) = args.preset.clone().or_else(|| file.preset.clone()) else {
        return usage(format!("--preset is required; one of {}", PRESETS.join(", ")));
    };
    let seed = args.seed.or(file.seed).unwrap_or(7);
    let workers = args.workers.or(file.workers);
    let out_dir = args.out_dir.clone().or_else(|| file.out_dir.clone()).unwrap_or_else(|| PathBuf::from("results"));
    let trials = args.trials.or(file.trials);
    if trials == Some(0) {
        return usage("--trials must be positive");
    }
    match preset.as_str() {
        "fig1" => {
            let cfg = Theorem2Config {
                trials: trials.unwrap_or(1000),
                seed,
                workers,
                ..Theorem2Config::default()
            };
            let cells = validate_theorem2(&cfg)?;
            let mut rows = Vec::new();
            println!("{:>8} {:>6} {:>10} {:>10} {:>10}", "sigma2", "alpha", "violation", "kmin=kg", "last=kmin");
            for c in &cells {
                println!(
                    "{:>8} {:>6} {:>10.4} {:>10.4} {:>10.4}",
                    c.sigma2, c.alpha, c.violation_rate, c.k_min_eq_kg_rate, c.last_crossing_eq_kmin_rate
                );
                let m = format!("alpha={}", c.alpha);
                rows.push(Row(c.sigma2, m.clone(), "violation_rate", c.violation_rate));
                rows.push(Row(c.sigma2, m.clone(), "k_min_eq_kg_rate", c.k_min_eq_kg_rate));
                rows.push(Row(c.sigma2, m.clone(), "last_crossing_eq_kmin_rate", c.last_crossing_eq_kmin_rate));
                rows.push(Row(c.sigma2, m, "median_rr_at_kmin", c.median_rr_at_kmin));
            }
            let report = Fig1Report {
                schema_version: SCHEMA_VERSION,
                preset: "fig1",
                seed,
                trials: cfg.trials,
                cells,
            };
            write_outputs(&out_dir, "fig1", &report, &rows_to_csv(&rows))?;
        }
        "gamma-asymptotics" => {
            let curves = gamma_curves()?;
            let mut rows = Vec::new();
            for c in &curves {
                let m = format!("{}[d_lim={}]", c.rule, c.d_lim);
                let last = c.points.last().map_or(f64::NAN, |p| p.1);
                println!("{m:<32} gamma(n={}) = {last:.6}", GAMMA_N_GRID[GAMMA_N_GRID.len() - 1]);
                rows.extend(c.points.iter().map(|&(n, g)| Row(n as f64, m.clone(), "gamma", g)));
            }
            let report = GammaReport {
                schema_version: SCHEMA_VERSION,
                preset: "gamma-asymptotics",
                curves,
            };
            write_outputs(&out_dir, "gamma-asymptotics", &report, &rows_to_csv(&rows))?;
        }
        name => {
            let Some(grid) = preset_grid(name) else {
                return usage(format!("unknown preset '{name}'; one of {}", PRESETS.join(", ")));
            };
            let report = run_monte_carlo(
                &grid,
                RunOptions {
                    trials: trials.unwrap_or(100),
                    seed,
                    workers,
                },
            )?;
            println!("{:>8} {:<40} {:>12} {:>8} {:>10}", grid.x_label, "method", "mse", "exact", "sigma_err");
            for r in &report.records {
                let sigma_err = r.sigma_rel_error_mean.map_or("-".to_string(), |e| format!("{e:.4}"));
                println!("{:>8} {:<40} {:>12.4e} {:>8.3} {:>10}", r.x, r.method, r.mse_mean, r.support_exact_rate, sigma_err);
            }
            let csv = report.to_csv();
            let wrapped = GridReport {
                schema_version: SCHEMA_VERSION,
                preset: name,
                report,
            };
            write_outputs(&out_dir, name, &wrapped, &csv)?;
        }
    }
    println!("wrote {}", out_dir.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct Verdict {
    schema_version: &'static str,
    seed: u64,
    trials_override: Option<usize>,
    passed: bool,
    criteria: Vec<CriterionResult>,
}

fn cmd_validate(args: &ValidateArgs, file: &FileConfig) -> Result<ExitCode, Failure> {
    let defaults = AcceptanceOptions::default();
    let trials = args.trials.or(file.trials);
    if trials == Some(0) {
        return usage("--trials must be positive");
    }
    let opts = AcceptanceOptions {
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        trials,
        workers: args.workers.or(file.workers),
        ..defaults
    };
    let ids = args.criteria.clone().or_else(|| file.criteria.clone()).unwrap_or_default();
    let results = run_criteria(&ids, &opts);
    for r in &results {
        println!("{}", r.line());
    }
    let passed = results.iter().all(|r| r.passed);
    let verdict = Verdict {
        schema_version: SCHEMA_VERSION,
        seed: opts.seed,
        trials_override: trials,
        passed,
        criteria: results,
    };
    let dir = args.out_dir.clone().or_else(|| file.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    emit(&verdict, Some(&dir.join("verdict.json")))?;
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
