//! Monte Carlo sweeps over synthetic problems and estimators.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    ipod_fit, lad_fit, ls_fit, m_estimate, reproject, rmap_fit, sigma_scheme1, sigma_scheme2, ResidualSource,
    REPROJECT_GAMMA,
};
use crate::bench::synthetic::{gen_synthetic_with, SyntheticSpec};
use crate::error::{domain, Error, Result};
use crate::estimate::{MethodInfo, RobustEstimate, SigmaSource};
use crate::gard::{gard_estimate_with_source, gard_run, StoppingRule};
use crate::linalg::{joint_ls, GroundTruth, RegressionProblem};
use crate::rrt::{rrt_gard_fit_with_table, rrt_threshold_table, select_k_rrt, RrtConfig, RrtThresholdTable};

/// σ supplied to methods that need one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaChoice {
    True,
    Scheme1,
    Scheme2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Method {
    RrtGard { alpha: f64 },
    /// RRT-GARD at the α, among `alphas`, with the smallest coefficient error.
    /// Needs β, so it is an oracle reference.
    BestAlpha { alphas: Vec<f64> },
    /// GARD stopped at `‖r‖ ≤ ε^σ`.
    Gard,
    Rmap { reproject: Option<f64> },
    Ipod { reproject: Option<f64> },
    MEst,
    Lad,
    Ls,
    /// LS on the true inliers only.
    LsOracle,
}

impl Method {
    fn needs_sigma(&self) -> bool {
        matches!(self, Method::Gard | Method::Rmap { .. } | Method::Ipod { .. })
    }

    /// Default re-projection (γ = 3) for RMAP and IPOD.
    pub fn rmap_reprojected() -> Self {
        Method::Rmap {
            reproject: Some(REPROJECT_GAMMA),
        }
    }

    pub fn ipod_reprojected() -> Self {
        Method::Ipod {
            reproject: Some(REPROJECT_GAMMA),
        }
    }
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    /// Ignored by σ-free methods.
    pub sigma: SigmaChoice,
    /// Multiplier applied to the σ handed to the method.
    pub sigma_scale: f64,
}

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            sigma: SigmaChoice::True,
            sigma_scale: 1.0,
        }
    }

    pub fn with_sigma(self, sigma: SigmaChoice) -> Self {
        Self { sigma, ..self }
    }

    pub fn label(&self) -> String {
        let base = match &self.method {
            Method::RrtGard { alpha } => format!("rrt-gard(alpha={alpha})"),
            Method::BestAlpha { .. } => "rrt-gard(best-alpha)".into(),
            Method::Gard => "gard".into(),
            Method::Rmap { reproject: None } => "rmap".into(),
            Method::Rmap { reproject: Some(_) } => "rmap+reproject".into(),
            Method::Ipod { reproject: None } => "ipod".into(),
            Method::Ipod { reproject: Some(_) } => "ipod+reproject".into(),
            Method::MEst => "m-est".into(),
            Method::Lad => "lad".into(),
            Method::Ls => "ls".into(),
            Method::LsOracle => "ls-of".into(),
        };
        if !self.method.needs_sigma() {
            return base;
        }
        let src = match self.sigma {
            SigmaChoice::True => "true",
            SigmaChoice::Scheme1 => "scheme1",
            SigmaChoice::Scheme2 => "scheme2",
        };
        if self.sigma_scale == 1.0 {
            format!("{base}[sigma={src}]")
        } else {
            format!("{base}[sigma={}x{src}]", self.sigma_scale)
        }
    }
}

/// One point on a sweep's x-axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub x: f64,
    pub spec: SyntheticSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub name: String,
    /// Meaning of `Cell::x`, such as `"k_g/n"`.
    pub x_label: String,
    pub cells: Vec<Cell>,
    pub methods: Vec<MethodConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub trials: usize,
    pub seed: u64,
    /// Worker threads; `Some(1)` runs on the calling thread. Results do not
    /// depend on this value.
    pub workers: Option<usize>,
}

/// Aggregate over trials of one method in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub x: f64,
    pub method: String,
    pub trials: usize,
    /// Mean of `‖β̂ − β‖₂²`.
    pub mse_mean: f64,
    /// Fraction of trials with `Ŝ = S_g`.
    pub support_exact_rate: f64,
    /// Fraction of trials with `Ŝ ⊄ S_g`.
    pub false_discovery_rate: f64,
    /// Fraction of trials with `S_g ⊄ Ŝ`.
    pub missed_rate: f64,
    /// Fraction of GARD traces whose minimal superset index equals `k_g`.
    pub k_min_eq_kg_rate: Option<f64>,
    /// Fraction of traces with `RR(k) < Γ(k)` for some `k > k_min`.
    pub rr_bound_violation_rate: Option<f64>,
    /// Mean of `σ̂ / σ` for σ-estimating methods.
    pub sigma_ratio_mean: Option<f64>,
    /// Mean of `|σ̂ / σ − 1|`.
    pub sigma_rel_error_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub seed: u64,
    pub trials: usize,
    pub grid: String,
    pub x_label: String,
    pub x_values: Vec<f64>,
    pub crate_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub environment: Environment,
    pub records: Vec<MethodRecord>,
}

impl ExperimentReport {
    pub fn record(&self, x: f64, method: &str) -> Option<&MethodRecord> {
        self.records.iter().find(|r| r.x == x && r.method == method)
    }

    /// Long-format curve rows `x,method,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,method,metric,value\n");
        for r in &self.records {
            let mut row = |metric: &str, v: f64| out.push_str(&format!("{},{},{metric},{}\n", r.x, r.method, v));
            row("mse", r.mse_mean);
            row("support_exact_rate", r.support_exact_rate);
            row("false_discovery_rate", r.false_discovery_rate);
            row("missed_rate", r.missed_rate);
            for (name, v) in [
                ("k_min_eq_kg_rate", r.k_min_eq_kg_rate),
                ("rr_bound_violation_rate", r.rr_bound_violation_rate),
                ("sigma_ratio_mean", r.sigma_ratio_mean),
                ("sigma_rel_error_mean", r.sigma_rel_error_mean),
            ] {
                if let Some(v) = v {
                    row(name, v);
                }
            }
        }
        out
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for one trial of one cell.
pub fn trial_rng(master: u64, cell: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(master ^ splitmix64(cell as u64)));
    rng.set_stream(trial as u64);
    rng
}

/// Maps `f` over `0..count`, in parallel when enabled, preserving order.
pub fn map_trials<T, F>(count: usize, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if workers != Some(1) {
            let run = || (0..count).into_par_iter().map(&f).collect::<Result<Vec<T>>>();
            return match workers {
                Some(w) => rayon::ThreadPoolBuilder::new()
                    .num_threads(w)
                    .build()
                    .map_err(|e| Error::Capacity(e.to_string()))?
                    .install(run),
                None => run(),
            };
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = workers;
    (0..count).map(f).collect()
}

/// Per-trial metrics of one method.
#[derive(Debug, Clone, Copy, Default)]
struct Outcome {
    sq_error: f64,
    exact: bool,
    false_disc: bool,
    missed: bool,
    k_min_eq_kg: Option<bool>,
    sigma_ratio: Option<f64>,
}

fn outcome(est: &RobustEstimate, truth: &GroundTruth) -> Outcome {
    let support = &est.support;
    let truth_set = &truth.outlier_support;
    Outcome {
        sq_error: est.squared_error(&truth.beta),
        exact: support == truth_set,
        false_disc: support.iter().any(|i| truth_set.binary_search(i).is_err()),
        missed: truth_set.iter().any(|i| support.binary_search(i).is_err()),
        ..Outcome::default()
    }
}

/// σ estimates shared by all methods within one trial.
struct SigmaCache<'a> {
    problem: &'a RegressionProblem,
    truth: &'a GroundTruth,
    scheme1: Option<f64>,
    scheme2: Option<f64>,
}

impl SigmaCache<'_> {
    fn get(&mut self, choice: SigmaChoice) -> Result<(f64, SigmaSource)> {
        Ok(match choice {
            SigmaChoice::True => (self.truth.sigma2.sqrt(), SigmaSource::True),
            SigmaChoice::Scheme1 => {
                if self.scheme1.is_none() {
                    self.scheme1 = Some(sigma_scheme1(self.problem)?.sigma_hat);
                }
                (self.scheme1.unwrap_or(0.0), SigmaSource::Scheme1)
            }
            SigmaChoice::Scheme2 => {
                if self.scheme2.is_none() {
                    self.scheme2 = Some(sigma_scheme2(self.problem, ResidualSource::MEst)?.sigma_hat);
                }
                (self.scheme2.unwrap_or(0.0), SigmaSource::Scheme2)
            }
        })
    }
}

/// Recovers the best iterate from a non-convergence error.
fn or_best(problem: &RegressionProblem, name: &str, r: Result<RobustEstimate>) -> Result<RobustEstimate> {
    match r {
        Err(Error::NotConverged { best_beta, .. }) if best_beta.len() == problem.p() => {
            let mut info = MethodInfo::new(name, SigmaSource::None);
            info.flags.push("not-converged".into());
            Ok(RobustEstimate::from_beta(problem, DVector::from_vec(best_beta), info))
        }
        other => other,
    }
}

fn best_alpha(problem: &RegressionProblem, truth: &GroundTruth, tables: &[RrtThresholdTable]) -> Result<Outcome> {
    let k_max = problem.n() - problem.p() - 1;
    let trace = gard_run(problem, StoppingRule::FullTrace(k_max))?;
    let mut by_k: BTreeMap<usize, Outcome> = BTreeMap::new();
    let mut best: Option<Outcome> = None;
    for table in tables {
        let k = select_k_rrt(trace.residual_ratios(), table)?.k_rrt;
        let o = match by_k.get(&k) {
            Some(o) => *o,
            None => {
                let joint = joint_ls(problem, trace.support(k))?;
                let o = outcome(&RobustEstimate::from_joint(joint, MethodInfo::new("best-alpha", SigmaSource::None)), truth);
                by_k.insert(k, o);
                o
            }
        };
        if best.is_none_or(|b| o.sq_error < b.sq_error) {
            best = Some(o);
        }
    }
    best.ok_or_else(|| Error::Domain("best-alpha needs at least one alpha".into()))
}

fn evaluate(
    config: &MethodConfig,
    tables: &[RrtThresholdTable],
    problem: &RegressionProblem,
    truth: &GroundTruth,
    sigmas: &mut SigmaCache,
) -> Result<Outcome> {
    let sigma_of = |sigmas: &mut SigmaCache| -> Result<(f64, SigmaSource, Option<f64>)> {
        let (s, src) = sigmas.get(config.sigma)?;
        let s = s * config.sigma_scale;
        let true_sigma = truth.sigma2.sqrt();
        let ratio = (src != SigmaSource::True && true_sigma > 0.0).then(|| s / true_sigma);
        // A vanishing estimate cannot drive a σ rule; use the smallest positive scale.
        Ok((s.max(f64::MIN_POSITIVE), src, ratio))
    };
    let (est, ratio) = match &config.method {
        Method::RrtGard { .. } => {
            let fit = rrt_gard_fit_with_table(problem, tables[0].clone())?;
            let mut o = outcome(&fit.estimate, truth);
            o.k_min_eq_kg = Some(fit.trace.k_min(&truth.outlier_support) == Some(truth.k_g()));
            return Ok(o);
        }
        Method::BestAlpha { .. } => return best_alpha(problem, truth, tables),
        Method::Gard => {
            let (s, src, ratio) = sigma_of(sigmas)?;
            (gard_estimate_with_source(problem, StoppingRule::KnownVariance(s * s), src)?, ratio)
        }
        Method::Rmap { reproject: gamma } => {
            let (s, src, ratio) = sigma_of(sigmas)?;
            let est = or_best(problem, "rmap", rmap_fit(problem, s, src))?;
            match gamma {
                Some(g) => (reproject(problem, &est, *g, s)?, ratio),
                None => (est, ratio),
            }
        }
        Method::Ipod { reproject: gamma } => {
            let (s, src, ratio) = sigma_of(sigmas)?;
            let est = ipod_fit(problem, s, src)?;
            match gamma {
                Some(g) => (reproject(problem, &est, *g, s)?, ratio),
                None => (est, ratio),
            }
        }
        Method::MEst => (m_estimate(problem)?, None),
        Method::Lad => (or_best(problem, "lad", lad_fit(problem))?, None),
        Method::Ls => (ls_fit(problem)?, None),
        Method::LsOracle => {
            let mut est = RobustEstimate::from_joint(
                joint_ls(problem, &truth.outlier_support)?,
                MethodInfo::new("ls-of", SigmaSource::None),
            );
            // The outlier block is known, not estimated.
            est.support = truth.outlier_support.clone();
            (est, None)
        }
    };
    let mut o = outcome(&est, truth);
    o.sigma_ratio = ratio;
    Ok(o)
}

/// Threshold tables for each RRT method's α values; they depend only on `(n, p, α)`.
fn cell_tables(grid: &Grid, spec: &SyntheticSpec) -> Result<Vec<Vec<RrtThresholdTable>>> {
    grid.methods
        .iter()
        .map(|m| match &m.method {
            Method::RrtGard { alpha } => Ok(vec![rrt_threshold_table(spec.n, spec.p, RrtConfig::with_alpha(*alpha))?]),
            Method::BestAlpha { alphas } => alphas
                .iter()
                .map(|&a| rrt_threshold_table(spec.n, spec.p, RrtConfig::with_alpha(a)))
                .collect(),
            _ => Ok(Vec::new()),
        })
        .collect()
}

fn run_trial(grid: &Grid, tables: &[Vec<RrtThresholdTable>], cell_index: usize, trial: usize, seed: u64) -> Result<Vec<Outcome>> {
    let cell = &grid.cells[cell_index];
    let mut rng = trial_rng(seed, cell_index, trial);
    let (problem, truth) = gen_synthetic_with(&cell.spec, &mut rng)?;
    let mut sigmas = SigmaCache {
        problem: &problem,
        truth: &truth,
        scheme1: None,
        scheme2: None,
    };
    grid.methods
        .iter()
        .zip(tables)
        .map(|(m, t)| evaluate(m, t, &problem, &truth, &mut sigmas))
        .collect()
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for v in values {
        sum += v;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

fn aggregate(x: f64, label: String, outcomes: &[Outcome]) -> MethodRecord {
    let n = outcomes.len() as f64;
    let rate = |f: fn(&Outcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as f64 / n;
    MethodRecord {
        x,
        method: label,
        trials: outcomes.len(),
        mse_mean: outcomes.iter().map(|o| o.sq_error).sum::<f64>() / n,
        support_exact_rate: rate(|o| o.exact),
        false_discovery_rate: rate(|o| o.false_disc),
        missed_rate: rate(|o| o.missed),
        k_min_eq_kg_rate: mean_of(outcomes.iter().filter_map(|o| o.k_min_eq_kg.map(f64::from))),
        rr_bound_violation_rate: None,
        sigma_ratio_mean: mean_of(outcomes.iter().filter_map(|o| o.sigma_ratio)),
        sigma_rel_error_mean: mean_of(outcomes.iter().filter_map(|o| o.sigma_ratio.map(|r| (r - 1.0).abs()))),
    }
}

/// Runs every method on `trials` fresh draws per cell. Every method in a
/// trial sees the same draw. The report is a pure function of
/// `(grid, trials, seed)`.
pub fn run_monte_carlo(grid: &Grid, options: RunOptions) -> Result<ExperimentReport> {
    if options.trials == 0 {
        return domain("run_monte_carlo needs at least one trial");
    }
    if grid.methods.is_empty() || grid.cells.is_empty() {
        return domain("grid needs at least one cell and one method");
    }
    for cell in &grid.cells {
        cell.spec.validate()?;
    }
    let mut records = Vec::with_capacity(grid.cells.len() * grid.methods.len());
    for (ci, cell) in grid.cells.iter().enumerate() {
        let tables = cell_tables(grid, &cell.spec)?;
        let per_trial = map_trials(options.trials, options.workers, |t| run_trial(grid, &tables, ci, t, options.seed))?;
        for (mi, m) in grid.methods.iter().enumerate() {
            let outcomes: Vec<Outcome> = per_trial.iter().map(|v| v[mi]).collect();
            records.push(aggregate(cell.x, m.label(), &outcomes));
        }
    }
    Ok(ExperimentReport {
        environment: Environment {
            seed: options.seed,
            trials: options.trials,
            grid: grid.name.clone(),
            x_label: grid.x_label.clone(),
            x_values: grid.cells.iter().map(|c| c.x).collect(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
        },
        records,
    })
}
