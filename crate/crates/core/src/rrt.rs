//! Residual ratio thresholding.
//!
//! For `k` past the first GARD iteration whose support covers every outlier,
//! `RR(k)²` is dominated by a Beta((n-p-k)/2, ½) variable. Thresholding the
//! ratios at a Beta quantile and taking the *last* crossing therefore locates
//! that iteration without knowing σ², `‖w‖₂` or the outlier count.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::estimate::{MethodInfo, RobustEstimate, RrtInfo, SigmaSource};
use crate::gard::{gard_run, GardTrace, StoppingRule};
use crate::linalg::{joint_ls, RegressionProblem};
use crate::numerics::{beta_cdf, beta_inv_cdf, beta_inv_cdf_ln, BetaParams};

pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RrtConfig {
    pub alpha: f64,
    /// Defaults to `n - p - 1` when unset.
    pub k_max: Option<usize>,
}

impl Default for RrtConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            k_max: None,
        }
    }
}

impl RrtConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self { alpha, k_max: None }
    }

    fn resolve_k_max(&self, n: usize, p: usize) -> Result<usize> {
        if n < p + 2 {
            return domain(format!("need n >= p + 2 for residual ratios, got n={n}, p={p}"));
        }
        let bound = n - p - 1;
        match self.k_max {
            None => Ok(bound),
            Some(k) if k >= 1 && k <= bound => Ok(k),
            Some(k) => domain(format!("k_max must be in 1..={bound}, got {k}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrtThresholdTable {
    pub n: usize,
    pub p: usize,
    pub alpha: f64,
    pub k_max: usize,
    /// `Γ(k)` for `k = 1..=k_max`, stored at index `k - 1`.
    pub gamma: Vec<f64>,
}

impl RrtThresholdTable {
    pub fn gamma_at(&self, k: usize) -> f64 {
        self.gamma[k - 1]
    }
}

fn shape(n: usize, p: usize, k: usize) -> Result<BetaParams> {
    BetaParams::new((n - p - k) as f64 / 2.0, 0.5)
}

/// Denominator `k_max (n - k + 1)` of the per-step quantile level.
fn level_scale(n: usize, k: usize, k_max: usize) -> f64 {
    k_max as f64 * (n - k + 1) as f64
}

/// `Γ(k) = √F⁻¹_{(n-p-k)/2, ½}(α / (k_max (n-k+1)))`, with the level capped at 1.
pub fn gamma_single(n: usize, p: usize, k: usize, k_max: usize, alpha: f64) -> Result<f64> {
    let q = (alpha / level_scale(n, k, k_max)).min(1.0);
    Ok(beta_inv_cdf(shape(n, p, k)?, q)?.sqrt())
}

/// [`gamma_single`] taking `ln α`, for α that underflows.
pub fn gamma_single_ln(n: usize, p: usize, k: usize, k_max: usize, ln_alpha: f64) -> Result<f64> {
    let ln_q = (ln_alpha - level_scale(n, k, k_max).ln()).min(0.0);
    Ok(beta_inv_cdf_ln(shape(n, p, k)?, ln_q)?.sqrt())
}

pub fn rrt_threshold_table(n: usize, p: usize, config: RrtConfig) -> Result<RrtThresholdTable> {
    if !(config.alpha >= 0.0) || !config.alpha.is_finite() {
        return domain(format!("alpha must be finite and nonnegative, got {}", config.alpha));
    }
    let k_max = config.resolve_k_max(n, p)?;
    let gamma = (1..=k_max)
        .map(|k| gamma_single(n, p, k, k_max, config.alpha))
        .collect::<Result<Vec<_>>>()?;
    Ok(RrtThresholdTable {
        n,
        p,
        alpha: config.alpha,
        k_max,
        gamma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrtSelection {
    pub k_rrt: usize,
    pub alpha_used: f64,
    pub fallback_engaged: bool,
    /// All `k` (1-based) with `RR(k) ≤ Γ(k)` at `alpha_used`.
    pub crossings: Vec<usize>,
}

fn crossings(ratios: &[f64], table: &RrtThresholdTable) -> Vec<usize> {
    ratios
        .iter()
        .zip(&table.gamma)
        .enumerate()
        .filter(|(_, (rr, g))| rr <= g)
        .map(|(i, _)| i + 1)
        .collect()
}

/// Smallest α at which `RR(k) ≤ Γ^α(k)`, per `k`.
pub fn required_alpha(n: usize, p: usize, k: usize, k_max: usize, ratio: f64) -> Result<f64> {
    let x = (ratio * ratio).clamp(0.0, 1.0);
    Ok(level_scale(n, k, k_max) * beta_cdf(shape(n, p, k)?, x)?)
}

/// Last crossing of the ratios below the thresholds, raising α to the
/// smallest value that produces a crossing when there is none.
pub fn select_k_rrt(ratios: &[f64], table: &RrtThresholdTable) -> Result<RrtSelection> {
    if ratios.len() != table.gamma.len() {
        return domain(format!(
            "ratio sequence has {} entries, threshold table {}",
            ratios.len(),
            table.gamma.len()
        ));
    }
    let found = crossings(ratios, table);
    if let Some(&k_rrt) = found.last() {
        return Ok(RrtSelection {
            k_rrt,
            alpha_used: table.alpha,
            fallback_engaged: false,
            crossings: found,
        });
    }

    let (n, p, k_max) = (table.n, table.p, table.k_max);
    let mut alpha_new = f64::INFINITY;
    for (i, &rr) in ratios.iter().enumerate() {
        alpha_new = alpha_new.min(required_alpha(n, p, i + 1, k_max, rr)?);
    }
    let mut alpha_new = alpha_new.max(table.alpha);
    // The closed-form value sits exactly on the boundary; nudge past rounding.
    for _ in 0..64 {
        let cfg = RrtConfig {
            alpha: alpha_new,
            k_max: Some(k_max),
        };
        let rebuilt = rrt_threshold_table(n, p, cfg)?;
        let found = crossings(ratios, &rebuilt);
        if let Some(&k_rrt) = found.last() {
            return Ok(RrtSelection {
                k_rrt,
                alpha_used: alpha_new,
                fallback_engaged: true,
                crossings: found,
            });
        }
        alpha_new = alpha_new * (1.0 + 1e-12) + f64::MIN_POSITIVE;
    }
    // RR(1) ≤ 1 = Γ^{k_max n}(1) always crosses.
    Ok(RrtSelection {
        k_rrt: 1,
        alpha_used: level_scale(n, 1, k_max),
        fallback_engaged: true,
        crossings: vec![1],
    })
}

/// Everything produced by one RRT-GARD fit.
#[derive(Debug, Clone)]
pub struct RrtGardFit {
    pub estimate: RobustEstimate,
    pub trace: GardTrace,
    pub table: RrtThresholdTable,
    pub selection: RrtSelection,
}

/// Full trace → ratios → last crossing → joint refit.
pub fn rrt_gard_fit(problem: &RegressionProblem, config: RrtConfig) -> Result<RrtGardFit> {
    rrt_gard_fit_with_table(problem, rrt_threshold_table(problem.n(), problem.p(), config)?)
}

/// As [`rrt_gard_fit`] with a table built beforehand for this `(n, p)`.
pub fn rrt_gard_fit_with_table(problem: &RegressionProblem, table: RrtThresholdTable) -> Result<RrtGardFit> {
    if (table.n, table.p) != (problem.n(), problem.p()) {
        return domain(format!(
            "threshold table is for n={}, p={} but the problem has n={}, p={}",
            table.n,
            table.p,
            problem.n(),
            problem.p()
        ));
    }
    let alpha = table.alpha;
    let trace = gard_run(problem, StoppingRule::FullTrace(table.k_max))?;
    let selection = select_k_rrt(trace.residual_ratios(), &table)?;
    let joint = joint_ls(problem, trace.support(selection.k_rrt))?;
    let mut info = MethodInfo::new("rrt-gard", SigmaSource::None).with_param("alpha", alpha);
    info.rrt = Some(RrtInfo {
        alpha,
        alpha_used: selection.alpha_used,
        fallback_engaged: selection.fallback_engaged,
        k_rrt: selection.k_rrt,
        k_max: table.k_max,
    });
    if selection.fallback_engaged {
        info.flags.push("alpha-fallback".into());
    }
    Ok(RrtGardFit {
        estimate: RobustEstimate::from_joint(joint, info),
        trace,
        table,
        selection,
    })
}

pub fn rrt_gard(problem: &RegressionProblem, config: RrtConfig) -> Result<RobustEstimate> {
    Ok(rrt_gard_fit(problem, config)?.estimate)
}

/// How α scales with `n` in asymptotic sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AlphaRule {
    Constant(f64),
    /// `α = 1 / ln n`.
    InverseLog,
    /// `α = n^{-c}`.
    InversePoly(f64),
    /// `α = e^{α_lim n}` with `α_lim < 0`.
    Exponential(f64),
    /// `α = e^{-n² / scale}`.
    SquaredExponential(f64),
}

impl AlphaRule {
    pub fn ln_alpha(&self, n: usize) -> f64 {
        let nf = n as f64;
        match *self {
            AlphaRule::Constant(a) => a.ln(),
            AlphaRule::InverseLog => -nf.ln().ln(),
            AlphaRule::InversePoly(c) => -c * nf.ln(),
            AlphaRule::Exponential(lim) => lim * nf,
            AlphaRule::SquaredExponential(scale) => -nf * nf / scale,
        }
    }
}

/// `p = k_g` used for a given `n` and limiting ratio `(p + k_g) / n`.
/// The floor of 2 keeps the `d_lim = 0` sweep at two predictors and two outliers.
pub fn asymptotic_dims(n: usize, d_lim: f64) -> usize {
    ((d_lim * n as f64 / 2.0).round() as usize).max(2)
}

/// `Γ(k_g)` with `k_max = n - p - 1` along a grid of sample sizes.
pub fn gamma_asymptotics(rule: AlphaRule, d_lim: f64, n_grid: &[usize]) -> Result<Vec<(usize, f64)>> {
    if !(0.0..1.0).contains(&d_lim) {
        return domain(format!("d_lim must be in [0, 1), got {d_lim}"));
    }
    n_grid
        .iter()
        .map(|&n| {
            let pk = asymptotic_dims(n, d_lim);
            if n < 2 * pk + 2 {
                return domain(format!("n={n} too small for p = k_g = {pk}"));
            }
            let k_max = n - pk - 1;
            Ok((n, gamma_single_ln(n, pk, pk, k_max, rule.ln_alpha(n))?))
        })
        .collect()
}
