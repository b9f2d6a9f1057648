//! Empirical checks of the residual ratio theory: the threshold bound on
//! `RR(k)` past the minimal superset, the Beta law of `RR(k)²`, and the
//! bound quantities of the support recovery guarantees.

use serde::{Deserialize, Serialize};

use crate::baselines::median;
use crate::bench::runner::{map_trials, trial_rng};
use crate::bench::synthetic::{gen_synthetic_with, SyntheticSpec};
use crate::error::{domain, Result};
use crate::gard::{epsilon_sigma, gard_run, StoppingRule};
use crate::linalg::{delta_subset, joint_ls, qr_factor, GroundTruth, RegressionProblem};
use crate::numerics::{beta_cdf, BetaParams};
use crate::rrt::gamma_single;

/// Threshold source `(n, p, k, k_max, α) ↦ Γ`, swappable for mutation tests.
pub type ThresholdFn = dyn Fn(usize, usize, usize, usize, f64) -> Result<f64> + Sync;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Config {
    pub n: usize,
    pub p: usize,
    pub k_g: usize,
    pub sigma2: Vec<f64>,
    pub alphas: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub workers: Option<usize>,
}

impl Default for Theorem2Config {
    fn default() -> Self {
        Self {
            n: 50,
            p: 10,
            k_g: 5,
            sigma2: vec![1.0, 0.1],
            alphas: vec![0.1, 0.01],
            trials: 1000,
            seed: 7,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Cell {
    pub sigma2: f64,
    pub alpha: f64,
    pub trials: usize,
    /// Fraction of trials with `RR(k) < Γ(k)` for some `k > k_min`.
    pub violation_rate: f64,
    pub k_min_eq_kg_rate: f64,
    /// Fraction of trials whose last `k` with `RR(k) < Γ(k)` equals `k_min`.
    pub last_crossing_eq_kmin_rate: f64,
    /// Median of `RR(k_min)` over trials with a finite `k_min`.
    pub median_rr_at_kmin: f64,
}

struct TraceSample {
    k_min: Option<usize>,
    ratios: Vec<f64>,
}

pub fn validate_theorem2(config: &Theorem2Config) -> Result<Vec<Theorem2Cell>> {
    validate_theorem2_with(config, &gamma_single)
}

/// Full GARD traces on the residual ratio study design, scored against
/// thresholds from `threshold`.
pub fn validate_theorem2_with(config: &Theorem2Config, threshold: &ThresholdFn) -> Result<Vec<Theorem2Cell>> {
    if config.trials == 0 {
        return domain("validate_theorem2 needs at least one trial");
    }
    let (n, p) = (config.n, config.p);
    if n < p + 3 {
        return domain(format!("need n >= p + 3, got n={n}, p={p}"));
    }
    let k_max = n - p - 1;
    let mut cells = Vec::new();
    for (si, &sigma2) in config.sigma2.iter().enumerate() {
        let spec = SyntheticSpec {
            n,
            p,
            k_g: config.k_g,
            ..SyntheticSpec::residual_ratio_study(sigma2)
        };
        spec.validate()?;
        let samples = map_trials(config.trials, config.workers, |t| {
            let mut rng = trial_rng(config.seed, si, t);
            let (problem, truth) = gen_synthetic_with(&spec, &mut rng)?;
            let trace = gard_run(&problem, StoppingRule::FullTrace(k_max))?;
            Ok(TraceSample {
                k_min: trace.k_min(&truth.outlier_support),
                ratios: trace.residual_ratios,
            })
        })?;
        let trials = samples.len() as f64;
        let at_kg = samples.iter().filter(|s| s.k_min == Some(config.k_g)).count() as f64 / trials;
        let rr_kmin: Vec<f64> = samples
            .iter()
            .filter_map(|s| s.k_min.filter(|&k| k >= 1 && k <= k_max).map(|k| s.ratios[k - 1]))
            .collect();
        let median_rr = median(&rr_kmin).unwrap_or(f64::NAN);
        for &alpha in &config.alphas {
            let gamma = (1..=k_max)
                .map(|k| threshold(n, p, k, k_max, alpha))
                .collect::<Result<Vec<f64>>>()?;
            let mut violations = 0usize;
            let mut last_ok = 0usize;
            for s in &samples {
                let below: Vec<usize> = (1..=k_max).filter(|&k| s.ratios[k - 1] < gamma[k - 1]).collect();
                if let Some(km) = s.k_min {
                    if below.iter().any(|&k| k > km) {
                        violations += 1;
                    }
                }
                if below.last().copied().is_some() && below.last().copied() == s.k_min {
                    last_ok += 1;
                }
            }
            cells.push(Theorem2Cell {
                sigma2,
                alpha,
                trials: samples.len(),
                violation_rate: violations as f64 / trials,
                k_min_eq_kg_rate: at_kg,
                last_crossing_eq_kmin_rate: last_ok as f64 / trials,
                median_rr_at_kmin: median_rr,
            });
        }
    }
    Ok(cells)
}

/// Largest gap between the empirical CDF of `samples` and `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in s.iter().enumerate() {
        let f = cdf(v)?;
        d = d.max((i + 1) as f64 / m - f).max(f - i as f64 / m);
    }
    Ok(d)
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(samples: usize) -> f64 {
    1.6276 / (samples as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaLawCheck {
    pub k: usize,
    pub samples: usize,
    pub statistic: f64,
    pub critical: f64,
    pub passed: bool,
}

/// Draws `samples` problems from `spec` and, along the fixed support
/// sequence `S_g` followed by the remaining indices in increasing order,
/// tests `RR(k)²` against Beta((n−p−k)/2, ½) for each `k` in `ks`.
pub fn rr_beta_law(spec: &SyntheticSpec, ks: &[usize], samples: usize, seed: u64, workers: Option<usize>) -> Result<Vec<BetaLawCheck>> {
    spec.validate()?;
    let (n, p, k_g) = (spec.n, spec.p, spec.k_g);
    if let Some(&bad) = ks.iter().find(|&&k| k <= k_g || k + p >= n) {
        return domain(format!("k must satisfy k_g < k < n - p, got {bad}"));
    }
    let draws = map_trials(samples, workers, |t| {
        let mut rng = trial_rng(seed, 0, t);
        let (problem, truth) = gen_synthetic_with(spec, &mut rng)?;
        let mut order = truth.outlier_support.clone();
        order.extend((0..n).filter(|i| truth.outlier_support.binary_search(i).is_err()));
        ks.iter()
            .map(|&k| {
                let prev = joint_ls(&problem, &order[..k - 1])?.residual_norm;
                let cur = joint_ls(&problem, &order[..k])?.residual_norm;
                Ok((cur / prev).powi(2))
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    ks.iter()
        .enumerate()
        .map(|(j, &k)| {
            let xs: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            let params = BetaParams::new((n - p - k) as f64 / 2.0, 0.5)?;
            let statistic = ks_statistic(&xs, |x| beta_cdf(params, x))?;
            let critical = ks_critical_1pct(samples);
            Ok(BetaLawCheck {
                k,
                samples,
                statistic,
                critical,
                passed: statistic <= critical,
            })
        })
        .collect()
}

/// Bound quantities of the support recovery guarantees, evaluated at the
/// true support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Largest singular value of the orthonormal basis rows indexed by `S_g`.
    pub delta_at_sg: f64,
    pub g_min: f64,
    pub g_norm: f64,
    pub w_norm: f64,
    pub epsilon_sigma: f64,
    /// `(g_min − 2δ²‖g‖₂)/(2 + √6)`.
    pub epsilon_gard: f64,
    /// `(g_min − δ²‖g‖₂)/(1/Γ(k_g) + 1 + √(3/2))`.
    pub epsilon_rrt: f64,
    pub gamma_kg: f64,
    /// `ε_GARD / min(ε_RRT, ε_GARD)`, when both are positive.
    pub oinr_extra: Option<f64>,
    /// `max(1, (2 + √6 + 2/Γ)/(4 + 2√6))`.
    pub oinr_extra_bound: f64,
    /// `δ² < g_min / (2‖g‖₂)`.
    pub delta_condition: bool,
    /// `‖w‖₂ ≤ ε_GARD`.
    pub noise_condition: bool,
    pub conditions_met: bool,
}

pub fn theorem_diagnostics(problem: &RegressionProblem, truth: Option<&GroundTruth>, alpha: f64) -> Result<Diagnostics> {
    let Some(truth) = truth else {
        return domain("theorem diagnostics need the ground truth");
    };
    if truth.k_g() == 0 {
        return domain("theorem diagnostics need at least one outlier");
    }
    let (n, p) = (problem.n(), problem.p());
    if n < p + 2 + truth.k_g() {
        return domain(format!("k_g = {} leaves no room for residual ratios", truth.k_g()));
    }
    let q = qr_factor(problem.x())?.q;
    let delta = delta_subset(&q, &truth.outlier_support)?;
    let g_min = truth.outlier_values.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    let g_norm = truth.outlier_values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let d2 = delta * delta;
    let sqrt6 = 6f64.sqrt();
    let gamma_kg = gamma_single(n, p, truth.k_g(), n - p - 1, alpha)?;
    let epsilon_gard = (g_min - 2.0 * d2 * g_norm) / (2.0 + sqrt6);
    let epsilon_rrt = (g_min - d2 * g_norm) / (1.0 / gamma_kg + 1.0 + 1.5f64.sqrt());
    let oinr_extra = (epsilon_gard > 0.0 && epsilon_rrt > 0.0).then(|| epsilon_gard / epsilon_rrt.min(epsilon_gard));
    let w_norm = truth.noise.norm();
    let delta_condition = d2 < g_min / (2.0 * g_norm);
    let noise_condition = w_norm <= epsilon_gard;
    Ok(Diagnostics {
        delta_at_sg: delta,
        g_min,
        g_norm,
        w_norm,
        epsilon_sigma: epsilon_sigma(n, truth.sigma2)?,
        epsilon_gard,
        epsilon_rrt,
        gamma_kg,
        oinr_extra,
        oinr_extra_bound: ((2.0 + sqrt6 + 2.0 / gamma_kg) / (4.0 + 2.0 * sqrt6)).max(1.0),
        delta_condition,
        noise_condition,
        conditions_met: delta_condition && noise_condition,
    })
}
