//! The GARD greedy loop: flag the largest residual, refit least squares on
//! `[X, I_S]`, repeat until a stopping rule fires or the trace is complete.
//!
//! The production path keeps an orthonormal basis of span([X, I_S]) and
//! appends one column per iteration. [`gard_run_reference`] refits every
//! step from scratch with [`joint_ls`] and serves as the oracle for it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::estimate::{MethodInfo, RobustEstimate, SigmaSource};
use crate::linalg::{joint_ls, qr_factor, RegressionProblem, RANK_RTOL};

/// A previous residual norm below `SATURATION_RTOL * ‖y‖` counts as zero.
pub const SATURATION_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StoppingRule {
    /// Stop once `‖r^k‖₂ ≤ ‖w‖₂`.
    KnownInlierNorm(f64),
    /// Stop once `‖r^k‖₂ ≤ ε^σ` for the given σ².
    KnownVariance(f64),
    /// Stop after exactly `k_user` iterations.
    FixedSparsity(usize),
    /// Run to `k_max` (or rank deficiency), recording every residual ratio.
    FullTrace(usize),
}

impl StoppingRule {
    fn validate(&self, problem: &RegressionProblem) -> Result<()> {
        let free = problem.max_outliers();
        match *self {
            StoppingRule::KnownInlierNorm(w) if !(w >= 0.0) => domain(format!("inlier norm must be ≥ 0, got {w}")),
            StoppingRule::KnownVariance(s2) if !(s2 > 0.0) => domain(format!("sigma² must be > 0, got {s2}")),
            StoppingRule::FixedSparsity(k) if k == 0 || k > free => {
                domain(format!("k_user must be in 1..={free}, got {k}"))
            }
            StoppingRule::FullTrace(k) if k == 0 || k + 1 > free => {
                domain(format!("k_max must be in 1..={}, got {k}", free.saturating_sub(1)))
            }
            _ => Ok(()),
        }
    }

    fn label(&self) -> &'static str {
        match self {
            StoppingRule::KnownInlierNorm(_) => "gard-wnorm",
            StoppingRule::KnownVariance(_) => "gard-sigma",
            StoppingRule::FixedSparsity(_) => "gard-k",
            StoppingRule::FullTrace(_) => "gard-full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    RuleMet,
    RankDeficient,
    TraceComplete,
}

/// `σ √(n + 2 √(n ln n))`, a high-probability bound on `‖w‖₂`.
pub fn epsilon_sigma(n: usize, sigma2: f64) -> Result<f64> {
    if n < 2 {
        return domain(format!("epsilon_sigma needs n >= 2, got {n}"));
    }
    if !(sigma2 >= 0.0) {
        return domain(format!("sigma² must be nonnegative, got {sigma2}"));
    }
    let n = n as f64;
    Ok(sigma2.sqrt() * (n + 2.0 * (n * n.ln()).sqrt()).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GardTrace {
    /// Indices in selection order; `S^k` is the first `k` entries.
    pub order: Vec<usize>,
    /// `‖r^0‖₂, …, ‖r^K‖₂`.
    pub residual_norms: Vec<f64>,
    /// `RR(1), …`; for full traces the length is `k_max` with 1.0 padding.
    pub residual_ratios: Vec<f64>,
    /// Entries of `residual_ratios` set to 0 because the previous residual vanished.
    pub saturated: Vec<bool>,
    /// Last iteration actually completed.
    pub effective_k_max: usize,
    pub termination: Termination,
    pub rule: StoppingRule,
}

impl GardTrace {
    /// `S^k` in selection order.
    pub fn support(&self, k: usize) -> &[usize] {
        &self.order[..k]
    }

    pub fn final_support(&self) -> &[usize] {
        &self.order
    }

    pub fn residual_ratios(&self) -> &[f64] {
        &self.residual_ratios
    }

    /// First `k` whose support covers `truth`, if any.
    pub fn k_min(&self, truth: &[usize]) -> Option<usize> {
        if truth.is_empty() {
            return Some(0);
        }
        let mut pending: std::collections::HashSet<usize> = truth.iter().copied().collect();
        for (k, i) in self.order.iter().enumerate() {
            pending.remove(i);
            if pending.is_empty() {
                return Some(k + 1);
            }
        }
        None
    }
}

/// Residual ratio sequence of a trace (see [`GardTrace::residual_ratios`]).
pub fn residual_ratios(trace: &GardTrace) -> Vec<f64> {
    trace.residual_ratios.clone()
}

/// Growing orthonormal basis of span([X, I_S]).
struct Basis {
    q: DMatrix<f64>,
    cols: usize,
    diag_max: f64,
}

impl Basis {
    fn new(x: &DMatrix<f64>, capacity: usize) -> Result<Self> {
        let f = qr_factor(x)?;
        let (n, p) = x.shape();
        let mut q = DMatrix::zeros(n, capacity.max(p));
        q.view_mut((0, 0), (n, p)).copy_from(&f.q);
        let diag_max = f.r.diagonal().abs().max();
        Ok(Self { q, cols: p, diag_max })
    }

    fn active(&self) -> nalgebra::DMatrixView<'_, f64> {
        self.q.columns(0, self.cols)
    }

    /// Appends `e_i` orthogonalised against the basis (two passes).
    fn push_unit(&mut self, i: usize) -> Result<()> {
        let n = self.q.nrows();
        let mut u = DVector::zeros(n);
        u[i] = 1.0;
        for _ in 0..2 {
            let coef = self.active().tr_mul(&u);
            u -= self.active() * coef;
        }
        let norm = u.norm();
        let tol = RANK_RTOL * self.diag_max.max(norm);
        if !(norm >= tol) || norm == 0.0 || self.cols == self.q.ncols() {
            return Err(Error::RankDeficient { diag: norm, tol });
        }
        self.diag_max = self.diag_max.max(norm);
        u /= norm;
        self.q.set_column(self.cols, &u);
        self.cols += 1;
        Ok(())
    }

    fn residual(&self, y: &DVector<f64>) -> DVector<f64> {
        let coef = self.active().tr_mul(y);
        y - self.active() * coef
    }
}

/// Index of the largest `|r_i|` outside the support; ties go to the lowest index.
fn strongest_residual(r: &DVector<f64>, in_support: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in r.iter().enumerate() {
        if in_support[i] {
            continue;
        }
        let a = v.abs();
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((i, a));
        }
    }
    best.map(|(i, _)| i)
}

fn rule_met(rule: &StoppingRule, n: usize, k: usize, norm: f64) -> Result<bool> {
    Ok(match *rule {
        StoppingRule::KnownInlierNorm(w) => norm <= w,
        StoppingRule::KnownVariance(s2) => norm <= epsilon_sigma(n, s2)?,
        StoppingRule::FixedSparsity(k_user) => k >= k_user,
        StoppingRule::FullTrace(k_max) => k >= k_max,
    })
}

/// Shared loop; `refit` maps the current selection order to the new residual.
fn run_loop<F>(problem: &RegressionProblem, rule: StoppingRule, mut refit: F, r0: DVector<f64>) -> Result<GardTrace>
where
    F: FnMut(&[usize]) -> Result<DVector<f64>>,
{
    let n = problem.n();
    let y_norm = problem.y().norm();
    let mut in_support = vec![false; n];
    let mut order = Vec::new();
    let mut norms = vec![r0.norm()];
    let mut r = r0;
    let limit = match rule {
        StoppingRule::FullTrace(k) => k,
        _ => problem.max_outliers(),
    };

    let termination = loop {
        let k = order.len();
        if rule_met(&rule, n, k, norms[k])? {
            break match rule {
                StoppingRule::FullTrace(_) => Termination::TraceComplete,
                _ => Termination::RuleMet,
            };
        }
        if k >= limit {
            break Termination::RankDeficient;
        }
        let Some(i) = strongest_residual(&r, &in_support) else {
            break Termination::RankDeficient;
        };
        order.push(i);
        match refit(&order) {
            Ok(next) => {
                in_support[i] = true;
                norms.push(next.norm());
                r = next;
            }
            Err(Error::RankDeficient { .. }) => {
                order.pop();
                break Termination::RankDeficient;
            }
            Err(e) => return Err(e),
        }
    };

    let k_done = order.len();
    let mut ratios = Vec::with_capacity(limit);
    let mut saturated = Vec::with_capacity(limit);
    for k in 1..=k_done {
        let prev = norms[k - 1];
        if prev <= SATURATION_RTOL * y_norm {
            ratios.push(0.0);
            saturated.push(true);
        } else {
            ratios.push((norms[k] / prev).clamp(0.0, 1.0));
            saturated.push(false);
        }
    }
    if let StoppingRule::FullTrace(k_max) = rule {
        ratios.resize(k_max, 1.0);
        saturated.resize(k_max, false);
    }
    debug_assert!(norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-12 * y_norm));

    Ok(GardTrace {
        order,
        residual_norms: norms,
        residual_ratios: ratios,
        saturated,
        effective_k_max: k_done,
        termination,
        rule,
    })
}

/// Runs GARD with incremental column appends.
pub fn gard_run(problem: &RegressionProblem, rule: StoppingRule) -> Result<GardTrace> {
    rule.validate(problem)?;
    let capacity = problem.p() + problem.max_outliers();
    let mut basis = Basis::new(problem.x(), capacity)?;
    let r0 = basis.residual(problem.y());
    let y = problem.y().clone();
    run_loop(
        problem,
        rule,
        |order| {
            basis.push_unit(*order.last().expect("nonempty"))?;
            Ok(basis.residual(&y))
        },
        r0,
    )
}

/// Runs GARD refitting `[X, I_S]` from scratch each iteration.
pub fn gard_run_reference(problem: &RegressionProblem, rule: StoppingRule) -> Result<GardTrace> {
    rule.validate(problem)?;
    let r0 = joint_ls(problem, &[])?.residual;
    run_loop(problem, rule, |order| Ok(joint_ls(problem, order)?.residual), r0)
}

/// GARD followed by the joint refit on the final support.
pub fn gard_estimate(problem: &RegressionProblem, rule: StoppingRule) -> Result<RobustEstimate> {
    gard_estimate_with_source(problem, rule, SigmaSource::True)
}

/// As [`gard_estimate`], recording where σ came from for the σ-based rule.
pub fn gard_estimate_with_source(
    problem: &RegressionProblem,
    rule: StoppingRule,
    sigma_source: SigmaSource,
) -> Result<RobustEstimate> {
    if matches!(rule, StoppingRule::FullTrace(_)) {
        return domain("gard_estimate needs a terminating rule, not FullTrace");
    }
    let trace = gard_run(problem, rule)?;
    let joint = joint_ls(problem, trace.final_support())?;
    let (source, key, value) = match rule {
        StoppingRule::KnownInlierNorm(w) => (SigmaSource::None, "w_norm", w),
        StoppingRule::KnownVariance(s2) => (sigma_source, "sigma2", s2),
        StoppingRule::FixedSparsity(k) => (SigmaSource::None, "k_user", k as f64),
        StoppingRule::FullTrace(k) => (SigmaSource::None, "k_max", k as f64),
    };
    let mut info = MethodInfo::new(rule.label(), source).with_param(key, value);
    if trace.termination == Termination::RankDeficient {
        info.flags.push("rank-deficient-stop".into());
    }
    Ok(RobustEstimate::from_joint(joint, info))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{gaussian_matrix, rng};
    use rand_distr::{Distribution, Normal};

    fn planted(seed: u64, n: usize, p: usize, outliers: &[(usize, f64)], sigma: f64) -> (RegressionProblem, DVector<f64>, DVector<f64>) {
        let mut r = rng(seed);
        let x = gaussian_matrix(&mut r, n, p);
        let beta = DVector::from_fn(p, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        let normal = Normal::new(0.0, sigma.max(1e-300)).unwrap();
        let w = DVector::from_fn(n, |_, _| if sigma > 0.0 { normal.sample(&mut r) } else { 0.0 });
        let mut y = &x * &beta + &w;
        for &(i, v) in outliers {
            y[i] += v;
        }
        (RegressionProblem::new(y, x).unwrap(), beta, w)
    }

    #[test]
    fn epsilon_sigma_values() {
        let e = epsilon_sigma(100, 1.0).unwrap();
        let direct = (100.0 + 2.0 * (100.0 * 4.605_170_185_988_091_f64).sqrt()).sqrt();
        assert!((e - direct).abs() < 1e-12);
        assert!((e - 11.955).abs() < 1e-3);
        let e50 = epsilon_sigma(50, 0.25).unwrap();
        assert!((e50 - 0.5 * (50.0 + 2.0 * (50.0 * 50f64.ln()).sqrt()).sqrt()).abs() < 1e-12);
        assert!(epsilon_sigma(1000, 1e-300).unwrap() < 1e-140);
        assert!(epsilon_sigma(1, 1.0).is_err());
    }

    #[test]
    fn single_noiseless_outlier_is_found() {
        let (prob, beta, _) = planted(11, 30, 3, &[(7, 10.0)], 0.0);
        let trace = gard_run(&prob, StoppingRule::FixedSparsity(1)).unwrap();
        assert_eq!(trace.order, vec![7]);
        assert!(trace.residual_norms[1] <= 1e-8 * prob.y().norm());
        let est = gard_estimate(&prob, StoppingRule::FixedSparsity(1)).unwrap();
        assert!((est.beta_hat - beta).norm() < 1e-8);
        assert_eq!(est.support, vec![7]);
    }

    #[test]
    fn fixed_sparsity_noiseless_recovers_beta() {
        let outliers = [(2, 10.0), (15, -10.0), (31, 10.0)];
        let (prob, beta, _) = planted(12, 60, 5, &outliers, 0.0);
        let est = gard_estimate(&prob, StoppingRule::FixedSparsity(3)).unwrap();
        assert_eq!(est.support, vec![2, 15, 31]);
        assert!((est.beta_hat - beta).norm() < 1e-8);
    }

    #[test]
    fn known_inlier_norm_stops_at_first_crossing() {
        let outliers = [(1, 10.0), (20, -10.0), (33, 10.0), (40, 10.0)];
        let (prob, _, w) = planted(13, 50, 4, &outliers, 0.5);
        let w_norm = w.norm();
        let trace = gard_run(&prob, StoppingRule::KnownInlierNorm(w_norm)).unwrap();
        let k = trace.effective_k_max;
        assert_eq!(trace.termination, Termination::RuleMet);
        assert!(trace.residual_norms[k] <= w_norm);
        // replay: every earlier norm is above the threshold
        assert!(trace.residual_norms[..k].iter().all(|&r| r > w_norm));
        let full = gard_run(&prob, StoppingRule::FullTrace(prob.n() - prob.p() - 1)).unwrap();
        let first = full.residual_norms.iter().position(|&r| r <= w_norm).unwrap();
        assert_eq!(first, k);
        assert_eq!(&full.order[..k], &trace.order[..]);
    }

    #[test]
    fn known_variance_uses_epsilon_sigma() {
        let outliers = [(3, 10.0), (9, -10.0)];
        let (prob, _, _) = planted(14, 80, 4, &outliers, 0.1);
        let trace = gard_run(&prob, StoppingRule::KnownVariance(0.01)).unwrap();
        let eps = epsilon_sigma(80, 0.01).unwrap();
        let k = trace.effective_k_max;
        assert!(trace.residual_norms[k] <= eps);
        assert!(trace.residual_norms[..k].iter().all(|&r| r > eps));
        let mut s = trace.order.clone();
        s.sort();
        assert_eq!(s, vec![3, 9]);
    }

    #[test]
    fn trace_invariants_hold() {
        let outliers = [(0, 10.0), (5, 10.0), (6, -10.0)];
        let (prob, _, _) = planted(15, 40, 6, &outliers, 1.0);
        let k_max = 40 - 6 - 1;
        let t = gard_run(&prob, StoppingRule::FullTrace(k_max)).unwrap();
        assert_eq!(t.residual_ratios.len(), k_max);
        assert_eq!(t.termination, Termination::TraceComplete);
        let mut seen = std::collections::HashSet::new();
        assert!(t.order.iter().all(|i| seen.insert(*i)));
        assert!(t.residual_norms.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(t.residual_ratios.iter().all(|r| (0.0..=1.0).contains(r)));
    }

    #[test]
    fn incremental_matches_reference() {
        for seed in 0..5 {
            let outliers = [(seed as usize, 8.0), (10, -8.0)];
            let (prob, _, _) = planted(100 + seed, 30, 4, &outliers, 1.0);
            let rule = StoppingRule::FullTrace(25);
            let a = gard_run(&prob, rule).unwrap();
            let b = gard_run_reference(&prob, rule).unwrap();
            assert_eq!(a.order, b.order);
            for (x, y) in a.residual_norms.iter().zip(&b.residual_norms) {
                assert!((x - y).abs() <= 1e-8 * y.max(1e-300));
            }
        }
    }

    #[test]
    fn noiseless_saturation_is_flagged() {
        let (prob, _, _) = planted(16, 30, 3, &[(4, 10.0)], 0.0);
        let t = gard_run(&prob, StoppingRule::FullTrace(26)).unwrap();
        assert_eq!(t.order[0], 4);
        assert!(t.residual_ratios[0] < 1e-10);
        assert!(t.saturated[1]);
        assert_eq!(t.residual_ratios[1], 0.0);
    }

    #[test]
    fn rank_deficiency_pads_with_ones() {
        // Column 1 lives on row 0 only; with an all-zero residual the tie-break
        // picks row 0 first and [X, e_0] is singular.
        let n = 8;
        let mut x = DMatrix::from_element(n, 2, 0.0);
        for i in 0..n {
            x[(i, 0)] = 1.0;
        }
        x[(0, 1)] = 1.0;
        let prob = RegressionProblem::new(DVector::zeros(n), x).unwrap();
        let t = gard_run(&prob, StoppingRule::FullTrace(5)).unwrap();
        assert_eq!(t.termination, Termination::RankDeficient);
        assert_eq!(t.effective_k_max, 0);
        assert_eq!(t.residual_ratios, vec![1.0; 5]);
        let r = gard_run_reference(&prob, StoppingRule::FullTrace(5)).unwrap();
        assert_eq!(r.termination, Termination::RankDeficient);
    }

    #[test]
    fn rule_validation() {
        let (prob, _, _) = planted(17, 20, 3, &[], 1.0);
        assert!(gard_run(&prob, StoppingRule::FullTrace(17)).is_err());
        assert!(gard_run(&prob, StoppingRule::FullTrace(16)).is_ok());
        assert!(gard_run(&prob, StoppingRule::FixedSparsity(18)).is_err());
        assert!(gard_run(&prob, StoppingRule::KnownVariance(0.0)).is_err());
        assert!(gard_estimate(&prob, StoppingRule::FullTrace(5)).is_err());
    }

    #[test]
    fn deterministic_and_lowest_index_tie_break() {
        let x = DMatrix::from_element(6, 1, 1.0);
        let y = DVector::from_vec(vec![0.0, 3.0, 0.0, -3.0, 0.0, 0.0]);
        let prob = RegressionProblem::new(y, x).unwrap();
        let t = gard_run(&prob, StoppingRule::FixedSparsity(1)).unwrap();
        assert_eq!(t.order, vec![1]);
        let (prob, _, _) = planted(18, 50, 5, &[(3, 10.0)], 1.0);
        let a = gard_run(&prob, StoppingRule::FullTrace(44)).unwrap();
        let b = gard_run(&prob, StoppingRule::FullTrace(44)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn k_min_definition() {
        let (prob, _, _) = planted(19, 40, 3, &[(5, 10.0), (8, 10.0)], 0.1);
        let t = gard_run(&prob, StoppingRule::FullTrace(36)).unwrap();
        assert_eq!(t.k_min(&[5, 8]), Some(2));
        assert_eq!(t.k_min(&[]), Some(0));
    }
}
