//! Comparison estimators: LS, LAD, bisquare M-estimation, RMAP, IPOD, the
//! re-projection step, and the two noise-scale estimators.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::estimate::{MethodInfo, RobustEstimate, SigmaSource};
use crate::linalg::{joint_ls, qr_factor, RegressionProblem};

pub const LAD_MAX_ITER: usize = 200;
pub const LAD_WEIGHT_FLOOR: f64 = 1e-6;
pub const LAD_OBJ_RTOL: f64 = 1e-8;

pub const BISQUARE_C: f64 = 4.685;
pub const MEST_MAX_ITER: usize = 100;
pub const MEST_RTOL: f64 = 1e-8;

/// Consistency constant of the median absolute deviation for Gaussian data.
pub const MAD_SCALE: f64 = 1.4826;
/// Divisor of the LAD median residual in scheme 1.
pub const SCHEME1_DIVISOR: f64 = 0.675;
/// `|r| ≤ SCHEME1_ZERO_RTOL·‖y‖` counts as a zero residual in scheme 1.
pub const SCHEME1_ZERO_RTOL: f64 = 1e-9;

pub const RMAP_GAP_RTOL: f64 = 1e-8;
pub const RMAP_MAX_ITER: usize = 200_000;

pub const IPOD_LAMBDA_MULT: f64 = 5.0;
pub const IPOD_MAX_ITER: usize = 500;
pub const IPOD_RTOL: f64 = 1e-8;

/// Default re-projection threshold multiplier for RMAP and IPOD.
pub const REPROJECT_GAMMA: f64 = 3.0;

/// Least-squares solver for a fixed design.
#[derive(Debug, Clone)]
pub struct LsSolver {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl LsSolver {
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        let f = qr_factor(x)?;
        Ok(Self { q: f.q, r: f.r })
    }

    /// `X† v`.
    pub fn solve(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let qtv = self.q.tr_mul(v);
        self.r
            .solve_upper_triangular(&qtv)
            .ok_or_else(|| Error::Numeric("triangular solve failed".into()))
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
}

fn weighted_ls(x: &DMatrix<f64>, y: &DVector<f64>, w: &[f64]) -> Result<DVector<f64>> {
    let mut xw = x.clone();
    let mut yw = y.clone();
    for (i, &wi) in w.iter().enumerate() {
        let s = wi.sqrt();
        xw.row_mut(i).scale_mut(s);
        yw[i] *= s;
    }
    LsSolver::new(&xw)?.solve(&yw)
}

/// Median of a slice; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// `median(|r - median(r)|)`.
pub fn mad(values: &[f64]) -> Option<f64> {
    let m = median(values)?;
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

fn l1(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn ls_fit(problem: &RegressionProblem) -> Result<RobustEstimate> {
    let beta = LsSolver::new(problem.x())?.solve(problem.y())?;
    Ok(RobustEstimate::from_beta(problem, beta, MethodInfo::new("ls", SigmaSource::None)))
}

/// Minimizer of `Σ w_i |c_i − t|`.
fn weighted_median(points: &mut [(f64, f64)]) -> f64 {
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = points.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for &(c, w) in points.iter() {
        acc += w;
        if acc >= 0.5 * total {
            return c;
        }
    }
    points.last().map_or(0.0, |p| p.0)
}

/// Exact finish for LAD: moves to the vertex interpolating the `p` smallest
/// residuals, then descends along polytope edges until no edge improves.
/// Returns the final coefficients and whether optimality was certified.
fn lad_descend(problem: &RegressionProblem, start: &DVector<f64>) -> (DVector<f64>, bool) {
    let (x, y) = (problem.x(), problem.y());
    let (n, p) = x.shape();
    let mut beta = start.clone();
    let mut obj;
    for _ in 0..20 * n {
        let r = y - x * &beta;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs()).then(a.cmp(&b)));
        let basis = &idx[..p];
        let xb = DMatrix::from_fn(p, p, |i, j| x[(basis[i], j)]);
        let yb = DVector::from_fn(p, |i, _| y[basis[i]]);
        let Some(inv) = xb.try_inverse() else { return (beta, false) };
        beta = &inv * yb;
        let r = y - x * &beta;
        obj = l1(&r);
        let mut moved = false;
        for j in 0..p {
            let d = inv.column(j).into_owned();
            let a = x * &d;
            let mut pts: Vec<(f64, f64)> = (0..n)
                .filter(|i| a[*i].abs() > 1e-14 * a.amax())
                .map(|i| (r[i] / a[i], a[i].abs()))
                .collect();
            let t = weighted_median(&mut pts);
            let cand = &beta + &d * t;
            let c_obj = l1(&(y - x * &cand));
            if c_obj < obj * (1.0 - 1e-14) {
                beta = cand;
                moved = true;
                break;
            }
        }
        if !moved {
            return (beta, true);
        }
    }
    (beta, false)
}

/// Least absolute deviations by IRLS from the LS start, finished with a
/// vertex polish.
pub fn lad_fit(problem: &RegressionProblem) -> Result<RobustEstimate> {
    let (beta, _) = lad_beta(problem)?;
    Ok(RobustEstimate::from_beta(problem, beta, MethodInfo::new("lad", SigmaSource::None)))
}

fn lad_beta(problem: &RegressionProblem) -> Result<(DVector<f64>, f64)> {
    let (x, y) = (problem.x(), problem.y());
    let n = problem.n();
    let mut beta = LsSolver::new(x)?.solve(y)?;
    let y_norm = y.norm();
    if y_norm == 0.0 {
        return Ok((beta, 0.0));
    }
    let floor = LAD_WEIGHT_FLOOR * y_norm / (n as f64).sqrt();
    let mut obj = l1(&(y - x * &beta));
    let mut best = (beta.clone(), obj);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < LAD_MAX_ITER {
        iterations += 1;
        let r = y - x * &beta;
        let w: Vec<f64> = r.iter().map(|ri| 1.0 / ri.abs().max(floor)).collect();
        beta = weighted_ls(x, y, &w)?;
        let next = l1(&(y - x * &beta));
        if next < best.1 {
            best = (beta.clone(), next);
        }
        let done = (obj - next).abs() <= LAD_OBJ_RTOL * obj.max(f64::MIN_POSITIVE);
        obj = next;
        if done {
            converged = true;
            break;
        }
    }
    let (polished, certified) = lad_descend(problem, &best.0);
    let o = l1(&(y - x * &polished));
    if o <= best.1 {
        best = (polished, o);
    }
    converged |= certified;
    if !converged {
        return Err(Error::NotConverged {
            what: "lad".into(),
            iterations,
            best_beta: best.0.iter().copied().collect(),
        });
    }
    Ok(best)
}

fn bisquare_weight(u: f64) -> f64 {
    if u.abs() < 1.0 {
        let t = 1.0 - u * u;
        t * t
    } else {
        0.0
    }
}

/// Tukey bisquare M-estimate by IRLS with MAD scale.
pub fn m_estimate(problem: &RegressionProblem) -> Result<RobustEstimate> {
    let (x, y) = (problem.x(), problem.y());
    let mut info = MethodInfo::new("m-est", SigmaSource::None).with_param("c", BISQUARE_C);
    let mut beta = LsSolver::new(x)?.solve(y)?;
    let scale_floor = f64::EPSILON * y.norm() / (problem.n() as f64).sqrt();
    let mut restarted = false;
    let mut converged = false;
    for _ in 0..MEST_MAX_ITER {
        let r = y - x * &beta;
        let r_slice: Vec<f64> = r.iter().copied().collect();
        let s = MAD_SCALE * mad(&r_slice).unwrap_or(0.0);
        if s <= scale_floor {
            info.flags.push("zero-scale".into());
            converged = true;
            break;
        }
        let w: Vec<f64> = r.iter().map(|ri| bisquare_weight(ri / (BISQUARE_C * s))).collect();
        let next = if w.iter().all(|&wi| wi == 0.0) {
            Err(Error::Numeric("all bisquare weights are zero".into()))
        } else {
            weighted_ls(x, y, &w)
        };
        let next = match next {
            Ok(b) => b,
            Err(Error::RankDeficient { .. } | Error::Numeric(_)) if !restarted => {
                restarted = true;
                info.flags.push("lad-restart".into());
                beta = lad_beta(problem).map(|(b, _)| b).or_else(|e| match e {
                    Error::NotConverged { best_beta, .. } => Ok(DVector::from_vec(best_beta)),
                    other => Err(other),
                })?;
                continue;
            }
            Err(Error::RankDeficient { .. } | Error::Numeric(_)) => {
                info.flags.push("degenerate-weights".into());
                converged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let step = (&next - &beta).norm();
        beta = next;
        if step <= MEST_RTOL * beta.norm() {
            converged = true;
            break;
        }
    }
    if !converged {
        info.flags.push("iteration-cap".into());
    }
    Ok(RobustEstimate::from_beta(problem, beta, info))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SigmaScheme {
    /// Median of nonzero LAD residual magnitudes over 0.675.
    LadMedian,
    /// 1.4826 × MAD of a robust residual.
    MadOfResidual,
}

/// Which robust fit supplies the residual for a σ estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualSource {
    Lad,
    #[default]
    MEst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimate {
    pub sigma_hat: f64,
    pub scheme: SigmaScheme,
    pub source_residual: ResidualSource,
    /// Set when every residual was zero.
    pub degenerate: bool,
}

impl SigmaEstimate {
    /// The same estimate multiplied by `factor`.
    pub fn scaled(self, factor: f64) -> Self {
        Self {
            sigma_hat: self.sigma_hat * factor,
            ..self
        }
    }

    pub fn sigma_source(&self) -> SigmaSource {
        match self.scheme {
            SigmaScheme::LadMedian => SigmaSource::Scheme1,
            SigmaScheme::MadOfResidual => SigmaSource::Scheme2,
        }
    }
}

/// Scheme 1 applied to a given LAD residual.
pub fn sigma_scheme1_from_residual(residual: &[f64], y_norm: f64) -> SigmaEstimate {
    let cut = SCHEME1_ZERO_RTOL * y_norm;
    let nonzero: Vec<f64> = residual.iter().map(|r| r.abs()).filter(|&a| a > cut).collect();
    let (sigma_hat, degenerate) = match median(&nonzero) {
        Some(m) => (m / SCHEME1_DIVISOR, false),
        None => (0.0, true),
    };
    SigmaEstimate {
        sigma_hat,
        scheme: SigmaScheme::LadMedian,
        source_residual: ResidualSource::Lad,
        degenerate,
    }
}

pub fn sigma_scheme1(problem: &RegressionProblem) -> Result<SigmaEstimate> {
    let lad = lad_fit(problem)?;
    let r: Vec<f64> = lad.residual.iter().copied().collect();
    Ok(sigma_scheme1_from_residual(&r, problem.y().norm()))
}

/// Scheme 2 applied to a given residual.
pub fn sigma_scheme2_from_residual(residual: &[f64], source: ResidualSource) -> SigmaEstimate {
    let m = mad(residual);
    SigmaEstimate {
        sigma_hat: MAD_SCALE * m.unwrap_or(0.0),
        scheme: SigmaScheme::MadOfResidual,
        source_residual: source,
        degenerate: m.is_none_or(|v| v == 0.0),
    }
}

pub fn sigma_scheme2(problem: &RegressionProblem, source: ResidualSource) -> Result<SigmaEstimate> {
    let fit = match source {
        ResidualSource::Lad => lad_fit(problem)?,
        ResidualSource::MEst => m_estimate(problem)?,
    };
    let r: Vec<f64> = fit.residual.iter().copied().collect();
    Ok(sigma_scheme2_from_residual(&r, source))
}

pub fn rmap_lambda(sigma: f64, n: usize) -> f64 {
    sigma * (2.0 * (n as f64).ln()).sqrt() / 3.0
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// Iterate history of the reduced RMAP problem.
#[derive(Debug, Clone)]
pub struct RmapPath {
    pub g: DVector<f64>,
    /// `‖P⊥(y−g)‖² + λ‖g‖₁` after each iteration, starting from `g = 0`.
    pub objectives: Vec<f64>,
    pub gap: f64,
    pub iterations: usize,
}

/// Solves `min_g ‖P⊥(y − g)‖² + λ‖g‖₁` by proximal gradient with step ½.
pub fn rmap_solve(q: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, max_iter: usize) -> Result<RmapPath> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return domain(format!("rmap lambda must be finite and nonnegative, got {lambda}"));
    }
    let mu = 0.5 * lambda;
    let b = crate::linalg::project_out(q, y);
    let tol = RMAP_GAP_RTOL * y.norm_squared();
    let mut g = DVector::zeros(y.len());
    let objective = |r: &DVector<f64>, g: &DVector<f64>| r.norm_squared() + lambda * l1(g);
    let gap_of = |r: &DVector<f64>, g: &DVector<f64>| {
        let primal = 0.5 * r.norm_squared() + mu * l1(g);
        let rmax = r.amax();
        let s = if rmax > mu { mu / rmax } else { 1.0 };
        let dual = 0.5 * b.norm_squared() - 0.5 * (&b - r * s).norm_squared();
        2.0 * (primal - dual)
    };
    let mut r = b.clone();
    let mut objectives = vec![objective(&r, &g)];
    let mut gap = gap_of(&r, &g);
    let mut iterations = 0;
    while gap > tol {
        if iterations == max_iter {
            return Err(Error::NotConverged {
                what: "rmap".into(),
                iterations,
                best_beta: Vec::new(),
            });
        }
        iterations += 1;
        for i in 0..g.len() {
            g[i] = soft(g[i] + r[i], mu);
        }
        r = &b - crate::linalg::project_out(q, &g);
        objectives.push(objective(&r, &g));
        gap = gap_of(&r, &g);
    }
    Ok(RmapPath {
        g,
        objectives,
        gap,
        iterations,
    })
}

fn sparse(g: &DVector<f64>) -> Vec<(usize, f64)> {
    g.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i, *v)).collect()
}

fn with_outliers(problem: &RegressionProblem, beta: DVector<f64>, g_hat: Vec<(usize, f64)>, method: MethodInfo) -> RobustEstimate {
    let mut residual = problem.y() - problem.x() * &beta;
    for &(i, v) in &g_hat {
        residual[i] -= v;
    }
    RobustEstimate {
        beta_hat: beta,
        support: g_hat.iter().map(|&(i, _)| i).collect(),
        g_hat,
        residual,
        method,
    }
}

/// RMAP with `λ = σ√(2 ln n)/3`.
pub fn rmap_fit(problem: &RegressionProblem, sigma: f64, source: SigmaSource) -> Result<RobustEstimate> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return domain(format!("rmap needs a positive finite sigma, got {sigma}"));
    }
    let mut est = rmap_fit_lambda(problem, rmap_lambda(sigma, problem.n()), source)?;
    est.method.hyperparameters.insert(0, ("sigma".into(), sigma));
    Ok(est)
}

/// RMAP with an explicit λ.
pub fn rmap_fit_lambda(problem: &RegressionProblem, lambda: f64, source: SigmaSource) -> Result<RobustEstimate> {
    let ls = LsSolver::new(problem.x())?;
    let path = rmap_solve(ls.q(), problem.y(), lambda, RMAP_MAX_ITER).map_err(|e| match e {
        Error::NotConverged { what, iterations, .. } => Error::NotConverged {
            what,
            iterations,
            best_beta: ls.solve(problem.y()).map(|b| b.iter().copied().collect()).unwrap_or_default(),
        },
        other => other,
    })?;
    let beta = ls.solve(&(problem.y() - &path.g))?;
    let info = MethodInfo::new("rmap", source).with_param("lambda", lambda);
    Ok(with_outliers(problem, beta, sparse(&path.g), info))
}

fn hard_threshold(r: &DVector<f64>, t: f64) -> DVector<f64> {
    r.map(|v| if v.abs() > t { v } else { 0.0 })
}

fn support_of(g: &DVector<f64>) -> Vec<usize> {
    g.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect()
}

/// IPOD with hard thresholding at `5σ`, started from LS.
pub fn ipod_fit(problem: &RegressionProblem, sigma: f64, source: SigmaSource) -> Result<RobustEstimate> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return domain(format!("ipod needs a positive finite sigma, got {sigma}"));
    }
    let (x, y) = (problem.x(), problem.y());
    let lambda = IPOD_LAMBDA_MULT * sigma;
    let mut info = MethodInfo::new("ipod", source)
        .with_param("sigma", sigma)
        .with_param("lambda", lambda);
    let ls = LsSolver::new(x)?;
    let objective = |beta: &DVector<f64>, g: &DVector<f64>| {
        0.5 * (y - x * beta - g).norm_squared() + 0.5 * lambda * lambda * support_of(g).len() as f64
    };
    let mut beta = ls.solve(y)?;
    let mut g = hard_threshold(&(y - x * &beta), lambda);
    let mut best = (objective(&beta, &g), beta.clone(), g.clone());
    let mut seen: Vec<Vec<usize>> = vec![support_of(&g)];
    let mut converged = false;
    for _ in 0..IPOD_MAX_ITER {
        let next_beta = ls.solve(&(y - &g))?;
        let next_g = hard_threshold(&(y - x * &next_beta), lambda);
        let step = (&next_beta - &beta).norm();
        let support = support_of(&next_g);
        let same = seen.last() == Some(&support);
        beta = next_beta;
        g = next_g;
        let obj = objective(&beta, &g);
        if obj < best.0 {
            best = (obj, beta.clone(), g.clone());
        }
        if same && step <= IPOD_RTOL * beta.norm().max(1.0) {
            converged = true;
            break;
        }
        if !same && seen.contains(&support) {
            info.flags.push("cycling".into());
            beta = best.1.clone();
            g = best.2.clone();
            converged = true;
            break;
        }
        seen.push(support);
    }
    if !converged {
        info.flags.push("iteration-cap".into());
    }
    Ok(with_outliers(problem, beta, sparse(&g), info))
}

/// Flags `|y − Xβ̂| > γσ` and refits jointly on the flagged set.
pub fn reproject(problem: &RegressionProblem, estimate: &RobustEstimate, gamma: f64, sigma: f64) -> Result<RobustEstimate> {
    if !(gamma > 0.0 && sigma > 0.0) || !(gamma * sigma).is_finite() {
        return domain(format!("reproject needs positive gamma and sigma, got {gamma}, {sigma}"));
    }
    let r = estimate.regression_residual(problem);
    let cut = gamma * sigma;
    let mut flagged: Vec<usize> = (0..problem.n()).filter(|&i| r[i].abs() > cut).collect();
    flagged.sort_by(|&a, &b| r[b].abs().total_cmp(&r[a].abs()).then(a.cmp(&b)));
    let mut info = estimate.method.clone();
    info.name = format!("{}+reproject", info.name);
    info.hyperparameters.push(("gamma".into(), gamma));
    let fit = |m: usize| {
        let mut s = flagged[..m].to_vec();
        s.sort_unstable();
        joint_ls(problem, &s)
    };
    let joint = match fit(flagged.len()) {
        Ok(j) => j,
        Err(Error::RankDeficient { .. }) => {
            // Largest full-rank prefix by bisection; rank loss is monotone in the prefix.
            let (mut lo, mut hi) = (0usize, flagged.len().min(problem.max_outliers() + 1));
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                match fit(mid) {
                    Ok(_) => lo = mid,
                    Err(Error::RankDeficient { .. }) => hi = mid,
                    Err(e) => return Err(e),
                }
            }
            info.flags.push("reproject-truncated".into());
            fit(lo)?
        }
        Err(e) => return Err(e),
    };
    Ok(RobustEstimate::from_joint(joint, info))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{gaussian_matrix, rng};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn random_problem(seed: u64, n: usize, p: usize, sigma: f64) -> (RegressionProblem, DVector<f64>) {
        let mut r = rng(seed);
        let x = gaussian_matrix(&mut r, n, p);
        let beta = DVector::from_fn(p, |_, _| if r.random::<bool>() { 1.0 } else { -1.0 });
        let noise = Normal::new(0.0, sigma).unwrap();
        let y = &x * &beta + DVector::from_fn(n, |_, _| noise.sample(&mut r));
        (RegressionProblem::new(y, x).unwrap(), beta)
    }

    fn with_spikes(problem: &RegressionProblem, spikes: &[(usize, f64)]) -> RegressionProblem {
        let mut y = problem.y().clone();
        for &(i, v) in spikes {
            y[i] += v;
        }
        RegressionProblem::new(y, problem.x().clone()).unwrap()
    }

    fn assert_identity(problem: &RegressionProblem, est: &RobustEstimate) {
        let mut expect = problem.y() - problem.x() * &est.beta_hat;
        for &(i, v) in &est.g_hat {
            expect[i] -= v;
        }
        let tol = 1e-8 * problem.y().norm().max(1.0);
        assert!((&expect - &est.residual).amax() <= tol);
        let idx: Vec<usize> = est.g_hat.iter().map(|&(i, _)| i).collect();
        assert_eq!(idx, est.support);
        assert!(est.g_hat.iter().all(|&(_, v)| v != 0.0));
    }

    #[test]
    fn median_and_mad_by_hand() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(mad(&[-1.0, 0.0, 1.0]), Some(1.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn ls_exact_fit_and_orthogonality() {
        let (prob, _) = random_problem(1, 20, 3, 0.0);
        let est = ls_fit(&prob).unwrap();
        assert!(est.residual.amax() < 1e-10);
        let (prob, _) = random_problem(2, 20, 3, 1.0);
        let est = ls_fit(&prob).unwrap();
        assert!((prob.x().tr_mul(&est.residual)).amax() < 1e-10);
        assert!(est.support.is_empty());
        assert_identity(&prob, &est);
    }

    #[test]
    fn ls_error_grows_with_outlier() {
        let (prob, beta) = random_problem(3, 30, 3, 0.1);
        let errs: Vec<f64> = [10.0, 100.0, 1000.0]
            .iter()
            .map(|&m| ls_fit(&with_spikes(&prob, &[(4, m)])).unwrap().squared_error(&beta))
            .collect();
        assert!(errs[0] < errs[1] && errs[1] < errs[2]);
    }

    #[test]
    fn ls_mse_matches_trace_formula() {
        let mut r = rng(4);
        let (n, p, sigma) = (30, 3, 0.5);
        let x = gaussian_matrix(&mut r, n, p);
        let beta = DVector::from_element(p, 1.0);
        let expected = sigma * sigma * (x.tr_mul(&x)).try_inverse().unwrap().trace();
        let noise = Normal::new(0.0, sigma).unwrap();
        let trials = 4000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..trials {
            let y = &x * &beta + DVector::from_fn(n, |_, _| noise.sample(&mut r));
            let prob = RegressionProblem::new(y, x.clone()).unwrap();
            let e = ls_fit(&prob).unwrap().squared_error(&beta);
            sum += e;
            sumsq += e * e;
        }
        let mean = sum / trials as f64;
        let sd = ((sumsq / trials as f64 - mean * mean) / trials as f64).sqrt();
        assert!((mean - expected).abs() < 4.0 * sd, "{mean} vs {expected}");
    }

    #[test]
    fn lad_location_is_median() {
        let y = DVector::from_vec(vec![3.0, -1.0, 10.0, 2.0, 0.5]);
        let prob = RegressionProblem::new(y, DMatrix::from_element(5, 1, 1.0)).unwrap();
        let est = lad_fit(&prob).unwrap();
        assert!((est.beta_hat[0] - 2.0).abs() < 1e-9);
        assert!(est.support.is_empty());
    }

    fn vertex_oracle(prob: &RegressionProblem) -> f64 {
        let n = prob.n();
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                let a = DMatrix::from_fn(2, 2, |r, c| prob.x()[([i, j][r], c)]);
                let b = DVector::from_fn(2, |r, _| prob.y()[[i, j][r]]);
                if let Some(beta) = a.try_inverse().map(|inv| inv * b) {
                    let obj: f64 = (prob.y() - prob.x() * beta).iter().map(|v| v.abs()).sum();
                    best = best.min(obj);
                }
            }
        }
        best
    }

    #[test]
    fn lad_matches_vertex_enumeration() {
        for seed in 0..20 {
            let (prob, _) = random_problem(100 + seed, 15, 2, 1.0);
            let prob = with_spikes(&prob, &[(3, 8.0), (11, -5.0)]);
            let est = lad_fit(&prob).unwrap();
            let obj: f64 = (prob.y() - prob.x() * &est.beta_hat).iter().map(|v| v.abs()).sum();
            let oracle = vertex_oracle(&prob);
            assert!((obj - oracle).abs() <= 1e-6, "seed {seed}: {obj} vs {oracle}");
        }
    }

    #[test]
    fn lad_close_to_ls_without_outliers() {
        let (prob, beta) = random_problem(7, 400, 3, 0.1);
        let lad = lad_fit(&prob).unwrap();
        let ls = ls_fit(&prob).unwrap();
        assert!((&lad.beta_hat - &ls.beta_hat).norm() < 0.05);
        assert!(lad.squared_error(&beta) < 0.01);
    }

    #[test]
    fn m_estimate_matches_ls_on_clean_data() {
        let (prob, _) = random_problem(8, 100, 4, 1e-4);
        let m = m_estimate(&prob).unwrap();
        let ls = ls_fit(&prob).unwrap();
        let rel = (&m.beta_hat - &ls.beta_hat).norm() / ls.beta_hat.norm();
        assert!(rel < 1e-3, "{rel}");
        assert_identity(&prob, &m);
    }

    #[test]
    fn m_estimate_constant_response() {
        let mut r = rng(9);
        let n = 12;
        let mut x = DMatrix::from_element(n, 2, 1.0);
        for i in 0..n {
            x[(i, 1)] = r.random::<f64>();
        }
        let prob = RegressionProblem::new(DVector::from_element(n, 4.5), x).unwrap();
        let m = m_estimate(&prob).unwrap();
        assert!((m.beta_hat[0] - 4.5).abs() < 1e-10);
        assert!(m.beta_hat[1].abs() < 1e-10);
    }

    #[test]
    fn m_estimate_beats_ls_with_outliers() {
        let mut m_err = 0.0;
        let mut ls_err = 0.0;
        for seed in 0..20 {
            let (prob, beta) = random_problem(200 + seed, 100, 5, 0.1);
            let mut r = rng(300 + seed);
            let spikes: Vec<(usize, f64)> = (0..5).map(|k| (k * 20 + r.random_range(0..20), 10.0)).collect();
            let prob = with_spikes(&prob, &spikes);
            m_err += m_estimate(&prob).unwrap().squared_error(&beta);
            ls_err += ls_fit(&prob).unwrap().squared_error(&beta);
        }
        assert!(m_err < ls_err);
    }

    #[test]
    fn scheme1_constructed_scaling() {
        let r = [0.0, 0.675, -0.675, 0.675, 1e-15];
        let s = sigma_scheme1_from_residual(&r, 1.0);
        assert!((s.sigma_hat - 1.0).abs() < 1e-12);
        assert!(!s.degenerate);
        let z = sigma_scheme1_from_residual(&[0.0, 0.0], 1.0);
        assert_eq!(z.sigma_hat, 0.0);
        assert!(z.degenerate);
    }

    #[test]
    fn scheme2_by_hand() {
        let s = sigma_scheme2_from_residual(&[-1.0, 0.0, 1.0], ResidualSource::MEst);
        assert!((s.sigma_hat - 1.4826).abs() < 1e-12);
        let c = sigma_scheme2_from_residual(&[2.0; 5], ResidualSource::Lad);
        assert_eq!(c.sigma_hat, 0.0);
        assert_eq!(c.scaled(3.0).sigma_hat, 0.0);
        assert_eq!(s.scaled(2.0).sigma_hat, 2.0 * s.sigma_hat);
    }

    #[test]
    fn scheme_consistency_on_gaussian_samples() {
        let mut r = rng(10);
        let n = 10_000;
        let v: Vec<f64> = (0..n).map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut r)).collect();
        let s2 = sigma_scheme2_from_residual(&v, ResidualSource::MEst).sigma_hat;
        assert!((0.97..=1.03).contains(&s2), "{s2}");
        let (prob, _) = random_problem(11, n, 3, 1.0);
        let s1 = sigma_scheme1(&prob).unwrap().sigma_hat;
        assert!((0.95..=1.05).contains(&s1), "{s1}");
    }

    #[test]
    fn rmap_deadzone_returns_ls() {
        let (prob, _) = random_problem(12, 30, 3, 1.0);
        let ls = ls_fit(&prob).unwrap();
        let lambda = 2.0 * ls.residual.amax();
        let est = rmap_fit_lambda(&prob, lambda, SigmaSource::True).unwrap();
        assert!(est.support.is_empty());
        assert!((&est.beta_hat - &ls.beta_hat).amax() < 1e-12);
    }

    /// Block coordinate descent on the joint `(b, g)` objective.
    fn rmap_cd_oracle(prob: &RegressionProblem, lambda: f64) -> f64 {
        let pinv = (prob.x().tr_mul(prob.x())).try_inverse().unwrap() * prob.x().transpose();
        let mut g = DVector::zeros(prob.n());
        let mut b = &pinv * prob.y();
        for _ in 0..200_000 {
            b = &pinv * (prob.y() - &g);
            let r = prob.y() - prob.x() * &b;
            for i in 0..prob.n() {
                g[i] = soft(r[i], lambda / 2.0);
            }
        }
        (prob.y() - prob.x() * &b - &g).norm_squared() + lambda * l1(&g)
    }

    #[test]
    fn rmap_matches_coordinate_descent() {
        for seed in 0..4 {
            let (prob, _) = random_problem(400 + seed, 8, 2, 0.3);
            let prob = with_spikes(&prob, &[(1, 6.0), (5, -4.0)]);
            let lambda = 0.8;
            let est = rmap_fit_lambda(&prob, lambda, SigmaSource::True).unwrap();
            let g = DVector::from_fn(8, |i, _| est.g_hat.iter().find(|e| e.0 == i).map_or(0.0, |e| e.1));
            let obj = (prob.y() - prob.x() * &est.beta_hat - &g).norm_squared() + lambda * l1(&g);
            let oracle = rmap_cd_oracle(&prob, lambda);
            assert!((obj - oracle).abs() <= 1e-7, "seed {seed}: {obj} vs {oracle}");
            assert_identity(&prob, &est);
        }
    }

    #[test]
    fn rmap_objective_nonincreasing() {
        let (prob, _) = random_problem(13, 60, 4, 0.2);
        let prob = with_spikes(&prob, &[(0, 5.0), (7, -9.0), (30, 3.0)]);
        let q = LsSolver::new(prob.x()).unwrap().q().clone();
        let path = rmap_solve(&q, prob.y(), rmap_lambda(0.2, 60), RMAP_MAX_ITER).unwrap();
        assert!(path.objectives.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-14)));
        assert!(path.gap <= RMAP_GAP_RTOL * prob.y().norm_squared());
    }

    #[test]
    fn rmap_rejects_bad_sigma_and_reports_cap() {
        let (prob, _) = random_problem(14, 20, 2, 1.0);
        assert!(rmap_fit(&prob, 0.0, SigmaSource::True).is_err());
        let prob = with_spikes(&prob, &[(2, 50.0)]);
        let q = LsSolver::new(prob.x()).unwrap().q().clone();
        assert!(matches!(rmap_solve(&q, prob.y(), 0.01, 1), Err(Error::NotConverged { .. })));
    }

    #[test]
    fn ipod_clean_returns_ls() {
        let (prob, _) = random_problem(15, 40, 3, 0.1);
        let est = ipod_fit(&prob, 1.0, SigmaSource::True).unwrap();
        let ls = ls_fit(&prob).unwrap();
        assert!(est.support.is_empty());
        assert!((&est.beta_hat - &ls.beta_hat).amax() < 1e-12);
    }

    #[test]
    fn ipod_single_large_outlier() {
        let sigma = 0.1;
        let (prob, _) = random_problem(16, 30, 2, sigma);
        let prob = with_spikes(&prob, &[(9, 100.0 * sigma)]);
        let est = ipod_fit(&prob, sigma, SigmaSource::True).unwrap();
        assert_eq!(est.support, vec![9]);
        assert!(!est.method.flags.iter().any(|f| f == "iteration-cap"));
        assert_identity(&prob, &est);
        // Fixed point: g = HT(y - Xβ, 5σ) and β = X†(y - g).
        let ls = LsSolver::new(prob.x()).unwrap();
        let g = hard_threshold(&(prob.y() - prob.x() * &est.beta_hat), 5.0 * sigma);
        assert_eq!(sparse(&g).iter().map(|e| e.0).collect::<Vec<_>>(), est.support);
        let b = ls.solve(&(prob.y() - &g)).unwrap();
        assert!((&b - &est.beta_hat).norm() < 1e-7);
    }

    #[test]
    fn reproject_recovers_planted_support() {
        let sigma = 0.01;
        let (prob, _) = random_problem(17, 50, 3, sigma);
        let prob = with_spikes(&prob, &[(4, 10.0), (20, -10.0), (33, 10.0)]);
        let base = m_estimate(&prob).unwrap();
        let est = reproject(&prob, &base, REPROJECT_GAMMA, sigma).unwrap();
        assert_eq!(est.support, vec![4, 20, 33]);
        assert_eq!(est.method.name, "m-est+reproject");
        assert_identity(&prob, &est);
    }

    #[test]
    fn reproject_all_below_is_ls() {
        let (prob, _) = random_problem(18, 30, 3, 0.1);
        let base = ls_fit(&prob).unwrap();
        let est = reproject(&prob, &base, 3.0, 100.0).unwrap();
        assert!(est.support.is_empty());
        assert!((&est.beta_hat - &base.beta_hat).amax() < 1e-12);
    }

    #[test]
    fn reproject_truncates_to_full_rank() {
        // Every residual is flagged; only n - p of them can be kept.
        let (prob, _) = random_problem(19, 10, 2, 1.0);
        let base = RobustEstimate::from_beta(&prob, DVector::from_element(2, 50.0), MethodInfo::new("x", SigmaSource::None));
        let est = reproject(&prob, &base, 1e-6, 1e-6).unwrap();
        assert_eq!(est.support.len(), prob.max_outliers());
        assert!(est.method.flags.contains(&"reproject-truncated".to_string()));
    }
}
