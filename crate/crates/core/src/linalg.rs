//! Dense kernels: QR factorization, joint least squares on `[X, I_S]`, and
//! the principal-angle quantity δ between span(X) and coordinate subspaces.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{domain, Error, Result};

/// A triangular diagonal entry below `RANK_RTOL * max |diag|` marks rank deficiency.
pub const RANK_RTOL: f64 = 1e-10;

/// Response vector and design matrix. Ground truth for synthetic runs lives
/// in [`GroundTruth`] and is kept out of this type so estimators cannot see it.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    y: DVector<f64>,
    x: DMatrix<f64>,
}

impl RegressionProblem {
    /// Validates `n > p ≥ 1` and full column rank of `X`.
    pub fn new(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if y.len() != n {
            return Err(Error::Dimension(format!("y has {} rows, X has {n}", y.len())));
        }
        if p == 0 || n <= p {
            return domain(format!("need n > p >= 1, got n={n}, p={p}"));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return domain("non-finite entry in problem data");
        }
        qr_factor(&x)?;
        Ok(Self { y, x })
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Largest support size for which `[X, I_S]` can still have full column rank.
    pub fn max_outliers(&self) -> usize {
        self.n() - self.p()
    }
}

/// Ground truth of a synthetic draw.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub beta: DVector<f64>,
    /// Sorted outlier indices (0-based).
    pub outlier_support: Vec<usize>,
    /// Outlier values aligned with `outlier_support`.
    pub outlier_values: Vec<f64>,
    pub sigma2: f64,
    /// The inlier noise realisation.
    pub noise: DVector<f64>,
}

impl GroundTruth {
    pub fn k_g(&self) -> usize {
        self.outlier_support.len()
    }

    /// Dense outlier vector of length `n`.
    pub fn outlier_vector(&self, n: usize) -> DVector<f64> {
        let mut g = DVector::zeros(n);
        for (&i, &v) in self.outlier_support.iter().zip(&self.outlier_values) {
            g[i] = v;
        }
        g
    }
}

/// Thin QR factors of a tall matrix.
#[derive(Debug, Clone)]
pub struct QrFactors {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

fn check_rank(r: &DMatrix<f64>) -> Result<()> {
    let diag = r.diagonal().map(f64::abs);
    let largest = diag.max();
    let tol = RANK_RTOL * largest;
    match diag.iter().copied().find(|d| !(*d >= tol) || *d == 0.0) {
        Some(d) => Err(Error::RankDeficient { diag: d, tol }),
        None => Ok(()),
    }
}

/// Householder QR, `X = Q R` with `Q` n×p orthonormal and `R` p×p upper triangular.
pub fn qr_factor(x: &DMatrix<f64>) -> Result<QrFactors> {
    let (n, p) = x.shape();
    if n < p || p == 0 {
        return domain(format!("qr_factor needs a tall nonempty matrix, got {n}x{p}"));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    check_rank(&r)?;
    Ok(QrFactors { q: qr.q(), r })
}

/// Applies `(I - Q Qᵀ)` to `v` for orthonormal `Q`.
pub fn project_out(q: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let coef = q.tr_mul(v);
    v - q * coef
}

/// Joint estimate of regression coefficients and outliers on a support.
#[derive(Debug, Clone, PartialEq)]
pub struct JointEstimate {
    pub beta_hat: DVector<f64>,
    /// `(index, value)` pairs in the order the support was given.
    pub g_hat: Vec<(usize, f64)>,
    pub residual: DVector<f64>,
    pub residual_norm: f64,
}

/// `[X, I_S]` with the identity columns appended in the given order.
pub fn augmented_matrix(x: &DMatrix<f64>, support: &[usize]) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut a = DMatrix::zeros(n, p + support.len());
    a.view_mut((0, 0), (n, p)).copy_from(x);
    for (j, &i) in support.iter().enumerate() {
        a[(i, p + j)] = 1.0;
    }
    a
}

/// Least squares on `[X, I_S]`, factored from scratch.
pub fn joint_ls(problem: &RegressionProblem, support: &[usize]) -> Result<JointEstimate> {
    let (n, p) = problem.x.shape();
    if let Some(&bad) = support.iter().find(|&&i| i >= n) {
        return domain(format!("support index {bad} out of range for n={n}"));
    }
    let mut seen = vec![false; n];
    for &i in support {
        if std::mem::replace(&mut seen[i], true) {
            return domain(format!("support index {i} repeated"));
        }
    }
    if p + support.len() > n {
        return Err(Error::RankDeficient { diag: 0.0, tol: 0.0 });
    }
    let a = augmented_matrix(&problem.x, support);
    let QrFactors { q, r } = qr_factor(&a)?;
    let qty = q.tr_mul(&problem.y);
    let z = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    let residual = &problem.y - &a * &z;
    let beta_hat = z.rows(0, p).into_owned();
    let g_hat = support.iter().enumerate().map(|(j, &i)| (i, z[p + j])).collect();
    Ok(JointEstimate {
        residual_norm: residual.norm(),
        beta_hat,
        g_hat,
        residual,
    })
}

/// Largest singular value of the row block `Q[S, :]`, the cosine of the
/// smallest principal angle between span(Q) and span(I_S).
pub fn delta_subset(q: &DMatrix<f64>, support: &[usize]) -> Result<f64> {
    if support.is_empty() {
        return domain("delta_subset needs a nonempty index set");
    }
    let (n, p) = q.shape();
    if let Some(&bad) = support.iter().find(|&&i| i >= n) {
        return domain(format!("index {bad} out of range for n={n}"));
    }
    let mut block = DMatrix::zeros(support.len(), p);
    for (r, &i) in support.iter().enumerate() {
        block.row_mut(r).copy_from(&q.row(i));
    }
    let sv = block.singular_values();
    Ok(sv.max().clamp(0.0, 1.0))
}

/// Exhaustive δ over all subsets of a given size.
#[derive(Debug, Clone)]
pub struct DeltaTable {
    /// Minimum over subsets, as in the textbook definition.
    pub delta_min: f64,
    /// δ for every subset, keyed by the sorted index list.
    pub delta_at: BTreeMap<Vec<usize>, f64>,
}

/// Largest `n` accepted by [`delta_kg_bruteforce`].
pub const BRUTEFORCE_MAX_N: usize = 25;
/// Largest subset size accepted by [`delta_kg_bruteforce`].
pub const BRUTEFORCE_MAX_K: usize = 3;

/// Enumerates every `k_g`-subset of rows. Only for tiny problems.
pub fn delta_kg_bruteforce(q: &DMatrix<f64>, k_g: usize) -> Result<DeltaTable> {
    let n = q.nrows();
    if n > BRUTEFORCE_MAX_N || k_g > BRUTEFORCE_MAX_K {
        return Err(Error::Capacity(format!(
            "brute-force delta limited to n <= {BRUTEFORCE_MAX_N}, k_g <= {BRUTEFORCE_MAX_K} (got n={n}, k_g={k_g})"
        )));
    }
    if k_g == 0 || k_g > n {
        return domain(format!("k_g must be in 1..={n}, got {k_g}"));
    }
    let mut delta_at = BTreeMap::new();
    let mut idx: Vec<usize> = (0..k_g).collect();
    loop {
        delta_at.insert(idx.clone(), delta_subset(q, &idx)?);
        // next combination in lexicographic order
        let mut i = k_g;
        while i > 0 && idx[i - 1] == n - k_g + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        idx[i - 1] += 1;
        for j in i..k_g {
            idx[j] = idx[j - 1] + 1;
        }
    }
    let delta_min = delta_at.values().copied().fold(f64::INFINITY, f64::min);
    Ok(DeltaTable { delta_min, delta_at })
}
