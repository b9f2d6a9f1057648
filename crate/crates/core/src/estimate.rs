//! Common output type of every estimator.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::linalg::{JointEstimate, RegressionProblem};

/// Where an estimator's σ came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaSource {
    /// Supplied from outside (ground truth in simulations, `--sigma` on the CLI).
    True,
    /// Median of nonzero LAD residual magnitudes divided by 0.675.
    Scheme1,
    /// 1.4826 × MAD of a robust residual.
    Scheme2,
    /// The estimator does not use σ.
    None,
}

/// Residual ratio thresholding details attached to an RRT-GARD estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RrtInfo {
    pub alpha: f64,
    pub alpha_used: f64,
    pub fallback_engaged: bool,
    pub k_rrt: usize,
    pub k_max: usize,
}

/// Name, hyperparameters and provenance of an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodInfo {
    pub name: String,
    pub hyperparameters: Vec<(String, f64)>,
    pub sigma_source: SigmaSource,
    pub rrt: Option<RrtInfo>,
    /// Non-fatal conditions hit while fitting (fallbacks, caps, cycling).
    pub flags: Vec<String>,
}

impl MethodInfo {
    pub fn new(name: impl Into<String>, sigma_source: SigmaSource) -> Self {
        Self {
            name: name.into(),
            hyperparameters: Vec::new(),
            sigma_source,
            rrt: None,
            flags: Vec::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.hyperparameters.push((key.to_string(), value));
        self
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.hyperparameters.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustEstimate {
    pub beta_hat: DVector<f64>,
    /// Nonzero outlier estimates as `(index, value)`, sorted by index.
    pub g_hat: Vec<(usize, f64)>,
    /// Sorted outlier support, the indices of `g_hat`.
    pub support: Vec<usize>,
    /// `y - X β̂ - ĝ`.
    pub residual: DVector<f64>,
    pub method: MethodInfo,
}

impl RobustEstimate {
    /// Estimate with no outlier component.
    pub fn from_beta(problem: &RegressionProblem, beta_hat: DVector<f64>, method: MethodInfo) -> Self {
        let residual = problem.y() - problem.x() * &beta_hat;
        Self {
            beta_hat,
            g_hat: Vec::new(),
            support: Vec::new(),
            residual,
            method,
        }
    }

    pub fn from_joint(joint: JointEstimate, method: MethodInfo) -> Self {
        let mut g_hat = joint.g_hat;
        g_hat.sort_by_key(|&(i, _)| i);
        Self {
            support: g_hat.iter().map(|&(i, _)| i).collect(),
            beta_hat: joint.beta_hat,
            g_hat,
            residual: joint.residual,
            method,
        }
    }

    /// `y - X β̂`, the residual used for box-plot screening.
    pub fn regression_residual(&self, problem: &RegressionProblem) -> DVector<f64> {
        problem.y() - problem.x() * &self.beta_hat
    }

    /// Squared coefficient error against a known β.
    pub fn squared_error(&self, beta: &DVector<f64>) -> f64 {
        (&self.beta_hat - beta).norm_squared()
    }
}
