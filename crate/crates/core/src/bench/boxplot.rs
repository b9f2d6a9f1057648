//! Tukey box-plot screening of regression residuals.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

pub const FENCE_MULT: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPlot {
    /// 0-based indices outside the fences.
    pub flagged: Vec<usize>,
    pub lo: f64,
    pub hi: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Linear interpolation between order statistics at `h = (n-1) prob`.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Flags entries outside `[Q1 − 1.5 IQR, Q3 + 1.5 IQR]`. With `IQR = 0`
/// every entry that differs from the median is flagged.
pub fn boxplot_outliers(residual: &[f64]) -> Result<BoxPlot> {
    if residual.len() < 4 {
        return domain(format!("box plot needs at least 4 values, got {}", residual.len()));
    }
    if residual.iter().any(|v| !v.is_finite()) {
        return domain("box plot input has a non-finite value");
    }
    let mut sorted = residual.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = if iqr == 0.0 {
        (median, median)
    } else {
        (q1 - FENCE_MULT * iqr, q3 + FENCE_MULT * iqr)
    };
    let flagged = residual
        .iter()
        .enumerate()
        .filter(|(_, &r)| r < lo || r > hi)
        .map(|(i, _)| i)
        .collect();
    Ok(BoxPlot {
        flagged,
        lo,
        hi,
        q1,
        median,
        q3,
    })
}
