//! Synthetic regression problems with planted sparse outliers.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baselines::median;
use crate::error::{domain, Result};
use crate::linalg::{GroundTruth, RegressionProblem};

pub const MODEL1_MAGNITUDE: f64 = 10.0;
/// Model 2 components are `N(±12σ, (4σ)²)`.
pub const MODEL2_MEAN: f64 = 12.0;
pub const MODEL2_SD: f64 = 4.0;
/// `σ = median |(Xβ)_j| / MEDIAN16_DIVISOR` under [`NoiseLevel::Median16`].
pub const MEDIAN16_DIVISOR: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutlierModel {
    /// Values drawn uniformly from `{+10, −10}`.
    Model1,
    /// Every outlier fixed at `+10`.
    Model1Positive,
    /// Equal mixture of `N(12σ, 16σ²)` and `N(−12σ, 16σ²)`.
    Model2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseLevel {
    Variance(f64),
    /// `σ = median |(Xβ)_j| / 16`, computed per draw.
    Median16,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    /// `N(0, 1)` entries, each column scaled to unit ℓ₂ norm.
    GaussianNormalizedColumns,
    /// `N(0, 1)` entries.
    GaussianUnitVariance,
    /// `N(0, 1/n)` entries.
    GaussianScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub k_g: usize,
    pub outlier_model: OutlierModel,
    pub noise: NoiseLevel,
    pub design: Design,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Normalized-column Gaussian design with ±1 coefficients.
    pub fn new(n: usize, p: usize, k_g: usize, outlier_model: OutlierModel, noise: NoiseLevel) -> Self {
        Self {
            n,
            p,
            k_g,
            outlier_model,
            noise,
            design: Design::GaussianNormalizedColumns,
            seed: 0,
        }
    }

    /// `n = 50`, `p = 10`, five outliers at `+10`, `N(0, 1/n)` design.
    pub fn residual_ratio_study(sigma2: f64) -> Self {
        Self {
            design: Design::GaussianScaled,
            ..Self::new(50, 10, 5, OutlierModel::Model1Positive, NoiseLevel::Variance(sigma2))
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.n <= self.p {
            return domain(format!("need n > p >= 1, got n={}, p={}", self.n, self.p));
        }
        if self.k_g >= self.n - self.p {
            return domain(format!("k_g must be below n - p = {}, got {}", self.n - self.p, self.k_g));
        }
        if let NoiseLevel::Variance(s2) = self.noise {
            if !(s2 >= 0.0) || !s2.is_finite() {
                return domain(format!("sigma² must be finite and nonnegative, got {s2}"));
            }
        }
        Ok(())
    }
}

/// Draws one problem from `spec.seed`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(RegressionProblem, GroundTruth)> {
    gen_synthetic_with(spec, &mut ChaCha8Rng::seed_from_u64(spec.seed))
}

/// Draws one problem from a caller-supplied stream, ignoring `spec.seed`.
/// Draw order: X, β, support, outlier values, noise.
pub fn gen_synthetic_with<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<(RegressionProblem, GroundTruth)> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    let mut x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng));
    match spec.design {
        Design::GaussianNormalizedColumns => {
            for mut col in x.column_iter_mut() {
                let norm = col.norm();
                col /= norm;
            }
        }
        Design::GaussianUnitVariance => {}
        Design::GaussianScaled => x /= (n as f64).sqrt(),
    }
    let beta = DVector::from_fn(p, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
    let signal = &x * &beta;
    let sigma = match spec.noise {
        NoiseLevel::Variance(s2) => s2.sqrt(),
        NoiseLevel::Median16 => {
            let mags: Vec<f64> = signal.iter().map(|v| v.abs()).collect();
            median(&mags).unwrap_or(0.0) / MEDIAN16_DIVISOR
        }
    };
    let mut support = index::sample(rng, n, spec.k_g).into_vec();
    support.sort_unstable();
    let outlier_values: Vec<f64> = support
        .iter()
        .map(|_| match spec.outlier_model {
            OutlierModel::Model1 => {
                if rng.random::<bool>() {
                    MODEL1_MAGNITUDE
                } else {
                    -MODEL1_MAGNITUDE
                }
            }
            OutlierModel::Model1Positive => MODEL1_MAGNITUDE,
            OutlierModel::Model2 => {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let z: f64 = StandardNormal.sample(rng);
                sign * MODEL2_MEAN * sigma + MODEL2_SD * sigma * z
            }
        })
        .collect();
    let noise = if sigma > 0.0 {
        let dist = Normal::new(0.0, sigma).map_err(|e| crate::Error::Numeric(e.to_string()))?;
        DVector::from_fn(n, |_, _| dist.sample(rng))
    } else {
        DVector::zeros(n)
    };
    let truth = GroundTruth {
        beta,
        outlier_support: support,
        outlier_values,
        sigma2: sigma * sigma,
        noise,
    };
    let y = signal + truth.outlier_vector(n) + &truth.noise;
    Ok((RegressionProblem::new(y, x)?, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model1_magnitudes_and_reproducibility() {
        let spec = SyntheticSpec::new(200, 10, 20, OutlierModel::Model1, NoiseLevel::Variance(1.0)).with_seed(3);
        let (a, ta) = gen_synthetic(&spec).unwrap();
        let (b, tb) = gen_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(ta.outlier_values.iter().all(|v| v.abs() == 10.0));
        assert!(ta.outlier_values.iter().any(|&v| v > 0.0) && ta.outlier_values.iter().any(|&v| v < 0.0));
        assert_eq!(ta.k_g(), 20);
        assert!(ta.outlier_support.windows(2).all(|w| w[0] < w[1]));
        for c in a.x().column_iter() {
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }
        assert!(ta.beta.iter().all(|b| b.abs() == 1.0));
    }

    #[test]
    fn noiseless_identity_is_exact() {
        let spec = SyntheticSpec::new(40, 4, 5, OutlierModel::Model1, NoiseLevel::Variance(0.0)).with_seed(1);
        let (prob, truth) = gen_synthetic(&spec).unwrap();
        let rest = prob.y() - prob.x() * &truth.beta - truth.outlier_vector(40);
        assert!(rest.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn positive_variant_and_scaled_design() {
        let (prob, truth) = gen_synthetic(&SyntheticSpec::residual_ratio_study(1.0).with_seed(9)).unwrap();
        assert!(truth.outlier_values.iter().all(|&v| v == 10.0));
        assert_eq!((prob.n(), prob.p(), truth.k_g()), (50, 10, 5));
    }

    #[test]
    fn rejects_too_many_outliers() {
        let spec = SyntheticSpec::new(20, 5, 15, OutlierModel::Model1, NoiseLevel::Variance(1.0));
        assert!(gen_synthetic(&spec).is_err());
    }

    /// `E|G|` for the two-component mixture by Simpson quadrature of
    /// `|t| φ((t − 12)/4)/4` on σ = 1.
    fn mixture_abs_mean() -> f64 {
        let pdf = |t: f64| (-(t - MODEL2_MEAN).powi(2) / (2.0 * MODEL2_SD * MODEL2_SD)).exp() / (MODEL2_SD * (2.0 * std::f64::consts::PI).sqrt());
        let (a, b, m) = (-40.0, 64.0, 20_000);
        let h = (b - a) / m as f64;
        let mut s = 0.0;
        for i in 0..=m {
            let t = a + i as f64 * h;
            let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * t.abs() * pdf(t);
        }
        s * h / 3.0
    }

    #[test]
    fn model2_mean_magnitude_matches_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = SyntheticSpec::new(100, 5, 90, OutlierModel::Model2, NoiseLevel::Median16);
        let mut ratio_sum = 0.0;
        let mut count = 0usize;
        while count < 100_000 {
            let (_, t) = gen_synthetic_with(&spec, &mut rng).unwrap();
            let sigma = t.sigma2.sqrt();
            for v in &t.outlier_values {
                ratio_sum += v.abs() / sigma;
            }
            count += t.k_g();
        }
        let mean = ratio_sum / count as f64;
        let oracle = mixture_abs_mean();
        // sd of |G| ≈ 4, so the standard error is about 0.013.
        assert!((mean - oracle).abs() < 0.06, "{mean} vs {oracle}");
    }
}
