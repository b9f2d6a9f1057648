//! Robust linear regression with sparse outlier support recovery.
//!
//! The centrepiece is GARD, a greedy loop that flags the largest residual as
//! an outlier and refits a joint least-squares model on `[X, I_S]`, paired
//! with residual ratio thresholding (RRT) which picks the outlier support
//! from the GARD trace without knowing the noise variance, the inlier noise
//! norm, or the number of outliers.

pub mod acceptance;
pub mod baselines;
pub mod bench;
pub mod error;
pub mod estimate;
pub mod gard;
pub mod io;
pub mod linalg;
pub mod numerics;
pub mod rrt;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use linalg::{GroundTruth, JointEstimate, RegressionProblem};
