//! Synthetic data, Monte Carlo runs, theorem checks and box-plot screening.

pub mod boxplot;
pub mod presets;
pub mod runner;
pub mod synthetic;
pub mod theorem;

pub use boxplot::{boxplot_outliers, BoxPlot};
pub use runner::{run_monte_carlo, ExperimentReport, Grid, Method, MethodConfig, RunOptions, SigmaChoice};
pub use synthetic::{gen_synthetic, gen_synthetic_with, Design, NoiseLevel, OutlierModel, SyntheticSpec};
pub use theorem::{theorem_diagnostics, validate_theorem2, validate_theorem2_with, Theorem2Config};
