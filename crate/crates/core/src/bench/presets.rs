//! Named sweeps reproducing the synthetic experiments.

use crate::bench::runner::{log_grid, Cell, Grid, Method, MethodConfig, SigmaChoice};
use crate::bench::synthetic::{NoiseLevel, OutlierModel, SyntheticSpec};

pub const PRESETS: [&str; 7] = ["fig1", "fig3", "fig4", "fig5", "fig6", "fig7a", "gamma-asymptotics"];

const N: usize = 200;

/// `k_g / n` values for the MSE sweeps.
const OUTLIER_FRACTIONS: [f64; 8] = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4];

fn k_of(frac: f64) -> usize {
    (frac * N as f64).round() as usize
}

fn fraction_cells(p: usize, model: OutlierModel, noise: NoiseLevel, fracs: &[f64]) -> Vec<Cell> {
    fracs
        .iter()
        .filter(|&&f| k_of(f) < N - p)
        .map(|&f| Cell {
            x: f,
            spec: SyntheticSpec::new(N, p, k_of(f), model, noise),
        })
        .collect()
}

/// RRT-GARD and the reference LS fits, plus every σ-driven method under
/// each σ source.
fn comparison_methods() -> Vec<MethodConfig> {
    let mut m = vec![
        MethodConfig::new(Method::RrtGard { alpha: 0.1 }),
        MethodConfig::new(Method::MEst),
        MethodConfig::new(Method::Ls),
        MethodConfig::new(Method::LsOracle),
    ];
    for sigma in [SigmaChoice::True, SigmaChoice::Scheme1, SigmaChoice::Scheme2] {
        for method in [Method::Gard, Method::rmap_reprojected(), Method::ipod_reprojected()] {
            m.push(MethodConfig::new(method).with_sigma(sigma));
        }
    }
    m
}

/// Grid for a Monte Carlo preset; `None` for unknown names and for the
/// presets that are not grid sweeps (`fig1`, `gamma-asymptotics`).
pub fn preset_grid(name: &str) -> Option<Grid> {
    let grid = match name {
        "fig3" => Grid {
            name: name.into(),
            x_label: "sigma2".into(),
            cells: log_grid(1e-3, 10.0, 5)
                .into_iter()
                .map(|s2| Cell {
                    x: s2,
                    spec: SyntheticSpec::new(N, 10, 20, OutlierModel::Model1, NoiseLevel::Variance(s2)),
                })
                .collect(),
            methods: vec![
                MethodConfig::new(Method::RrtGard { alpha: 0.1 }),
                MethodConfig::new(Method::RrtGard { alpha: 0.2 }),
                MethodConfig::new(Method::BestAlpha {
                    alphas: log_grid(1e-6, 10.0, 100),
                }),
                MethodConfig::new(Method::Gard),
                MethodConfig::new(Method::Ls),
                MethodConfig::new(Method::LsOracle),
            ],
        },
        "fig4" => Grid {
            name: name.into(),
            x_label: "k_g/n".into(),
            cells: fraction_cells(10, OutlierModel::Model1, NoiseLevel::Variance(1.0), &OUTLIER_FRACTIONS),
            methods: comparison_methods(),
        },
        "fig5" => Grid {
            name: name.into(),
            x_label: "k_g/n".into(),
            cells: fraction_cells(10, OutlierModel::Model2, NoiseLevel::Median16, &OUTLIER_FRACTIONS),
            methods: comparison_methods(),
        },
        "fig6" => Grid {
            name: name.into(),
            x_label: "k_g/n".into(),
            cells: fraction_cells(50, OutlierModel::Model2, NoiseLevel::Median16, &OUTLIER_FRACTIONS[..6]),
            methods: comparison_methods(),
        },
        "fig7a" => Grid {
            name: name.into(),
            x_label: "k_g/n".into(),
            cells: fraction_cells(10, OutlierModel::Model2, NoiseLevel::Median16, &[0.05, 0.1, 0.15, 0.2, 0.25, 0.3]),
            methods: vec![
                MethodConfig::new(Method::Gard).with_sigma(SigmaChoice::Scheme1),
                MethodConfig::new(Method::Gard).with_sigma(SigmaChoice::Scheme2),
            ],
        },
        _ => return None,
    };
    Some(grid)
}
