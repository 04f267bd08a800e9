//! Ready-made experiment configurations used by the examples and the
//! acceptance suite. Obstacles are star-shaped and strengths are Gaussian
//! bumps on a constant floor.

use crate::cli::{Bump, ExperimentConfig, MeasurementConfig, SamplingConfig, StrengthSpec};
use crate::forward::Region;
use crate::geometry::StarShape;
use crate::inversion::{InversionConfig, InversionMode};
use std::f64::consts::PI;

/// Two vertical strips `[-x_out, -x_in] x [-h, h]` and `[x_in, x_out] x [-h, h]`
/// of `nx x ny` cells each, with `h = 1.5 + 1.5 / (ny - 1)` so that cell
/// centres span `[-1.5, 1.5]`.
pub fn twin_strips(x_in: f64, x_out: f64, nx: usize, ny: usize) -> Vec<Region> {
    let h = 1.5 + 1.5 / (ny as f64 - 1.0);
    vec![
        Region::Rectangle { xmin: -x_out, xmax: -x_in, ymin: -h, ymax: h, nx, ny },
        Region::Rectangle { xmin: x_in, xmax: x_out, ymin: -h, ymax: h, nx, ny },
    ]
}

/// Source-strength reconstruction: `kappa = pi`, `R = 5`, 32 receivers,
/// 288 cells in two strips, a known star-shaped obstacle near the origin and
/// a two-bump strength profile.
pub fn source_experiment(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        kappa: PI,
        measurement: MeasurementConfig { radius: 5.0, n_meas: 32 },
        source_regions: twin_strips(1.95, 2.55, 6, 24),
        n_src: Some(288),
        obstacle: Some(StarShape::new([0.0, 0.0], vec![1.0, 0.0, 0.08, 0.0], vec![0.0, 0.0, 0.04]).expect("valid")),
        strength: StrengthSpec::Bumps {
            floor: 2.0,
            bumps: vec![
                Bump { center: [-2.25, 0.6], width: 0.5, amplitude: 30.0 },
                Bump { center: [2.25, -0.5], width: 0.5, amplitude: 20.0 },
            ],
        },
        sampling: SamplingConfig { n_sample: 10_000, beta: 0.01, seed },
        inversion: InversionConfig { mode: InversionMode::Source, alpha0: 1e-5, noise_variance: 0.01, cg_max: 2000, ..InversionConfig::default() },
        initial_shape: None,
        initial_strength: None,
        output_dir: None,
    }
}

/// Disk of radius 0.8 imaged from the strips of [`source_experiment`] with
/// unit strength, starting from the circle of radius 1.2 (`kappa = pi`).
pub fn disk_experiment(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        kappa: PI,
        measurement: MeasurementConfig { radius: 5.0, n_meas: 32 },
        source_regions: twin_strips(1.95, 2.55, 6, 24),
        n_src: Some(288),
        obstacle: Some(StarShape::circle([0.0, 0.0], 0.8, 0).expect("valid")),
        strength: StrengthSpec::Constant { value: 1.0 },
        sampling: SamplingConfig { n_sample: 10_000, beta: 0.01, seed },
        inversion: InversionConfig { mode: InversionMode::Shape, alpha0: 1e-2, noise_variance: 0.01, ..InversionConfig::default() },
        initial_shape: Some(StarShape::circle([0.0, 0.0], 1.2, 4).expect("valid")),
        initial_strength: None,
        output_dir: None,
    }
}

/// Star-shaped analog of the off-centre obstacle used for shape imaging at
/// `kappa = 2.5 pi / 2`.
pub fn star_analog() -> StarShape {
    StarShape::new([0.2, 0.55], vec![0.55, 0.0, 0.12, 0.0], vec![0.0, 0.0, 0.06]).expect("valid")
}

/// Shape reconstruction of [`star_analog`] with known strength: `R = 5`,
/// 32 receivers, 288 cells.
pub fn shape_experiment(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        kappa: 2.5 * PI / 2.0,
        measurement: MeasurementConfig { radius: 5.0, n_meas: 32 },
        source_regions: twin_strips(1.45, 2.05, 6, 24),
        n_src: Some(288),
        obstacle: Some(star_analog()),
        strength: StrengthSpec::Constant { value: 1.0 },
        sampling: SamplingConfig { n_sample: 10_000, beta: 0.01, seed },
        inversion: InversionConfig { mode: InversionMode::Shape, alpha0: 1e-2, noise_variance: 0.01, ..InversionConfig::default() },
        initial_shape: Some(StarShape::circle([0.0, 0.5], 0.6, 5).expect("valid")),
        initial_strength: None,
        output_dir: None,
    }
}

/// Joint shape and strength reconstruction: `kappa = 2.5 pi / 2`, `R = 4`,
/// 32 receivers, 128 cells in two strips.
pub fn joint_experiment(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        kappa: 2.5 * PI / 2.0,
        measurement: MeasurementConfig { radius: 4.0, n_meas: 32 },
        source_regions: twin_strips(1.45, 2.05, 4, 16),
        n_src: Some(128),
        obstacle: Some(star_analog()),
        strength: StrengthSpec::Bumps {
            floor: 1.0,
            bumps: vec![
                Bump { center: [-1.75, 0.5], width: 0.6, amplitude: 12.0 },
                Bump { center: [1.75, -0.6], width: 0.6, amplitude: 8.0 },
            ],
        },
        sampling: SamplingConfig { n_sample: 10_000, beta: 0.01, seed },
        inversion: InversionConfig { mode: InversionMode::Joint, alpha0: 1e-2, noise_variance: 0.01, ..InversionConfig::default() },
        initial_shape: Some(StarShape::circle([0.0, 0.5], 0.6, 5).expect("valid")),
        initial_strength: Some(4.0),
        output_dir: None,
    }
}
