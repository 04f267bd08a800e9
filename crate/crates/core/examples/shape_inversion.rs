//! Gauss-Newton reconstruction of a disk of radius 0.8 from the circle of
//! radius 1.2, first from exact covariance data and then from 10^4 samples.
//!
//! Run with `cargo run --release --example shape_inversion`.

use passive_scatter::cli::{simulation_n_bdy, Experiment};
use passive_scatter::forward::{assemble_nearfield, covariance_forward};
use passive_scatter::geometry::hausdorff_distance;
use passive_scatter::inversion::{invert_shape, InversionConfig, RunRecord, ShapeProblem};
use passive_scatter::scenarios::disk_experiment;
use passive_scatter::stochastics::{empirical_covariance, synthesize_measurements};
use std::path::PathBuf;

fn report(label: &str, record: &RunRecord, h: f64) {
    println!("{label}: {} iterations, stop: {}", record.iterations.len(), record.stop_reason);
    for it in &record.iterations {
        println!(
            "  it {:2}  alpha {:.2e}  weighted residual {:.4e}  CG {:3}  halvings {}",
            it.iteration, it.alpha, it.weighted_residual, it.cg_iterations, it.step_halvings
        );
    }
    println!("  Hausdorff distance to the true disk: {h:.3e}");
}

fn main() -> passive_scatter::Result<()> {
    let exp = Experiment::from_config(disk_experiment(5), PathBuf::new())?;
    let cfg = &exp.config;
    let truth = cfg.obstacle.as_ref().expect("disk scenario has an obstacle");
    let init = cfg.initial_shape.as_ref().expect("disk scenario has an initial shape");

    let g = assemble_nearfield(Some(truth), cfg.inversion.n_bdy, &exp.grid, &exp.meas, cfg.kappa)?;
    let exact = covariance_forward(&g, &exp.q_true)?;
    let p = ShapeProblem { c_obs: &exact, grid: &exp.grid, meas: &exp.meas, kappa: cfg.kappa };
    let inv = InversionConfig { max_newton: 15, ..cfg.inversion.clone() };
    let out = invert_shape(&p, &exp.q_true, init, &inv)?;
    report("exact data", &out.record, hausdorff_distance(&out.shape, truth, 2048));

    let g_sim = assemble_nearfield(Some(truth), simulation_n_bdy(cfg.inversion.n_bdy), &exp.grid, &exp.meas, cfg.kappa)?;
    let set = synthesize_measurements(&g_sim, &exp.q_true, cfg.sampling.n_sample, cfg.sampling.beta, cfg.sampling.seed)?;
    let c_obs = empirical_covariance(&set)?;
    let p = ShapeProblem { c_obs: &c_obs, grid: &exp.grid, meas: &exp.meas, kappa: cfg.kappa };
    let inv = InversionConfig { noise_variance: cfg.sampling.beta, ..cfg.inversion.clone() };
    let out = invert_shape(&p, &exp.q_true, init, &inv)?;
    report("sampled data", &out.record, hausdorff_distance(&out.shape, truth, 2048));
    Ok(())
}
