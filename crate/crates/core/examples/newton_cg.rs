//! Shape reconstruction of an off-centre star-shaped obstacle from 10^4
//! samples, comparing iteratively regularised Gauss-Newton with Newton-CG.
//!
//! Run with `cargo run --release --example newton_cg`.

use passive_scatter::cli::{simulation_n_bdy, Experiment};
use passive_scatter::forward::assemble_nearfield;
use passive_scatter::geometry::hausdorff_distance;
use passive_scatter::inversion::{invert_shape, invert_shape_newton_cg, RunRecord, ShapeProblem};
use passive_scatter::scenarios::shape_experiment;
use passive_scatter::stochastics::{empirical_covariance, synthesize_measurements};
use std::path::PathBuf;

fn report(label: &str, record: &RunRecord, h: f64) {
    println!("{label}: {} iterations, stop: {}", record.iterations.len(), record.stop_reason);
    for it in &record.iterations {
        println!(
            "  it {:2}  weighted residual {:.4e}  CG {:3}  update {:.3e}  halvings {}",
            it.iteration, it.weighted_residual, it.cg_iterations, it.update_norm, it.step_halvings
        );
    }
    println!("  Hausdorff distance to the truth: {h:.3}");
}

fn main() -> passive_scatter::Result<()> {
    let exp = Experiment::from_config(shape_experiment(3), PathBuf::new())?;
    let cfg = &exp.config;
    let truth = cfg.obstacle.as_ref().expect("scenario has an obstacle");
    let init = cfg.initial_shape.as_ref().expect("scenario has an initial shape");
    let g_sim = assemble_nearfield(Some(truth), simulation_n_bdy(cfg.inversion.n_bdy), &exp.grid, &exp.meas, cfg.kappa)?;
    let set = synthesize_measurements(&g_sim, &exp.q_true, cfg.sampling.n_sample, cfg.sampling.beta, cfg.sampling.seed)?;
    let c_obs = empirical_covariance(&set)?;
    let p = ShapeProblem { c_obs: &c_obs, grid: &exp.grid, meas: &exp.meas, kappa: cfg.kappa };
    println!("initial Hausdorff distance: {:.3}", hausdorff_distance(init, truth, 2048));
    let gn = invert_shape(&p, &exp.q_true, init, &cfg.inversion)?;
    report("Gauss-Newton", &gn.record, hausdorff_distance(&gn.shape, truth, 2048));
    let ncg = invert_shape_newton_cg(&p, &exp.q_true, init, &cfg.inversion)?;
    report("Newton-CG", &ncg.record, hausdorff_distance(&ncg.shape, truth, 2048));
    Ok(())
}
