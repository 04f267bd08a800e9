//! Joint reconstruction of an off-centre star-shaped obstacle and a two-bump
//! source strength from 10^4 samples.
//!
//! Run with `cargo run --release --example joint_inversion`.

use passive_scatter::cli::{relative_q_error, simulation_n_bdy, Experiment};
use passive_scatter::forward::assemble_nearfield;
use passive_scatter::geometry::hausdorff_distance;
use passive_scatter::inversion::{invert_joint, ShapeProblem};
use passive_scatter::scenarios::joint_experiment;
use passive_scatter::stochastics::{empirical_covariance, synthesize_measurements};
use std::path::PathBuf;

fn main() -> passive_scatter::Result<()> {
    let exp = Experiment::from_config(joint_experiment(7), PathBuf::new())?;
    let cfg = &exp.config;
    let truth = cfg.obstacle.as_ref().expect("joint scenario has an obstacle");
    let init = cfg.initial_shape.as_ref().expect("joint scenario has an initial shape");
    let g_sim = assemble_nearfield(Some(truth), simulation_n_bdy(cfg.inversion.n_bdy), &exp.grid, &exp.meas, cfg.kappa)?;
    let set = synthesize_measurements(&g_sim, &exp.q_true, cfg.sampling.n_sample, cfg.sampling.beta, cfg.sampling.seed)?;
    let c_obs = empirical_covariance(&set)?;
    let p = ShapeProblem { c_obs: &c_obs, grid: &exp.grid, meas: &exp.meas, kappa: cfg.kappa };
    let q0 = vec![cfg.initial_strength.unwrap_or(1.0); exp.grid.len()];
    println!(
        "initial: Hausdorff {:.3}, relative q error {:.3}",
        hausdorff_distance(init, truth, 2048),
        relative_q_error(&exp.grid, &q0, &exp.q_true)
    );
    let out = invert_joint(&p, init, &q0, &cfg.inversion, false)?;
    for it in &out.record.iterations {
        println!(
            "  it {:2}  alpha {:.2e}  weighted residual {:.4e}  CG {:3}  halvings {}",
            it.iteration, it.alpha, it.weighted_residual, it.cg_iterations, it.step_halvings
        );
    }
    println!(
        "final: Hausdorff {:.3}, relative q error {:.3} ({})",
        hausdorff_distance(&out.shape, truth, 2048),
        relative_q_error(&exp.grid, &out.q, &exp.q_true),
        out.record.stop_reason
    );
    Ok(())
}
