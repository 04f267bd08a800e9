//! Source-strength reconstruction from sampled correlation data with a known
//! obstacle, sweeping the Tikhonov parameter.
//!
//! Run with `cargo run --release --example source_inversion`.

use passive_scatter::cli::{relative_q_error, simulation_n_bdy, Experiment};
use passive_scatter::forward::assemble_nearfield;
use passive_scatter::inversion::{invert_source, InversionConfig};
use passive_scatter::scenarios::source_experiment;
use passive_scatter::stochastics::{empirical_covariance, synthesize_measurements};
use std::path::PathBuf;

fn main() -> passive_scatter::Result<()> {
    let exp = Experiment::from_config(source_experiment(11), PathBuf::new())?;
    let cfg = &exp.config;
    let shape = cfg.obstacle.as_ref();
    let g_sim = assemble_nearfield(shape, simulation_n_bdy(cfg.inversion.n_bdy), &exp.grid, &exp.meas, cfg.kappa)?;
    let set = synthesize_measurements(&g_sim, &exp.q_true, cfg.sampling.n_sample, cfg.sampling.beta, cfg.sampling.seed)?;
    let c_obs = empirical_covariance(&set)?;
    let g = assemble_nearfield(shape, cfg.inversion.n_bdy, &exp.grid, &exp.meas, cfg.kappa)?;
    println!("N_src = {}, N_meas = {}, N_sample = {}", exp.grid.len(), exp.meas.len(), cfg.sampling.n_sample);
    for alpha in [1e-6, 1e-5, 1e-4, 1e-3, 1e-2] {
        let inv = InversionConfig { alpha0: alpha, beta: cfg.sampling.beta, noise_variance: cfg.sampling.beta, cg_max: 2000, ..cfg.inversion.clone() };
        let out = invert_source(&c_obs, &g, &exp.grid, &inv)?;
        let it = &out.record.iterations[0];
        println!(
            "alpha = {alpha:8.1e}   relative error = {:.4}   CG iterations = {:4}   converged = {}",
            relative_q_error(&exp.grid, &out.q, &exp.q_true),
            it.cg_iterations,
            it.cg_converged
        );
    }
    Ok(())
}
