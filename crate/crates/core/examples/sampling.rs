//! Monte-Carlo measurements and the empirical covariance: the Frobenius
//! error against `G M_q G^H + beta I` decays like `N_sample^{-1/2}`.
//!
//! Run with `cargo run --release --example sampling`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use passive_scatter::cli::Experiment;
use passive_scatter::forward::{assemble_nearfield, covariance_forward};
use passive_scatter::scenarios::source_experiment;
use passive_scatter::stochastics::{build_weight, empirical_covariance, synthesize_measurements};
use std::path::PathBuf;

fn main() -> passive_scatter::Result<()> {
    let exp = Experiment::from_config(source_experiment(1), PathBuf::new())?;
    let cfg = &exp.config;
    let beta = cfg.sampling.beta;
    let g = assemble_nearfield(cfg.obstacle.as_ref(), cfg.inversion.n_bdy, &exp.grid, &exp.meas, cfg.kappa)?;
    let n = exp.meas.len();
    let exact = covariance_forward(&g, &exp.q_true)?.entries + DMatrix::<Complex64>::identity(n, n) * Complex64::new(beta, 0.0);
    println!("{:>8} {:>14} {:>16}", "N", "rel. error", "error * sqrt(N)");
    for n_sample in [250, 1_000, 4_000, 16_000, 64_000] {
        let set = synthesize_measurements(&g, &exp.q_true, n_sample, beta, 17)?;
        let c_obs = empirical_covariance(&set)?;
        let err = (&c_obs.entries - &exact).norm() / exact.norm();
        println!("{n_sample:>8} {err:>14.4e} {:>16.4}", err * (n_sample as f64).sqrt());
    }
    let set = synthesize_measurements(&g, &exp.q_true, 10_000, beta, 17)?;
    let w = build_weight(&empirical_covariance(&set)?, beta)?;
    let ev = &w.eigenvalues;
    println!("weight base eigenvalues in [{:.3e}, {:.3e}]", ev.min(), ev.max());
    Ok(())
}
