//! Near-field matrix and model covariance `C = G diag(q) G^H` for a star
//! obstacle between two source strips, written as PHLM1 and CSV.
//!
//! Run with `cargo run --release --example forward_covariance`.

use passive_scatter::cli::Experiment;
use passive_scatter::forward::{assemble_nearfield, covariance_forward, write_matrix_csv, write_phlm, MatrixKind};
use passive_scatter::scenarios::source_experiment;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

fn main() -> passive_scatter::Result<()> {
    let exp = Experiment::from_config(source_experiment(1), PathBuf::new())?;
    let cfg = &exp.config;
    let g = assemble_nearfield(cfg.obstacle.as_ref(), cfg.inversion.n_bdy, &exp.grid, &exp.meas, cfg.kappa)?;
    let c = covariance_forward(&g, &exp.q_true)?;
    println!("G is {} x {}, ||G||_F = {:.6e}", g.n_meas(), g.n_src(), g.entries.norm());
    println!("C is {0} x {0}, Hermitian defect {1:.2e}", c.dim(), c.hermitian_defect());
    let ev = c.eigenvalues();
    println!("eigenvalues of C: min {:.3e}, max {:.3e}", ev.iter().cloned().fold(f64::MAX, f64::min), ev.iter().cloned().fold(f64::MIN, f64::max));
    println!("L2 kernel norm on the receiver circle: {:.6e}", c.kernel_l2_norm(&exp.meas));
    let dir = std::env::temp_dir().join("passive-scatter-forward");
    std::fs::create_dir_all(&dir)?;
    write_phlm(&c.entries, MatrixKind::Covariance, BufWriter::new(File::create(dir.join("c.phlm"))?))?;
    write_matrix_csv(&c.entries, BufWriter::new(File::create(dir.join("c.csv"))?))?;
    println!("wrote {}", dir.display());
    Ok(())
}
