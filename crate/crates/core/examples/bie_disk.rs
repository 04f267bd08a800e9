//! Exterior Dirichlet Green function of the unit disk by the boundary
//! integral solver, compared with the cylindrical-harmonics series, and its
//! spectral convergence in the number of boundary nodes.
//!
//! Run with `cargo run --release --example bie_disk`.

use passive_scatter::bie::ExteriorSolver;
use passive_scatter::geometry::{discretize, StarShape};
use passive_scatter::oracles::disk;
use passive_scatter::specfun::Point;
use std::f64::consts::PI;

fn main() -> passive_scatter::Result<()> {
    let shape = StarShape::circle([0.0, 0.0], 1.0, 0)?;
    let x = Point::new(2.0, 0.5);
    let y = Point::new(-1.5, 2.5);
    let exact = disk::green(PI, 1.0, &x, &y);
    println!("series G_D(x, y) = {:.15e} + {:.15e} i", exact.re, exact.im);
    for n in [16, 24, 32, 48, 64, 128] {
        let solver = ExteriorSolver::build(discretize(&shape, n)?, PI)?;
        let g = solver.green_function(&x, &y)?;
        println!(
            "N_bdy = {n:3}  relative error {:.3e}  condition estimate {:.2e}",
            (g - exact).norm() / exact.norm(),
            solver.info().condition_estimate
        );
    }
    Ok(())
}
