//! Bessel, Neumann and Hankel functions of orders 0 and 1 and the Helmholtz
//! fundamental solution, across the three evaluation regimes.
//!
//! Run with `cargo run --example special_functions`.

use passive_scatter::specfun::{bessel_j, bessel_y, fundamental_solution, hankel1, Point};

fn main() -> passive_scatter::Result<()> {
    println!("{:>8} {:>22} {:>22} {:>22} {:>22}", "x", "J0", "J1", "Y0", "Y1");
    for x in [1e-4, 0.5, 1.0, 2.404825557695773, 10.0, 24.9, 25.1, 100.0] {
        println!(
            "{x:>8.4} {:>22.15e} {:>22.15e} {:>22.15e} {:>22.15e}",
            bessel_j(0, x)?,
            bessel_j(1, x)?,
            bessel_y(0, x)?,
            bessel_y(1, x)?
        );
    }
    let h = hankel1(0, 3.0)?;
    println!("H0(3) = {:.15e} + {:.15e} i", h.re, h.im);
    let phi = fundamental_solution(&Point::new(0.0, 0.0), &Point::new(1.0, 0.0), std::f64::consts::PI)?;
    println!("Phi(0, e1) at kappa = pi: {:.15e} + {:.15e} i", phi.re, phi.im);
    Ok(())
}
