//! Domain derivative of the covariance, its adjoint and the misfit gradient,
//! checked against the inner-product identity and finite differences.
//!
//! Run with `cargo run --release --example derivative_check`.

use passive_scatter::verify::{adjoint_identity_mismatch, gradient_check};

fn main() -> passive_scatter::Result<()> {
    println!("adjoint identity, worst relative mismatch over 50 triples: {:.3e}", adjoint_identity_mismatch(50, 1)?);
    for eps in [1e-3, 1e-4, 1e-5, 1e-6] {
        println!("central differences, eps = {eps:.0e}: worst relative gradient error {:.3e}", gradient_check(10, eps, 2)?);
    }
    Ok(())
}
