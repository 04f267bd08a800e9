//! Closed-form reference solutions used by the verification suite and tests.

/// Separation-of-variables solution for a sound-soft disk centred at the origin.
pub mod disk {
    use crate::specfun::{bessel_pair, Point};
    use num_complex::Complex64;
    use std::f64::consts::PI;

    /// Highest cylindrical-harmonic order retained in the series.
    pub const MAX_ORDER: usize = 40;

    /// `J_m(x)` for `m = 0..=max_order`. Forward recurrence is used while it is
    /// stable (`m < x`), the power series otherwise.
    pub fn bessel_j_orders(max_order: usize, x: f64) -> Vec<f64> {
        let b = bessel_pair(x);
        let mut out = vec![0.0; max_order + 1];
        out[0] = b.j0;
        if max_order >= 1 {
            out[1] = b.j1;
        }
        for m in 2..=max_order {
            let prev = (m - 1) as f64;
            out[m] = if prev < x {
                2.0 * prev / x * out[m - 1] - out[m - 2]
            } else {
                power_series_j(m, x)
            };
        }
        out
    }

    fn power_series_j(m: usize, x: f64) -> f64 {
        let half = 0.5 * x;
        let mut term = 1.0;
        for k in 1..=m {
            term *= half / k as f64;
        }
        let mut sum = term;
        for k in 1..200 {
            term *= -half * half / (k as f64 * (k + m) as f64);
            sum += term;
            if term.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        sum
    }

    /// `H_m^(1)(x)` for `m = 0..=max_order`, with `Y_m` by forward recurrence.
    pub fn hankel_orders(max_order: usize, x: f64) -> Vec<Complex64> {
        let j = bessel_j_orders(max_order, x);
        let b = bessel_pair(x);
        let mut y = vec![0.0; max_order + 1];
        y[0] = b.y0;
        if max_order >= 1 {
            y[1] = b.y1;
        }
        for m in 2..=max_order {
            y[m] = 2.0 * (m - 1) as f64 / x * y[m - 1] - y[m - 2];
        }
        j.iter().zip(&y).map(|(a, b)| Complex64::new(*a, *b)).collect()
    }

    fn polar(p: &Point) -> (f64, f64) {
        (p.norm(), p.y.atan2(p.x))
    }

    /// Scattered part `G_D^s(x, y)` for the disk of radius `a`.
    pub fn green_scattered(kappa: f64, a: f64, x: &Point, y: &Point) -> Complex64 {
        let (rx, tx) = polar(x);
        let (ry, ty) = polar(y);
        let ja = bessel_j_orders(MAX_ORDER, kappa * a);
        let ha = hankel_orders(MAX_ORDER, kappa * a);
        let hx = hankel_orders(MAX_ORDER, kappa * rx);
        let hy = hankel_orders(MAX_ORDER, kappa * ry);
        let mut sum = Complex64::new(0.0, 0.0);
        for m in 0..=MAX_ORDER {
            let c = ja[m] / ha[m] * hx[m] * hy[m];
            let weight = if m == 0 { 1.0 } else { 2.0 * (m as f64 * (tx - ty)).cos() };
            sum += c * weight;
        }
        Complex64::new(0.0, -0.25) * sum
    }

    /// Full Dirichlet Green function `Phi(x, y) + G_D^s(x, y)`.
    pub fn green(kappa: f64, a: f64, x: &Point, y: &Point) -> Complex64 {
        let r = (x - y).norm();
        let b = bessel_pair(kappa * r);
        let phi = Complex64::new(-0.25 * b.y0, 0.25 * b.j0);
        phi + green_scattered(kappa, a, x, y)
    }

    /// `dG_D(x, y)/dr` at a boundary point `x` with `|x| = a`.
    pub fn radial_derivative_on_boundary(kappa: f64, a: f64, x: &Point, y: &Point) -> Complex64 {
        let (_, tx) = polar(x);
        let (ry, ty) = polar(y);
        let ha = hankel_orders(MAX_ORDER, kappa * a);
        let hy = hankel_orders(MAX_ORDER, kappa * ry);
        let mut sum = Complex64::new(0.0, 0.0);
        for m in 0..=MAX_ORDER {
            let weight = if m == 0 { 1.0 } else { 2.0 * (m as f64 * (tx - ty)).cos() };
            sum += hy[m] / ha[m] * weight;
        }
        sum / (2.0 * PI * a)
    }

}
