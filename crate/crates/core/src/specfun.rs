//! Cylindrical Bessel/Hankel functions of orders 0 and 1 and the outgoing
//! fundamental solution of the 2D Helmholtz equation.
//!
//! Three evaluation regimes are used:
//!
//! * `x < 1e-3`: truncated power series.
//! * `1e-3 <= x <= 25`: Miller backward recurrence for `J_k`, normalised with
//!   `J_0 + 2 sum J_2k = 1`, and Neumann series for `Y_0`, `Y_1` built from the
//!   same `J_k` table.
//! * `x > 25`: Hankel asymptotic expansion, truncated at the smallest term.
//!   At the crossover the smallest term is below `e^-50`.

use crate::error::{Error, Result};
use nalgebra::Vector2;
use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

pub type Point = Vector2<f64>;

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Crossover between the recurrence and asymptotic branches.
pub(crate) const ASYMPTOTIC_CROSSOVER: f64 = 25.0;

/// `J_0, J_1, Y_0, Y_1` at one argument.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BesselPair {
    pub j0: f64,
    pub j1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl BesselPair {
    pub fn h0(&self) -> Complex64 {
        Complex64::new(self.j0, self.y0)
    }

    pub fn h1(&self) -> Complex64 {
        Complex64::new(self.j1, self.y1)
    }
}

/// Evaluates all four functions for `x > 0`. No domain check.
pub(crate) fn bessel_pair(x: f64) -> BesselPair {
    if x < SMALL_ARGUMENT {
        small_argument(x)
    } else if x <= ASYMPTOTIC_CROSSOVER {
        miller_neumann(x)
    } else {
        let h0 = hankel_asymptotic(0, x);
        let h1 = hankel_asymptotic(1, x);
        BesselPair { j0: h0.re, j1: h1.re, y0: h0.im, y1: h1.im }
    }
}

/// `J_0, J_1` only; cheaper than [`bessel_pair`] on the recurrence branch.
pub(crate) fn bessel_j01(x: f64) -> (f64, f64) {
    if x < SMALL_ARGUMENT {
        let b = small_argument(x);
        (b.j0, b.j1)
    } else if x <= ASYMPTOTIC_CROSSOVER {
        let (table, norm) = miller_table(x);
        (table[0] / norm, table[1] / norm)
    } else {
        (hankel_asymptotic(0, x).re, hankel_asymptotic(1, x).re)
    }
}

/// Below this the recurrence ratio `2k/x` is large enough to overflow
/// between rescalings; truncated series are exact to rounding there.
const SMALL_ARGUMENT: f64 = 1e-3;

fn small_argument(x: f64) -> BesselPair {
    let q = 0.25 * x * x;
    let half = 0.5 * x;
    let log_term = half.ln() + EULER_GAMMA;
    let j0 = 1.0 - q + 0.25 * q * q;
    let j1 = half * (1.0 - 0.5 * q + q * q / 12.0);
    let y0 = (2.0 / PI) * (log_term * j0 + q - 0.375 * q * q);
    let y1 = -2.0 / (PI * x) + (2.0 / PI) * half.ln() * j1
        - (1.0 / PI) * (-2.0 * EULER_GAMMA * j1 + half * (1.0 - 1.25 * q));
    BesselPair { j0, j1, y0, y1 }
}

fn miller_start(x: f64) -> usize {
    let n = x.max(1.0);
    let m = (n + (160.0 * n).sqrt()) as usize + 12;
    m + (m % 2)
}

/// Unnormalised backward-recurrence table `t_k`, `k = 0..=m`, and the
/// normalisation `t_0 + 2 sum t_2k`, so that `J_k = t_k / norm`.
fn miller_table(x: f64) -> (Vec<f64>, f64) {
    const BIG: f64 = 1e250;
    const SMALL: f64 = 1e-250;
    let m = miller_start(x);
    let mut t = vec![0.0; m + 2];
    t[m] = 1.0;
    for k in (1..=m).rev() {
        t[k - 1] = (2.0 * k as f64 / x) * t[k] - t[k + 1];
        if t[k - 1].abs() > BIG {
            for v in t[k - 1..].iter_mut() {
                *v *= SMALL;
            }
        }
    }
    let mut norm = t[0];
    for k in (2..=m).step_by(2) {
        norm += 2.0 * t[k];
    }
    (t, norm)
}

fn miller_neumann(x: f64) -> BesselPair {
    let (t, norm) = miller_table(x);
    let j = |k: usize| if k < t.len() { t[k] / norm } else { 0.0 };
    let m = t.len() - 2;
    let log_term = (0.5 * x).ln() + EULER_GAMMA;

    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut sign = 1.0;
    for k in 1..=m / 2 {
        let kf = k as f64;
        s0 += sign * j(2 * k) / kf;
        s1 += sign * (j(2 * k - 1) - j(2 * k + 1)) / kf;
        sign = -sign;
    }
    let j0 = j(0);
    let j1 = j(1);
    let y0 = (2.0 / PI) * (log_term * j0 + 2.0 * s0);
    let y1 = (2.0 / PI) * (-j0 / x + log_term * j1 - s1);
    BesselPair { j0, j1, y0, y1 }
}

/// `H_order^(1)(x) ~ sqrt(2/(pi x)) e^{i w} sum_k i^k a_k / x^k`.
fn hankel_asymptotic(order: u32, x: f64) -> Complex64 {
    let mu = 4.0 * (order * order) as f64;
    let mut sum = Complex64::new(1.0, 0.0);
    let mut coeff = 1.0;
    let mut ik = Complex64::new(1.0, 0.0);
    let mut last = f64::INFINITY;
    for k in 1..80 {
        let odd = (2 * k - 1) as f64;
        coeff *= (mu - odd * odd) / (8.0 * k as f64 * x);
        ik *= Complex64::i();
        let term = ik * coeff;
        let size = coeff.abs();
        if size > last {
            break;
        }
        sum += term;
        if size < 1e-17 * sum.norm() {
            break;
        }
        last = size;
    }
    let phase = x - order as f64 * FRAC_PI_2 - FRAC_PI_4;
    Complex64::from_polar((2.0 / (PI * x)).sqrt(), phase) * sum
}

fn check_order(order: u32) -> Result<()> {
    if order > 1 {
        return Err(Error::Domain(format!("Bessel order {order} not supported (0 or 1)")));
    }
    Ok(())
}

fn check_positive(x: f64) -> Result<()> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("argument must be positive and finite, got {x}")));
    }
    Ok(())
}

/// Bessel function of the first kind, `J_0` or `J_1`.
pub fn bessel_j(order: u32, x: f64) -> Result<f64> {
    check_order(order)?;
    check_positive(x)?;
    let (j0, j1) = bessel_j01(x);
    Ok(if order == 0 { j0 } else { j1 })
}

/// Bessel function of the second kind, `Y_0` or `Y_1`.
///
/// Both diverge as `x -> 0+`; for tiny positive `x` large finite values are
/// returned (`Y_0 ~ (2/pi) ln x`, `Y_1 ~ -2/(pi x)`), and `Y_1` overflows to
/// `-inf` only below roughly `1e-308`.
pub fn bessel_y(order: u32, x: f64) -> Result<f64> {
    check_order(order)?;
    check_positive(x)?;
    let b = bessel_pair(x);
    Ok(if order == 0 { b.y0 } else { b.y1 })
}

/// Hankel function of the first kind, `J + iY`.
pub fn hankel1(order: u32, x: f64) -> Result<Complex64> {
    check_order(order)?;
    check_positive(x)?;
    let b = bessel_pair(x);
    Ok(if order == 0 { b.h0() } else { b.h1() })
}

/// `Phi(x, y) = (i/4) H_0^(1)(kappa |x - y|)`.
pub fn fundamental_solution(x: &Point, y: &Point, kappa: f64) -> Result<Complex64> {
    check_positive(kappa)?;
    let r = (x - y).norm();
    if r == 0.0 {
        return Err(Error::Domain("fundamental solution is singular at x = y".into()));
    }
    Ok(phi_radial(r, kappa))
}

/// Normal derivative of `Phi(x - y)` with respect to `x` in direction `nu`.
pub fn fundamental_solution_normal_derivative(
    x: &Point,
    y: &Point,
    nu: &Point,
    kappa: f64,
) -> Result<Complex64> {
    check_positive(kappa)?;
    let d = x - y;
    let r = d.norm();
    if r == 0.0 {
        return Err(Error::Domain("fundamental solution is singular at x = y".into()));
    }
    Ok(dphi_directional(&d, r, nu, kappa))
}

#[inline]
pub(crate) fn phi_radial(r: f64, kappa: f64) -> Complex64 {
    let b = bessel_pair(kappa * r);
    Complex64::new(-0.25 * b.y0, 0.25 * b.j0)
}

/// `-(i kappa / 4) H_1(kappa r) (d . nu) / r` with `d = x - y`, `r = |d|`.
#[inline]
pub(crate) fn dphi_directional(d: &Point, r: f64, nu: &Point, kappa: f64) -> Complex64 {
    let b = bessel_pair(kappa * r);
    let scale = d.dot(nu) / r * 0.25 * kappa;
    // -(i) * (j1 + i y1) = y1 - i j1
    Complex64::new(b.y1 * scale, -b.j1 * scale)
}


#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn reference_values_at_one() {
        assert!((bessel_j(0, 1.0).unwrap() - 0.7651976866).abs() < 1e-10);
        assert!((bessel_y(0, 1.0).unwrap() - 0.0882569642).abs() < 1e-10);
        let h1 = hankel1(1, 1.0).unwrap();
        assert!((h1.re - 0.4400505857).abs() < 1e-10);
        assert!((h1.im + 0.7812128213).abs() < 1e-10);
        let h0 = hankel1(0, 1.0).unwrap();
        assert!((h0 - Complex64::new(0.7651976866, 0.0882569642)).norm() < 1e-10);
    }

    #[test]
    fn oracle_sanity_at_one() {
        assert!((j_series(0, 1.0) - 0.765_197_686_557_966_6).abs() < 1e-15);
        assert!((y0_series(1.0) - 0.088_256_964_215_676_96).abs() < 1e-15);
        assert!((y1_series(1.0) + 0.781_212_821_300_288_7).abs() < 1e-15);
    }

    #[test]
    fn small_argument_limits() {
        assert!((bessel_j(0, 1e-12).unwrap() - 1.0).abs() < 1e-15);
        assert!(bessel_j(1, 1e-12).unwrap().abs() < 1e-12);
        let y0 = bessel_y(0, 1e-200).unwrap();
        assert!(y0.is_finite() && y0 < -200.0);
        let y0b = bessel_y(0, 1e-100).unwrap();
        assert!(y0 < y0b, "Y0 must decrease towards the origin");
    }

    #[test]
    fn rejects_nonpositive_argument_and_high_order() {
        assert!(bessel_j(0, 0.0).is_err());
        assert!(bessel_y(1, -1.0).is_err());
        assert!(hankel1(0, f64::NAN).is_err());
        assert!(bessel_j(2, 1.0).is_err());
    }

    #[test]
    fn wronskian_at_two() {
        let x = 2.0;
        let b = bessel_pair(x);
        let w = b.j0 * b.y1 - b.j1 * b.y0;
        assert!((w + 0.3183098862).abs() < 1e-10);
    }

    #[test]
    fn wronskian_log_sampled() {
        for i in 0..=200 {
            let x = 0.1 * 1000f64.powf(i as f64 / 200.0);
            let b = bessel_pair(x);
            let w = b.j0 * b.y1 - b.j1 * b.y0 + 2.0 / (PI * x);
            assert!(w.abs() < 1e-10, "x = {x}: {w}");
        }
    }

    #[test]
    fn wronskian_relative_up_to_thousand() {
        for i in 0..=100 {
            let x = 10.0 * 100f64.powf(i as f64 / 100.0);
            let b = bessel_pair(x);
            let w = (b.j0 * b.y1 - b.j1 * b.y0) / (-2.0 / (PI * x)) - 1.0;
            assert!(w.abs() < 1e-12, "x = {x}: {w}");
        }
    }

    #[test]
    fn hankel_matches_series_oracle() {
        for i in 0..=300 {
            let x = 1e-3 * 5e4f64.powf(i as f64 / 300.0);
            let h0 = Complex64::new(j_series(0, x), y0_series(x));
            let h1 = Complex64::new(j_series(1, x), y1_series(x));
            let e0 = (hankel1(0, x).unwrap() - h0).norm() / h0.norm();
            let e1 = (hankel1(1, x).unwrap() - h1).norm() / h1.norm();
            assert!(e0 < 1e-9 && e1 < 1e-9, "x = {x}: {e0:e} {e1:e}");
        }
    }

    #[test]
    fn j_relative_accuracy_away_from_zeros() {
        for i in 0..=200 {
            let x = 1e-3 * 3e4f64.powf(i as f64 / 200.0);
            for order in 0..2 {
                let want = j_series(order, x);
                if want.abs() < 0.05 {
                    continue;
                }
                let got = bessel_j(order, x).unwrap();
                assert!(rel(got, want) < 1e-12, "J{order}({x}) rel {:e}", rel(got, want));
            }
        }
    }

    #[test]
    fn y_relative_accuracy_away_from_zeros() {
        for i in 0..=200 {
            let x = 1e-6 * 3e7f64.powf(i as f64 / 200.0);
            let pairs = [(0, y0_series(x)), (1, y1_series(x))];
            for (order, want) in pairs {
                if want.abs() < 0.05 {
                    continue;
                }
                let got = bessel_y(order, x).unwrap();
                assert!(rel(got, want) < 1e-10, "Y{order}({x}) rel {:e}", rel(got, want));
            }
        }
    }

    #[test]
    fn branches_agree_at_crossover() {
        let x = ASYMPTOTIC_CROSSOVER;
        let a = miller_neumann(x);
        for (order, lo) in [(0, a.h0()), (1, a.h1())] {
            let hi = hankel_asymptotic(order, x);
            assert!((lo - hi).norm() / hi.norm() < 1e-12);
        }
    }

    #[test]
    fn leading_asymptotic_term() {
        let x = 100.0;
        let h = hankel1(0, x).unwrap();
        let lead = h * (PI * x / 2.0).sqrt() * Complex64::from_polar(1.0, -(x - FRAC_PI_4));
        assert!((lead.norm() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn fundamental_solution_reference() {
        let phi = fundamental_solution(&Point::new(1.0, 0.0), &Point::new(0.0, 0.0), 1.0).unwrap();
        assert!((phi.re + 0.0220642).abs() < 1e-7);
        assert!((phi.im - 0.1912994).abs() < 1e-7);
        assert!(fundamental_solution(&Point::new(0.3, 0.2), &Point::new(0.3, 0.2), 1.0).is_err());
    }

    #[test]
    fn normal_derivative_matches_finite_difference() {
        let y = Point::new(0.2, -0.4);
        let kappa = 2.5;
        for (x, nu) in [
            (Point::new(1.0, 0.3), Point::new(0.6, 0.8)),
            (Point::new(-2.0, 1.5), Point::new(-1.0, 0.0)),
            (Point::new(0.9, -0.1), Point::new(0.0, 1.0)),
        ] {
            let h = 1e-6;
            let fd = (fundamental_solution(&(x + nu * h), &y, kappa).unwrap()
                - fundamental_solution(&(x - nu * h), &y, kappa).unwrap())
                / (2.0 * h);
            let exact = fundamental_solution_normal_derivative(&x, &y, &nu, kappa).unwrap();
            assert!((fd - exact).norm() / exact.norm() < 1e-6);
            let flipped = fundamental_solution_normal_derivative(&x, &y, &(-nu), kappa).unwrap();
            assert!((flipped + exact).norm() < 1e-15);
        }
        let x = Point::new(1.0, 0.0);
        let perp = Point::new(0.0, 1.0);
        let d = fundamental_solution_normal_derivative(&x, &Point::zeros(), &perp, 1.0).unwrap();
        assert_eq!(d.norm(), 0.0);
    }

    #[test]
    fn discrete_helmholtz_residual_is_second_order() {
        let kappa = 3.0;
        let y = Point::zeros();
        let x = Point::new(0.7, 0.5);
        let residual = |h: f64| {
            let f = |p: Point| fundamental_solution(&p, &y, kappa).unwrap();
            let lap = (f(x + Point::new(h, 0.0))
                + f(x - Point::new(h, 0.0))
                + f(x + Point::new(0.0, h))
                + f(x - Point::new(0.0, h))
                - f(x) * 4.0)
                / (h * h);
            (lap + f(x) * kappa * kappa).norm()
        };
        let r1 = residual(1e-2);
        let r2 = residual(5e-3);
        let ratio = r1 / r2;
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    proptest! {
        #[test]
        fn fundamental_solution_is_symmetric(
            ax in -5.0..5.0f64, ay in -5.0..5.0f64,
            bx in -5.0..5.0f64, by in -5.0..5.0f64,
            kappa in 0.1..10.0f64,
        ) {
            let a = Point::new(ax, ay);
            let b = Point::new(bx, by);
            prop_assume!((a - b).norm() > 1e-6);
            let ab = fundamental_solution(&a, &b, kappa).unwrap();
            let ba = fundamental_solution(&b, &a, kappa).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab.re.is_finite() && ab.im.is_finite());
        }
    }
}
