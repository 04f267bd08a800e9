//! Oracle checks shared by the `verify` command and the acceptance tests.
//! Each check returns its measured error; thresholds live with the callers.

use crate::bie::ExteriorSolver;
use crate::calculus::{covariance_adjoint, covariance_derivative, LinearizationPoint};
use crate::error::Result;
use crate::forward::{
    assemble_nearfield, covariance_forward, hs_inner, make_source_grid, MeasurementArray, Region, SourceGrid,
};
use crate::geometry::{discretize, RadialPerturbation, StarShape};
use crate::inversion::{misfit_at, misfit_gradient, DataFidelity, ShapeProblem};
use crate::oracles::disk;
use crate::specfun::Point;
use crate::stochastics::{build_weight, empirical_covariance, synthesize_measurements, weight_apply, WeightPower};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn random_exterior(rng: &mut ChaCha8Rng, rmin: f64, rmax: f64) -> Point {
    let r = rng.random_range(rmin..rmax);
    let t = rng.random_range(0.0..2.0 * PI);
    Point::new(r * t.cos(), r * t.sin())
}

/// Non-symmetric star `rho = 1 + 0.3 cos 2t + 0.2 sin 3t`.
pub fn reference_star() -> StarShape {
    StarShape::new([0.0, 0.0], vec![1.0, 0.0, 0.3, 0.0], vec![0.0, 0.0, 0.2]).expect("valid reference star")
}

/// Max relative error of the BIE Green function against the disk series
/// (unit disk, `kappa = pi`, 128 nodes) over `pairs` random exterior pairs.
pub fn disk_oracle_error(pairs: usize, seed: u64) -> Result<f64> {
    let shape = StarShape::circle([0.0, 0.0], 1.0, 0)?;
    let solver = ExteriorSolver::build(discretize(&shape, 128)?, PI)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let x = random_exterior(&mut rng, 1.5, 5.0);
        let y = random_exterior(&mut rng, 1.5, 5.0);
        let g = solver.green_function(&x, &y)?;
        let exact = disk::green(PI, 1.0, &x, &y);
        worst = worst.max((g - exact).norm() / exact.norm());
    }
    Ok(worst)
}

/// Max `|G_D(x,y) - G_D(y,x)|` for the reference star at `kappa = pi`.
pub fn reciprocity_error(pairs: usize, seed: u64) -> Result<f64> {
    let solver = ExteriorSolver::build(discretize(&reference_star(), 128)?, PI)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let x = random_exterior(&mut rng, 1.8, 5.0);
        let y = random_exterior(&mut rng, 1.8, 5.0);
        worst = worst.max((solver.green_function(&x, &y)? - solver.green_function(&y, &x)?).norm());
    }
    Ok(worst)
}

/// Max boundary value `|G_D(z(t), y)|` on a 300-point grid offset from the
/// nodes, relative to `max(1, |Phi|)` on the boundary.
pub fn boundary_residual(seed: u64) -> Result<f64> {
    let solver = ExteriorSolver::build(discretize(&reference_star(), 128)?, PI)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = random_exterior(&mut rng, 2.0, 4.0);
    let mut worst: f64 = 0.0;
    for i in 0..300 {
        let t = 2.0 * PI * (i as f64 + 0.37) / 300.0;
        worst = worst.max(solver.boundary_total_field(t, &y)?.norm());
    }
    Ok(worst)
}

/// Geometry of the adjoint and gradient checks: 16 receivers, 36 sources,
/// 96 boundary nodes.
pub struct CalculusSetup {
    pub shape: StarShape,
    pub grid: SourceGrid,
    pub meas: MeasurementArray,
    pub kappa: f64,
    pub n_bdy: usize,
}

pub fn calculus_setup() -> Result<CalculusSetup> {
    let shape = StarShape::new([0.0, 0.0], vec![1.0, 0.1, 0.2], vec![0.05, -0.1])?;
    let grid = make_source_grid(&[
        Region::Rectangle { xmin: 1.7, xmax: 2.9, ymin: -1.2, ymax: 1.2, nx: 3, ny: 6 },
        Region::Rectangle { xmin: -2.9, xmax: -1.7, ymin: -1.2, ymax: 1.2, nx: 3, ny: 6 },
    ])?;
    let meas = MeasurementArray::circle(4.0, 16)?;
    Ok(CalculusSetup { shape, grid, meas, kappa: PI, n_bdy: 96 })
}

/// Max over `triples` random `(dr, dq, K)` of
/// `|<C'(dr,dq), K> - <dr, d rho*> - <dq, dq*>| / (||C'|| ||K||)`.
pub fn adjoint_identity_mismatch(triples: usize, seed: u64) -> Result<f64> {
    let s = calculus_setup()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q: Vec<f64> = (0..s.grid.len()).map(|_| rng.random_range(0.2..1.5)).collect();
    let l = LinearizationPoint::new(&s.shape, &q, &s.grid, &s.meas, s.kappa, s.n_bdy, 1.6)?;
    let n_coef = 2 * s.shape.degree() + 1;
    let mut worst: f64 = 0.0;
    for _ in 0..triples {
        let dr = RadialPerturbation::from_vector(&DVector::from_fn(n_coef, |_, _| rng.random_range(-1.0..1.0)))?;
        let dq: Vec<f64> = (0..s.grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = DMatrix::from_fn(16, 16, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let cp = covariance_derivative(&l, &dr, &dq)?;
        let lhs = hs_inner(&cp, &k);
        let (dr_star, dq_star) = covariance_adjoint(&l, &k)?;
        let rhs = l.gram.inner(&dr.to_vector(), &dr_star.to_vector()) + l.q_inner(&dq, &dq_star);
        worst = worst.max((lhs - rhs).abs() / (cp.norm() * k.norm()));
    }
    Ok(worst)
}

/// Max relative error between the adjoint-based misfit gradient and central
/// differences with step `eps` over `directions` random directions.
pub fn gradient_check(directions: usize, eps: f64, seed: u64) -> Result<f64> {
    let s = calculus_setup()?;
    let truth = StarShape::new([0.0, 0.0], vec![0.95, 0.05, 0.15], vec![0.1, -0.05])?;
    let q_true = vec![1.0; s.grid.len()];
    let g = assemble_nearfield(Some(&truth), s.n_bdy, &s.grid, &s.meas, s.kappa)?;
    let c_obs = covariance_forward(&g, &q_true)?;
    let fid = DataFidelity::new(&c_obs, 0.01, 0.0)?;
    let p = ShapeProblem { c_obs: &c_obs, grid: &s.grid, meas: &s.meas, kappa: s.kappa };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q: Vec<f64> = (0..s.grid.len()).map(|_| rng.random_range(0.5..1.5)).collect();
    let l = LinearizationPoint::new(&s.shape, &q, &s.grid, &s.meas, s.kappa, s.n_bdy, 1.6)?;
    let (gr, gq) = misfit_gradient(&l, &fid)?;
    let n_coef = 2 * s.shape.degree() + 1;
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let dr = DVector::from_fn(n_coef, |_, _| rng.random_range(-1.0..1.0));
        let dq: Vec<f64> = (0..q.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let at = |t: f64| -> Result<f64> {
            let shape = StarShape::from_coefficients(s.shape.center, &(s.shape.coefficients() + &dr * t))?;
            let qt: Vec<f64> = q.iter().zip(&dq).map(|(a, b)| a + t * b).collect();
            misfit_at(&p, &fid, &shape, &qt, s.n_bdy)
        };
        let fd = (at(eps)? - at(-eps)?) / (2.0 * eps);
        let analytic = l.gram.inner(&dr, &gr.to_vector()) + l.q_inner(&dq, &gq);
        worst = worst.max((fd - analytic).abs() / analytic.abs());
    }
    Ok(worst)
}

/// Small free-space configuration used by the sampling checks.
fn sampling_setup(n_meas: usize) -> Result<(crate::forward::NearFieldMatrix, Vec<f64>)> {
    let grid = make_source_grid(&[Region::Rectangle { xmin: -1.0, xmax: 1.0, ymin: -1.0, ymax: 1.0, nx: 3, ny: 3 }])?;
    let meas = MeasurementArray::circle(3.0, n_meas)?;
    let g = assemble_nearfield(None, 0, &grid, &meas, PI)?;
    Ok((g, vec![1.0; grid.len()]))
}

/// `||C^obs - (G M_q G^H + beta I)||_F` at `N = 10^3` divided by the same at
/// `N = 4 * 10^4` (unit disk obstacle, 16 receivers, `beta = 0.01`).
pub fn covariance_convergence_ratio(seed: u64) -> Result<f64> {
    let shape = StarShape::circle([0.0, 0.0], 1.0, 0)?;
    let grid = make_source_grid(&[Region::Annulus { center: [0.0, 0.0], r_inner: 1.5, r_outer: 2.5, n_radial: 2, n_angular: 18 }])?;
    let meas = MeasurementArray::circle(4.0, 16)?;
    let g = assemble_nearfield(Some(&shape), 64, &grid, &meas, PI)?;
    let q = vec![1.0; grid.len()];
    let beta = 0.01;
    let exact = covariance_forward(&g, &q)?.entries + DMatrix::<Complex64>::identity(16, 16) * Complex64::new(beta, 0.0);
    let err = |n: usize| -> Result<f64> {
        let set = synthesize_measurements(&g, &q, n, beta, seed)?;
        Ok((empirical_covariance(&set)?.entries - &exact).norm())
    };
    Ok(err(1_000)? / err(40_000)?)
}

/// Replication study of the fourth moments of `C^obs`: 4 receivers, no
/// obstacle, `q = 1`, `beta = 0.01`, `replications` runs of `n_sample`
/// samples. Returns the largest deviation of the replication mean of
/// `(C^obs - B)_ij conj(C^obs - B)_kl` from `B_ik B_lj / N`, in units of the
/// replication standard error.
pub fn isserlis_check(replications: usize, n_sample: usize, seed: u64) -> Result<f64> {
    let (g, q) = sampling_setup(4)?;
    let beta = 0.01;
    let n = 4;
    let b = covariance_forward(&g, &q)?.entries + DMatrix::<Complex64>::identity(n, n) * Complex64::new(beta, 0.0);
    let mut sum = vec![Complex64::new(0.0, 0.0); n.pow(4)];
    let mut sum_sq = vec![0.0; n.pow(4)];
    let mut products = Vec::with_capacity(replications);
    for r in 0..replications {
        let set = synthesize_measurements(&g, &q, n_sample, beta, seed.wrapping_add(r as u64))?;
        let d = empirical_covariance(&set)?.entries - &b;
        let mut z = vec![Complex64::new(0.0, 0.0); n.pow(4)];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        z[((i * n + j) * n + k) * n + l] = d[(i, j)] * d[(k, l)].conj();
                    }
                }
            }
        }
        for (s, v) in sum.iter_mut().zip(&z) {
            *s += v;
        }
        products.push(z);
    }
    let reps = replications as f64;
    let mean: Vec<Complex64> = sum.iter().map(|s| s / reps).collect();
    for z in &products {
        for (acc, (v, m)) in sum_sq.iter_mut().zip(z.iter().zip(&mean)) {
            *acc += (v - m).norm_sqr();
        }
    }
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    let idx = ((i * n + j) * n + k) * n + l;
                    let exact = b[(i, k)] * b[(l, j)] / n_sample as f64;
                    let se = (sum_sq[idx] / (reps - 1.0) / reps).sqrt();
                    worst = worst.max((mean[idx] - exact).norm() / se);
                }
            }
        }
    }
    Ok(worst)
}

/// `|vec(W^{-1} X) - (B^{-T} kron B^{-1}) vec(X)|` for 2 receivers, and the
/// round trip `B (W^{-1} X) B - X` for 4 receivers; returns the larger.
pub fn weight_checks(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for n in [2usize, 4] {
        let a = DMatrix::from_fn(n, n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let c = crate::forward::CovarianceMatrix { entries: &a * a.adjoint() };
        let w = build_weight(&c, 0.1)?;
        let x = DMatrix::from_fn(n, n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let wx = weight_apply(&w, &x, WeightPower::Inverse)?;
        if n == 2 {
            let binv = w.base_power(-1.0);
            let kron = binv.transpose().kronecker(&binv);
            let expected = kron * DVector::from_column_slice(x.as_slice());
            worst = worst.max((DVector::from_column_slice(wx.as_slice()) - expected).norm());
        }
        worst = worst.max((&w.base * &wx * &w.base - &x).norm() / x.norm());
    }
    Ok(worst)
}

/// One line of the verification report.
#[derive(Clone, Debug, serde::Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
    pub seconds: f64,
}

/// Thresholds of the verification suite.
pub mod thresholds {
    pub const DISK_ORACLE: f64 = 1e-8;
    pub const RECIPROCITY: f64 = 1e-8;
    pub const BOUNDARY_RESIDUAL: f64 = 1e-6;
    pub const ADJOINT_IDENTITY: f64 = 1e-11;
    pub const GRADIENT: f64 = 1e-4;
    pub const GRADIENT_STEP: f64 = 1e-5;
    pub const WEIGHT: f64 = 1e-11;
    pub const ISSERLIS_STANDARD_ERRORS: f64 = 5.0;
    pub const COVARIANCE_RATIO: (f64, f64) = (4.5, 8.5);
}

fn timed<F: FnOnce() -> Result<f64>>(name: &'static str, threshold: f64, f: F) -> CheckResult {
    let start = std::time::Instant::now();
    let measured = f().unwrap_or(f64::NAN);
    CheckResult { name, measured, threshold, passed: measured <= threshold, seconds: start.elapsed().as_secs_f64() }
}

/// Runs the suite. `quick` skips the Monte-Carlo convergence study and runs
/// the Isserlis study with 50 instead of 200 replications.
pub fn run_suite(quick: bool) -> Vec<CheckResult> {
    use thresholds::*;
    let mut out = vec![
        timed("disk oracle (max rel. error, 20 pairs)", DISK_ORACLE, || disk_oracle_error(20, 1)),
        timed("reciprocity (max abs. error, 20 pairs)", RECIPROCITY, || reciprocity_error(20, 2)),
        timed("Dirichlet boundary residual", BOUNDARY_RESIDUAL, || boundary_residual(3)),
        timed("adjoint identity (50 triples)", ADJOINT_IDENTITY, || adjoint_identity_mismatch(50, 4)),
        timed("misfit gradient vs FD (10 directions)", GRADIENT, || gradient_check(10, GRADIENT_STEP, 5)),
        timed("weight operator Kronecker / round trip", WEIGHT, || weight_checks(6)),
    ];
    let reps = if quick { 50 } else { 200 };
    out.push(timed("Isserlis fourth moments (std. errors)", ISSERLIS_STANDARD_ERRORS, || {
        isserlis_check(reps, 2000, 7)
    }));
    if !quick {
        let start = std::time::Instant::now();
        let ratio = covariance_convergence_ratio(8).unwrap_or(f64::NAN);
        out.push(CheckResult {
            name: "covariance ratio N=1e3 vs 4e4, range [4.5, 8.5]",
            measured: ratio,
            threshold: COVARIANCE_RATIO.1,
            passed: (COVARIANCE_RATIO.0..=COVARIANCE_RATIO.1).contains(&ratio),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    out
}
