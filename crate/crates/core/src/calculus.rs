//! Linearisation of the covariance forward map in the shape and the source
//! strength, and its exact discrete adjoint.
//!
//! With the boundary kernels
//!
//! ```text
//! A_lj = dG_D(x_l, z_j)/dnu(z_j)          (N_meas x N_bdy)
//! B_jn = |Omega_n|^{1/2} dG_D(z_j, y_n)/dnu(z_j)   (N_bdy x N_src)
//! ```
//!
//! the shape derivative of the near-field matrix is `G'(dr) = A D B` with
//! `D = diag(-(h.nu)_j a_j)` and `a_j` the arclength quadrature weight. The
//! covariance derivative is `C' = 2 Re(G' M_q G^H) + G M_dq G^H`. The adjoint is
//! the literal adjoint of these matrix expressions for the Frobenius pairing on
//! data, the `H^s` Gram on shape coefficients and the `|Omega_n|`-weighted pairing
//! on source nodes.

use crate::bie::ExteriorSolver;
use crate::error::{Error, Result};
use crate::forward::{
    assemble_nearfield_with, covariance_forward_signed, hermitian_part, MeasurementArray, NearFieldMatrix,
    SourceGrid,
};
use crate::geometry::{
    discretize, normal_speed, normal_speed_adjoint, sobolev_gram, BoundaryMesh, RadialPerturbation, SobolevGram,
    StarShape,
};
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Everything needed to apply the derivative and its adjoint at `(rho, q)`.
pub struct LinearizationPoint {
    pub shape: StarShape,
    pub q: Vec<f64>,
    pub solver: ExteriorSolver,
    pub nearfield: NearFieldMatrix,
    /// `A`, receivers to boundary nodes.
    pub bdy_to_meas: DMatrix<Complex64>,
    /// `B`, sources to boundary nodes, including `|Omega_n|^{1/2}`.
    pub src_to_bdy: DMatrix<Complex64>,
    pub measures: Vec<f64>,
    pub arc_weights: Vec<f64>,
    pub gram: SobolevGram,
}

impl LinearizationPoint {
    /// Factorises the boundary system of `shape` and caches all kernels.
    pub fn new(
        shape: &StarShape,
        q: &[f64],
        grid: &SourceGrid,
        meas: &MeasurementArray,
        kappa: f64,
        n_bdy: usize,
        sobolev_s: f64,
    ) -> Result<Self> {
        let solver = ExteriorSolver::build(discretize(shape, n_bdy)?, kappa)?;
        Self::with_solver(solver, q, grid, meas, sobolev_s)
    }

    pub fn with_solver(
        solver: ExteriorSolver,
        q: &[f64],
        grid: &SourceGrid,
        meas: &MeasurementArray,
        sobolev_s: f64,
    ) -> Result<Self> {
        let mesh = solver
            .mesh()
            .ok_or_else(|| Error::Domain("shape linearisation needs an obstacle".into()))?;
        if q.len() != grid.len() {
            return Err(Error::Dimension(format!("q has {} entries for {} sources", q.len(), grid.len())));
        }
        let shape = mesh.shape.clone();
        let arc_weights = mesh.arc_weights();
        let assembly = assemble_nearfield_with(&solver, grid, meas)?;
        let mut src_to_bdy = assembly.traces;
        for (n, m) in grid.measures.iter().enumerate() {
            src_to_bdy.column_mut(n).scale_mut(m.sqrt());
        }
        let bdy_to_meas = solver.neumann_traces(&meas.points)?.transpose();
        let gram = sobolev_gram(shape.degree(), sobolev_s)?;
        Ok(Self {
            shape,
            q: q.to_vec(),
            solver,
            nearfield: assembly.nearfield,
            bdy_to_meas,
            src_to_bdy,
            measures: grid.measures.clone(),
            arc_weights,
            gram,
        })
    }

    pub fn mesh(&self) -> &BoundaryMesh {
        self.solver.mesh().expect("linearisation point always has an obstacle")
    }

    pub fn g(&self) -> &DMatrix<Complex64> {
        &self.nearfield.entries
    }

    pub fn n_meas(&self) -> usize {
        self.bdy_to_meas.nrows()
    }

    pub fn n_src(&self) -> usize {
        self.src_to_bdy.ncols()
    }

    /// Forward covariance `C(rho, q)` at this point.
    pub fn covariance(&self) -> Result<DMatrix<Complex64>> {
        covariance_forward_signed(self.g(), &self.q)
    }

    /// Same kernels with a different source strength.
    pub fn with_q(mut self, q: &[f64]) -> Result<Self> {
        if q.len() != self.n_src() {
            return Err(Error::Dimension(format!("q has {} entries for {} sources", q.len(), self.n_src())));
        }
        self.q = q.to_vec();
        Ok(self)
    }

    /// `|Omega_n|`-weighted inner product of node values.
    pub fn q_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.measures).map(|((x, y), m)| x * y * m).sum()
    }
}

fn check_square(l: &LinearizationPoint, k: &DMatrix<Complex64>) -> Result<()> {
    let n = l.n_meas();
    if k.nrows() != n || k.ncols() != n {
        return Err(Error::Dimension(format!("expected {n}x{n} data matrix, got {}x{}", k.nrows(), k.ncols())));
    }
    Ok(())
}

/// `G'(dr) = A diag(-(h.nu) a) B`.
pub fn nearfield_shape_derivative(l: &LinearizationPoint, dr: &RadialPerturbation) -> Result<DMatrix<Complex64>> {
    let speed = normal_speed(&l.shape, dr, l.mesh())?;
    let mut scaled = l.src_to_bdy.clone();
    for (j, (s, a)) in speed.iter().zip(&l.arc_weights).enumerate() {
        scaled.row_mut(j).scale_mut(-s * a);
    }
    Ok(&l.bdy_to_meas * scaled)
}

/// `C'(dr, dq) = 2 Re(G'(dr) M_q G^H) + G M_dq G^H` with `Re K = (K + K^H)/2`.
pub fn covariance_derivative(
    l: &LinearizationPoint,
    dr: &RadialPerturbation,
    dq: &[f64],
) -> Result<DMatrix<Complex64>> {
    if dq.len() != l.n_src() {
        return Err(Error::Dimension(format!("dq has {} entries for {} sources", dq.len(), l.n_src())));
    }
    let mut out = covariance_forward_signed(l.g(), dq)?;
    if dr.to_vector().iter().any(|v| *v != 0.0) {
        let gp = nearfield_shape_derivative(l, dr)?;
        let mut gpq = gp;
        for (n, v) in l.q.iter().enumerate() {
            gpq.column_mut(n).scale_mut(*v);
        }
        let k = gpq * l.g().adjoint();
        out += hermitian_part(&k) * Complex64::new(2.0, 0.0);
    } else if dr.degree() != l.shape.degree() {
        return Err(Error::Dimension(format!(
            "perturbation degree {} does not match shape degree {}",
            dr.degree(),
            l.shape.degree()
        )));
    }
    Ok(out)
}

/// Source-strength part of the adjoint: `Re diag(G^H K G)_n / |Omega_n|`.
pub fn covariance_adjoint_q(l: &LinearizationPoint, k: &DMatrix<Complex64>) -> Result<Vec<f64>> {
    check_square(l, k)?;
    let g = l.g();
    let kg = k * g;
    Ok((0..l.n_src())
        .map(|n| {
            let d: Complex64 = g.column(n).iter().zip(kg.column(n).iter()).map(|(a, b)| a.conj() * b).sum();
            d.re / l.measures[n]
        })
        .collect())
}

/// Node-wise shape sensitivity `w_j = -Re(B M_q G^H (K + K^H) A)_jj`, the
/// arclength-weighted density paired with `h.nu`.
pub fn covariance_adjoint_nodes(l: &LinearizationPoint, k: &DMatrix<Complex64>) -> Result<Vec<f64>> {
    check_square(l, k)?;
    let h = k + k.adjoint();
    let mut p = l.g().adjoint() * h;
    for (n, v) in l.q.iter().enumerate() {
        p.row_mut(n).scale_mut(*v);
    }
    let pa = p * &l.bdy_to_meas;
    Ok((0..l.mesh().len())
        .map(|j| {
            let d: Complex64 = l.src_to_bdy.row(j).iter().zip(pa.column(j).iter()).map(|(b, x)| b * x).sum();
            -d.re
        })
        .collect())
}

/// Adjoint of [`covariance_derivative`]: `(d rho*, dq*)` with
/// `<C'(dr, dq), K> = <dr, d rho*>_{H^s} + <dq, dq*>_q`.
pub fn covariance_adjoint(l: &LinearizationPoint, k: &DMatrix<Complex64>) -> Result<(RadialPerturbation, Vec<f64>)> {
    let dq = covariance_adjoint_q(l, k)?;
    let nodes = covariance_adjoint_nodes(l, k)?;
    let dr = normal_speed_adjoint(&l.shape, l.mesh(), &nodes, &l.gram)?;
    Ok((dr, dq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{assemble_nearfield, hs_inner, make_source_grid, Region};
    use crate::geometry::TrigSeries;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    struct Setup {
        shape: StarShape,
        grid: SourceGrid,
        meas: MeasurementArray,
        kappa: f64,
        n_bdy: usize,
    }

    fn setup() -> Setup {
        let shape = StarShape::new([0.0, 0.0], vec![1.0, 0.1, 0.2], vec![0.05, -0.1]).unwrap();
        let grid = make_source_grid(&[
            Region::Rectangle { xmin: 1.6, xmax: 2.6, ymin: -1.0, ymax: 1.0, nx: 3, ny: 6 },
            Region::Rectangle { xmin: -2.6, xmax: -1.6, ymin: -1.0, ymax: 1.0, nx: 3, ny: 6 },
        ])
        .unwrap();
        let meas = MeasurementArray::circle(4.0, 16).unwrap();
        Setup { shape, grid, meas, kappa: PI, n_bdy: 96 }
    }

    fn lin(s: &Setup, q: &[f64]) -> LinearizationPoint {
        LinearizationPoint::new(&s.shape, q, &s.grid, &s.meas, s.kappa, s.n_bdy, 1.6).unwrap()
    }

    fn random_q(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(0.2..1.5)).collect()
    }

    fn random_dr(rng: &mut ChaCha8Rng, degree: usize) -> RadialPerturbation {
        let v = DVector::from_fn(2 * degree + 1, |_, _| rng.random_range(-1.0..1.0));
        RadialPerturbation::from_vector(&v).unwrap()
    }

    fn random_k(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(n, n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn zero_directions_give_zero() {
        let s = setup();
        let l = lin(&s, &vec![1.0; s.grid.len()]);
        let zero = RadialPerturbation::zeros(2);
        assert!(nearfield_shape_derivative(&l, &zero).unwrap().iter().all(|v| v.norm() == 0.0));
        let c = covariance_derivative(&l, &zero, &vec![0.0; s.grid.len()]).unwrap();
        assert!(c.iter().all(|v| v.norm() == 0.0));
        let (dr, dq) = covariance_adjoint(&l, &DMatrix::zeros(16, 16)).unwrap();
        assert!(dr.to_vector().iter().all(|v| *v == 0.0));
        assert!(dq.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dq_direction_is_linear_term() {
        let s = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = lin(&s, &random_q(&mut rng, s.grid.len()));
        let dq: Vec<f64> = (0..s.grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = covariance_derivative(&l, &RadialPerturbation::zeros(2), &dq).unwrap();
        let direct = covariance_forward_signed(l.g(), &dq).unwrap();
        assert_eq!(c, direct);
    }

    #[test]
    fn adjoint_identity_random_triples() {
        let s = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = lin(&s, &random_q(&mut rng, s.grid.len()));
        for _ in 0..50 {
            let dr = random_dr(&mut rng, 2);
            let dq: Vec<f64> = (0..s.grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k = random_k(&mut rng, 16);
            let cp = covariance_derivative(&l, &dr, &dq).unwrap();
            let lhs = hs_inner(&cp, &k);
            let (dr_star, dq_star) = covariance_adjoint(&l, &k).unwrap();
            let rhs = l.gram.inner(&dr.to_vector(), &dr_star.to_vector()) + l.q_inner(&dq, &dq_star);
            let scale = cp.norm() * k.norm();
            assert!((lhs - rhs).abs() <= 1e-11 * scale, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn derivative_hermitian_and_adjoint_q_real() {
        let s = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = lin(&s, &random_q(&mut rng, s.grid.len()));
        let cp = covariance_derivative(&l, &random_dr(&mut rng, 2), &vec![0.3; s.grid.len()]).unwrap();
        assert!((&cp - cp.adjoint()).norm() <= 1e-13 * cp.norm());
        let k = random_k(&mut rng, 16);
        let kh = &k + k.adjoint();
        let g = l.g();
        let full = g.adjoint() * &kh * g;
        for n in 0..s.grid.len() {
            assert!(full[(n, n)].im.abs() <= 1e-13 * full[(n, n)].norm().max(1.0));
        }
    }

    #[test]
    fn nearfield_derivative_first_order_consistency() {
        let s = setup();
        let q = vec![1.0; s.grid.len()];
        let l = lin(&s, &q);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dr = random_dr(&mut rng, 2);
        let gp = nearfield_shape_derivative(&l, &dr).unwrap();
        let base = l.g().clone();
        let mut errs = Vec::new();
        let eps = [1e-3, 1e-4, 1e-5];
        for e in eps {
            let c = &s.shape.radial.to_vector() + dr.to_vector() * e;
            let shape = StarShape::from_coefficients(s.shape.center, &c).unwrap();
            let g = assemble_nearfield(Some(&shape), s.n_bdy, &s.grid, &s.meas, s.kappa).unwrap();
            errs.push(((g.entries - &base) / Complex64::new(e, 0.0) - &gp).norm());
        }
        let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let slope = fit_slope(&xs, &ys);
        assert!((slope - 1.0).abs() <= 0.15, "slope {slope}, errors {errs:?}");
    }

    fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        num / den
    }

    #[test]
    fn circle_radius_derivative() {
        let s = setup();
        let a = 1.0;
        let shape = StarShape::circle([0.0, 0.0], a, 2).unwrap();
        let l = LinearizationPoint::new(&shape, &vec![1.0; s.grid.len()], &s.grid, &s.meas, s.kappa, s.n_bdy, 1.6)
            .unwrap();
        let mut uniform = TrigSeries::zeros(2);
        uniform.cos[0] = 1.0;
        let gp = nearfield_shape_derivative(&l, &RadialPerturbation(uniform)).unwrap();
        let h = 1e-4;
        let at = |r: f64| {
            let c = StarShape::circle([0.0, 0.0], r, 2).unwrap();
            assemble_nearfield(Some(&c), s.n_bdy, &s.grid, &s.meas, s.kappa).unwrap().entries
        };
        let fd = (at(a + h) - at(a - h)) / Complex64::new(2.0 * h, 0.0);
        assert!((&fd - &gp).norm() <= 1e-5 * gp.norm(), "{}", (&fd - &gp).norm() / gp.norm());
    }

    #[test]
    fn covariance_derivative_first_order_consistency() {
        let s = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_q(&mut rng, s.grid.len());
        let l = lin(&s, &q);
        let dr = random_dr(&mut rng, 2);
        let dq: Vec<f64> = (0..s.grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cp = covariance_derivative(&l, &dr, &dq).unwrap();
        let c0 = l.covariance().unwrap();
        let eps = [1e-3, 1e-4, 1e-5];
        let mut errs = Vec::new();
        for e in eps {
            let coeffs = &s.shape.radial.to_vector() + dr.to_vector() * e;
            let shape = StarShape::from_coefficients(s.shape.center, &coeffs).unwrap();
            let g = assemble_nearfield(Some(&shape), s.n_bdy, &s.grid, &s.meas, s.kappa).unwrap();
            let qe: Vec<f64> = q.iter().zip(&dq).map(|(a, b)| a + e * b).collect();
            let c = covariance_forward_signed(&g.entries, &qe).unwrap();
            errs.push(((c - &c0) / Complex64::new(e, 0.0) - &cp).norm());
        }
        let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let slope = fit_slope(&xs, &ys);
        assert!((slope - 1.0).abs() <= 0.15, "slope {slope}, errors {errs:?}");
    }

    #[test]
    fn dimension_errors() {
        let s = setup();
        let l = lin(&s, &vec![1.0; s.grid.len()]);
        assert!(covariance_derivative(&l, &RadialPerturbation::zeros(2), &[1.0]).is_err());
        assert!(covariance_derivative(&l, &RadialPerturbation::zeros(3), &vec![0.0; s.grid.len()]).is_err());
        assert!(covariance_adjoint(&l, &DMatrix::zeros(3, 3)).is_err());
        assert!(nearfield_shape_derivative(&l, &RadialPerturbation::zeros(4)).is_err());
    }
}
