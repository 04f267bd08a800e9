//! Exterior Dirichlet problem for the Helmholtz equation and the Dirichlet
//! Green function `G_D = Phi + G_D^s` of a sound-soft star-shaped obstacle.
//!
//! For a point source at `y` the total field `u = G_D(., y)` vanishes on the
//! boundary and satisfies `u(x) = Phi(x, y) - int Phi(x, z) chi(z) ds(z)` with
//! `chi = du/dnu` its Neumann trace. The trace solves the combined-field
//! equation
//!
//! ```text
//! chi + 2 K' chi - 2 i eta S chi = 2 (dPhi(., y)/dnu - i eta Phi(., y))
//! ```
//!
//! (`eta = kappa`), which is uniquely solvable for every `kappa > 0`. The
//! periodic logarithmic singularities of `K'` and `S` are split off and
//! integrated with the Kussmaul-Martensen trigonometric product rule; the
//! smooth remainders use the trapezoid rule. One LU factorisation per shape
//! serves every source point.
//!
//! Because `chi` is exactly the kernel `dG_D(x, y)/dnu(x)` on the boundary, the
//! same solve provides Green function values and both boundary kernels of the
//! domain derivative (the second by reciprocity).

use crate::error::{Error, Result};
use crate::geometry::BoundaryMesh;
use crate::specfun::{self, bessel_pair, Point, EULER_GAMMA};
use nalgebra::{DMatrix, Dyn, LU};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Metadata describing a factorised boundary system.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SolverInfo {
    pub n_bdy: usize,
    pub kappa: f64,
    pub coupling_eta: f64,
    pub condition_estimate: f64,
}

struct Obstacle {
    mesh: BoundaryMesh,
    lu: LU<Complex64, Dyn, Dyn>,
    arc_weights: Vec<f64>,
    condition: f64,
}

/// Green function provider for either free space or a sound-soft obstacle.
pub struct ExteriorSolver {
    kappa: f64,
    eta: f64,
    obstacle: Option<Obstacle>,
}

/// Kussmaul-Martensen weights `R_j(t)` for `int_0^{2pi} ln(4 sin^2((t-s)/2)) f(s) ds`
/// on `2n` nodes, evaluated at offset `t - t_j`.
pub fn log_quadrature_weight(n: usize, offset: f64) -> f64 {
    let nf = n as f64;
    let mut sum = 0.0;
    for m in 1..n {
        sum += (m as f64 * offset).cos() / m as f64;
    }
    -2.0 * PI / nf * sum - PI / (nf * nf) * (nf * offset).cos()
}

impl ExteriorSolver {
    /// Factorises the combined-field system for `mesh` at wavenumber `kappa`.
    pub fn build(mesh: BoundaryMesh, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::Domain(format!("wavenumber must be positive, got {kappa}")));
        }
        let n_bdy = mesh.len();
        if n_bdy < 16 || n_bdy % 2 != 0 {
            return Err(Error::Domain(format!("boundary mesh needs an even node count >= 16, got {n_bdy}")));
        }
        let eta = kappa;
        let matrix = assemble_system(&mesh, kappa, eta);
        let norm1 = one_norm(&matrix);
        let lu = matrix.lu();
        if !lu.is_invertible() {
            return Err(Error::Solver("combined-field matrix is singular".into()));
        }
        let inverse = lu
            .solve(&DMatrix::identity(n_bdy, n_bdy))
            .ok_or_else(|| Error::Solver("combined-field matrix is singular".into()))?;
        let condition = norm1 * one_norm(&inverse);
        if !condition.is_finite() || condition > 1e14 {
            return Err(Error::Solver(format!(
                "combined-field matrix is numerically singular (condition estimate {condition:.3e})"
            )));
        }
        let arc_weights = mesh.arc_weights();
        Ok(Self { kappa, eta, obstacle: Some(Obstacle { mesh, lu, arc_weights, condition }) })
    }

    /// Solver without obstacle, for which `G_D = Phi`.
    pub fn free_space(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::Domain(format!("wavenumber must be positive, got {kappa}")));
        }
        Ok(Self { kappa, eta: kappa, obstacle: None })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn mesh(&self) -> Option<&BoundaryMesh> {
        self.obstacle.as_ref().map(|o| &o.mesh)
    }

    pub fn n_bdy(&self) -> usize {
        self.obstacle.as_ref().map_or(0, |o| o.mesh.len())
    }

    pub fn info(&self) -> SolverInfo {
        SolverInfo {
            n_bdy: self.n_bdy(),
            kappa: self.kappa,
            coupling_eta: self.eta,
            condition_estimate: self.obstacle.as_ref().map_or(1.0, |o| o.condition),
        }
    }

    /// Rejects points inside the obstacle or on its boundary.
    pub fn check_exterior(&self, p: &Point) -> Result<()> {
        if let Some(o) = &self.obstacle {
            let shape = &o.mesh.shape;
            if shape.contains(p) || shape.radial_gap(p) < 1e-10 {
                return Err(Error::Geometry(format!(
                    "point ({:.6}, {:.6}) is not strictly exterior to the obstacle",
                    p.x, p.y
                )));
            }
        }
        Ok(())
    }

    /// Neumann traces `dG_D(z_j, y)/dnu(z_j)` for each source, one column per
    /// source. Empty (0 rows) in free space.
    pub fn neumann_traces(&self, sources: &[Point]) -> Result<DMatrix<Complex64>> {
        for y in sources {
            self.check_exterior(y)?;
        }
        let Some(o) = &self.obstacle else {
            return Ok(DMatrix::zeros(0, sources.len()));
        };
        let mesh = &o.mesh;
        let n = mesh.len();
        let columns: Vec<Vec<Complex64>> = sources
            .par_iter()
            .map(|y| {
                (0..n)
                    .map(|i| {
                        let d = mesh.points[i] - y;
                        let r = d.norm();
                        let b = bessel_pair(self.kappa * r);
                        let phi = Complex64::new(-0.25 * b.y0, 0.25 * b.j0);
                        let scale = d.dot(&mesh.normals[i]) / r * 0.25 * self.kappa;
                        let dphi = Complex64::new(b.y1 * scale, -b.j1 * scale);
                        (dphi - I * self.eta * phi) * 2.0
                    })
                    .collect()
            })
            .collect();
        let mut rhs = DMatrix::zeros(n, sources.len());
        for (k, col) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                rhs[(i, k)] = *v;
            }
        }
        if !o.lu.solve_mut(&mut rhs) {
            return Err(Error::Solver("boundary solve failed".into()));
        }
        Ok(rhs)
    }

    /// `G_D(x_l, y_n)` for all pairs, given the Neumann traces of the `ys`.
    pub fn green_matrix_with_traces(
        &self,
        xs: &[Point],
        ys: &[Point],
        traces: &DMatrix<Complex64>,
    ) -> Result<DMatrix<Complex64>> {
        for x in xs {
            self.check_exterior(x)?;
        }
        let kappa = self.kappa;
        let rows: Vec<Result<Vec<Complex64>>> = xs
            .par_iter()
            .map(|x| {
                let mut row = Vec::with_capacity(ys.len());
                for y in ys {
                    let r = (x - y).norm();
                    if r == 0.0 {
                        return Err(Error::Domain("Green function evaluated at x = y".into()));
                    }
                    row.push(specfun::phi_radial(r, kappa));
                }
                if let Some(o) = &self.obstacle {
                    // single-layer weights Phi(x, z_j) |z'_j| h
                    let s: Vec<Complex64> = o
                        .mesh
                        .points
                        .iter()
                        .zip(&o.arc_weights)
                        .map(|(z, w)| specfun::phi_radial((x - z).norm(), kappa) * *w)
                        .collect();
                    for (k, g) in row.iter_mut().enumerate() {
                        let col = traces.column(k);
                        let layer: Complex64 = s.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
                        *g -= layer;
                    }
                }
                Ok(row)
            })
            .collect();
        let mut out = DMatrix::zeros(xs.len(), ys.len());
        for (l, row) in rows.into_iter().enumerate() {
            for (k, v) in row?.into_iter().enumerate() {
                out[(l, k)] = v;
            }
        }
        Ok(out)
    }

    /// `G_D(x_l, y_n)` for all pairs; one density solve per `y`.
    pub fn green_matrix(&self, xs: &[Point], ys: &[Point]) -> Result<DMatrix<Complex64>> {
        let traces = self.neumann_traces(ys)?;
        self.green_matrix_with_traces(xs, ys, &traces)
    }

    /// Dirichlet Green function `G_D(x, y)`.
    pub fn green_function(&self, x: &Point, y: &Point) -> Result<Complex64> {
        Ok(self.green_matrix(&[*x], &[*y])?[(0, 0)])
    }

    /// `dG_D(x, y)/dnu(x)` at the boundary nodes `x`, for a source `y`.
    pub fn green_kernel_src_to_bdy(&self, y: &Point) -> Result<Vec<Complex64>> {
        Ok(self.neumann_traces(&[*y])?.column(0).iter().copied().collect())
    }

    /// `dG_D(x, y)/dnu(y)` at the boundary nodes `y`, for a receiver `x`.
    /// Equal to [`Self::green_kernel_src_to_bdy`] at `x` by reciprocity.
    pub fn green_kernel_bdy_to_meas(&self, x: &Point) -> Result<Vec<Complex64>> {
        self.green_kernel_src_to_bdy(x)
    }

    /// Total field `G_D(z(t), y)` at an arbitrary boundary parameter `t`,
    /// using the product quadrature for the single layer. Vanishes up to the
    /// discretisation error.
    pub fn boundary_total_field(&self, t: f64, y: &Point) -> Result<Complex64> {
        let o = self
            .obstacle
            .as_ref()
            .ok_or_else(|| Error::Domain("no obstacle boundary in free space".into()))?;
        let mesh = &o.mesh;
        let chi = self.green_kernel_src_to_bdy(y)?;
        let (z, _, _) = mesh.shape.parameterization(t);
        let n_half = mesh.len() / 2;
        let h = PI / n_half as f64;
        let mut single = Complex64::new(0.0, 0.0);
        for j in 0..mesh.len() {
            let offset = t - mesh.thetas[j];
            let jac = mesh.jacobians[j];
            let r = (z - mesh.points[j]).norm();
            let (m1, m2) = if r < 1e-14 {
                let m2 = (Complex64::new(0.0, 0.5)
                    - EULER_GAMMA / PI
                    - (self.kappa * jac / 2.0).ln() / PI)
                    * jac;
                (Complex64::new(-jac / (2.0 * PI), 0.0), m2)
            } else {
                let b = bessel_pair(self.kappa * r);
                let m = Complex64::new(-0.5 * b.y0 * jac, 0.5 * b.j0 * jac);
                let m1 = -b.j0 * jac / (2.0 * PI);
                let log = (4.0 * (0.5 * offset).sin().powi(2)).ln();
                (Complex64::new(m1, 0.0), m - m1 * log)
            };
            let w = log_quadrature_weight(n_half, offset);
            // S = (1/2) int M chi dtau
            single += (m1 * w + m2 * h) * chi[j] * 0.5;
        }
        Ok(specfun::phi_radial((z - y).norm(), self.kappa) - single)
    }
}

fn one_norm(m: &DMatrix<Complex64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Nystrom matrix of `I + 2K' - 2 i eta S` on the mesh nodes.
fn assemble_system(mesh: &BoundaryMesh, kappa: f64, eta: f64) -> DMatrix<Complex64> {
    let n_bdy = mesh.len();
    let n_half = n_bdy / 2;
    let h = PI / n_half as f64;
    let log_weights: Vec<f64> =
        (0..n_bdy).map(|d| log_quadrature_weight(n_half, d as f64 * h)).collect();
    let log_factor: Vec<f64> = (0..n_bdy)
        .map(|d| if d == 0 { 0.0 } else { (4.0 * (0.5 * d as f64 * h).sin().powi(2)).ln() })
        .collect();

    let rows: Vec<Vec<Complex64>> = (0..n_bdy)
        .into_par_iter()
        .map(|i| {
            let zi = mesh.points[i];
            let nu = mesh.normals[i];
            let jac_i = mesh.jacobians[i];
            (0..n_bdy)
                .map(|j| {
                    let d = (i + n_bdy - j) % n_bdy;
                    let jac_j = mesh.jacobians[j];
                    let (k1, k2) = if i == j {
                        let l2 = nu.dot(&mesh.accelerations[i]) / (2.0 * PI * jac_i);
                        let m1 = Complex64::new(-jac_i / (2.0 * PI), 0.0);
                        let m2 = (Complex64::new(0.0, 0.5)
                            - EULER_GAMMA / PI
                            - (kappa * jac_i / 2.0).ln() / PI)
                            * jac_i;
                        (-I * eta * m1, Complex64::new(l2, 0.0) - I * eta * m2)
                    } else {
                        let diff = zi - mesh.points[j];
                        let r = diff.norm();
                        let b = bessel_pair(kappa * r);
                        let x = diff.dot(&nu) * jac_j;
                        // L' = -(i k / 2) H1 x / r
                        let l = Complex64::new(b.y1, -b.j1) * (0.5 * kappa * x / r);
                        let l1 = kappa / (2.0 * PI) * x * b.j1 / r;
                        // M = (i/2) H0 |z'_j|
                        let m = Complex64::new(-0.5 * b.y0 * jac_j, 0.5 * b.j0 * jac_j);
                        let m1 = -b.j0 * jac_j / (2.0 * PI);
                        let lf = log_factor[d];
                        let k1 = Complex64::new(l1, 0.0) - I * eta * m1;
                        let k = l - I * eta * m;
                        (k1, k - k1 * lf)
                    };
                    let delta = if i == j { 1.0 } else { 0.0 };
                    Complex64::new(delta, 0.0) + k1 * log_weights[d] + k2 * h
                })
                .collect()
        })
        .collect();
    DMatrix::from_fn(n_bdy, n_bdy, |i, j| rows[i][j])
}
