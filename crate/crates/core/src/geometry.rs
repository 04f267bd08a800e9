//! Star-shaped obstacles, their boundary discretisation, normal speeds of
//! radial perturbations and the `H^s` inner product on shape coefficients.
//!
//! A shape is `p(theta) = c + rho(theta) (cos theta, sin theta)` with
//! `rho(theta) = a_0 + sum_k a_k cos k theta + b_k sin k theta`. Coefficient
//! vectors use the flat layout `[a_0, a_1..a_K, b_1..b_K]`.

use crate::error::{Error, Result};
use crate::specfun::Point;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

/// Number of angles on which positivity of the radial function is checked.
pub const POSITIVITY_GRID: usize = 512;

/// Default Sobolev exponent of the shape space.
pub const DEFAULT_SOBOLEV_EXPONENT: f64 = 1.6;

/// Real trigonometric polynomial `a_0 + sum a_k cos k t + b_k sin k t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigSeries {
    #[serde(rename = "cos")]
    pub cos: Vec<f64>,
    #[serde(rename = "sin")]
    pub sin: Vec<f64>,
}

impl TrigSeries {
    pub fn new(cos: Vec<f64>, sin: Vec<f64>) -> Result<Self> {
        if cos.is_empty() || sin.len() + 1 != cos.len() {
            return Err(Error::Dimension(format!(
                "need K+1 cosine and K sine coefficients, got {} and {}",
                cos.len(),
                sin.len()
            )));
        }
        Ok(Self { cos, sin })
    }

    pub fn zeros(degree: usize) -> Self {
        Self { cos: vec![0.0; degree + 1], sin: vec![0.0; degree] }
    }

    pub fn degree(&self) -> usize {
        self.sin.len()
    }

    pub fn len(&self) -> usize {
        self.cos.len() + self.sin.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `(f, f', f'')` at `t`.
    pub fn eval_with_derivatives(&self, t: f64) -> (f64, f64, f64) {
        let mut f = self.cos[0];
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for k in 1..=self.degree() {
            let kf = k as f64;
            let (s, c) = (kf * t).sin_cos();
            let (a, b) = (self.cos[k], self.sin[k - 1]);
            f += a * c + b * s;
            d1 += kf * (b * c - a * s);
            d2 -= kf * kf * (a * c + b * s);
        }
        (f, d1, d2)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval_with_derivatives(t).0
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.cos.iter().chain(self.sin.iter()).copied())
    }

    pub fn from_vector(v: &DVector<f64>) -> Result<Self> {
        if v.len() % 2 == 0 {
            return Err(Error::Dimension(format!("coefficient vector length {} is even", v.len())));
        }
        let degree = v.len() / 2;
        Ok(Self {
            cos: v.as_slice()[..=degree].to_vec(),
            sin: v.as_slice()[degree + 1..].to_vec(),
        })
    }

    /// Value of the degree-`k` basis function selected by flat index `j`.
    fn basis(&self, j: usize, t: f64) -> f64 {
        let degree = self.degree();
        if j <= degree {
            (j as f64 * t).cos()
        } else {
            ((j - degree) as f64 * t).sin()
        }
    }
}

/// Star-shaped obstacle. Serialises as `{"center":[x,y],"cos":[..],"sin":[..]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarShape {
    pub center: [f64; 2],
    #[serde(flatten)]
    pub radial: TrigSeries,
}

impl StarShape {
    pub fn new(center: [f64; 2], cos: Vec<f64>, sin: Vec<f64>) -> Result<Self> {
        let shape = Self { center, radial: TrigSeries::new(cos, sin)? };
        shape.validate()?;
        Ok(shape)
    }

    pub fn circle(center: [f64; 2], radius: f64, degree: usize) -> Result<Self> {
        let mut radial = TrigSeries::zeros(degree);
        radial.cos[0] = radius;
        let shape = Self { center, radial };
        shape.validate()?;
        Ok(shape)
    }

    pub fn from_coefficients(center: [f64; 2], coeffs: &DVector<f64>) -> Result<Self> {
        let shape = Self { center, radial: TrigSeries::from_vector(coeffs)? };
        shape.validate()?;
        Ok(shape)
    }

    pub fn center(&self) -> Point {
        Point::new(self.center[0], self.center[1])
    }

    pub fn degree(&self) -> usize {
        self.radial.degree()
    }

    pub fn coefficients(&self) -> DVector<f64> {
        self.radial.to_vector()
    }

    /// Positivity of `rho` on the check grid and coefficient layout.
    pub fn validate(&self) -> Result<()> {
        if self.radial.sin.len() + 1 != self.radial.cos.len() {
            return Err(Error::Dimension("cos/sin coefficient counts inconsistent".into()));
        }
        if self.radial.cos.iter().chain(&self.radial.sin).any(|v| !v.is_finite()) {
            return Err(Error::Geometry("non-finite shape coefficient".into()));
        }
        let min = self.min_radius();
        if !(min > 0.0) {
            return Err(Error::Geometry(format!(
                "radial function not positive (min {min:.3e} on {POSITIVITY_GRID}-point grid)"
            )));
        }
        Ok(())
    }

    pub fn validate_degree(&self, max_degree: usize) -> Result<()> {
        if self.degree() > max_degree {
            return Err(Error::Geometry(format!(
                "shape degree {} exceeds max_degree {max_degree}",
                self.degree()
            )));
        }
        Ok(())
    }

    pub fn min_radius(&self) -> f64 {
        (0..POSITIVITY_GRID)
            .map(|i| self.radial.eval(2.0 * PI * i as f64 / POSITIVITY_GRID as f64))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_radius(&self) -> f64 {
        (0..POSITIVITY_GRID)
            .map(|i| self.radial.eval(2.0 * PI * i as f64 / POSITIVITY_GRID as f64))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest distance of a boundary point from the origin.
    pub fn max_extent(&self) -> f64 {
        (0..POSITIVITY_GRID)
            .map(|i| self.point(2.0 * PI * i as f64 / POSITIVITY_GRID as f64).norm())
            .fold(0.0, f64::max)
    }

    pub fn point(&self, t: f64) -> Point {
        let (s, c) = t.sin_cos();
        self.center() + Point::new(c, s) * self.radial.eval(t)
    }

    /// `z(t), z'(t), z''(t)` of the boundary parameterisation.
    pub fn parameterization(&self, t: f64) -> (Point, Point, Point) {
        let (rho, d1, d2) = self.radial.eval_with_derivatives(t);
        let (s, c) = t.sin_cos();
        let er = Point::new(c, s);
        let et = Point::new(-s, c);
        (self.center() + er * rho, er * d1 + et * rho, er * (d2 - rho) + et * (2.0 * d1))
    }

    /// Strict interior test: `|x - c| < rho(angle)`.
    pub fn contains(&self, x: &Point) -> bool {
        let d = x - self.center();
        let r = d.norm();
        if r == 0.0 {
            return true;
        }
        r < self.radial.eval(d.y.atan2(d.x))
    }

    /// Distance from `x` to the boundary, measured along the ray from the center.
    pub fn radial_gap(&self, x: &Point) -> f64 {
        let d = x - self.center();
        (d.norm() - self.radial.eval(d.y.atan2(d.x))).abs()
    }

    /// Shoelace area of the polygon through `n` boundary points.
    pub fn polygon_area(&self, n: usize) -> f64 {
        let pts: Vec<Point> = (0..n).map(|i| self.point(2.0 * PI * i as f64 / n as f64)).collect();
        0.5 * (0..n)
            .map(|i| {
                let (a, b) = (pts[i], pts[(i + 1) % n]);
                a.x * b.y - b.x * a.y
            })
            .sum::<f64>()
    }

    /// Writes `theta,x,y,nx,ny` for the nodes of `mesh`.
    pub fn write_boundary_csv<W: Write>(mesh: &BoundaryMesh, mut out: W) -> Result<()> {
        writeln!(out, "theta,x,y,nx,ny")?;
        for i in 0..mesh.len() {
            let (p, n) = (mesh.points[i], mesh.normals[i]);
            writeln!(out, "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}", mesh.thetas[i], p.x, p.y, n.x, n.y)?;
        }
        Ok(())
    }
}

/// Symmetric Hausdorff distance between two boundaries, each resolved by
/// `samples` points and compared point-to-polygon.
pub fn hausdorff_distance(a: &StarShape, b: &StarShape, samples: usize) -> f64 {
    let poly = |s: &StarShape| -> Vec<Point> {
        (0..samples).map(|i| s.point(2.0 * PI * i as f64 / samples as f64)).collect()
    };
    let pa = poly(a);
    let pb = poly(b);
    let one_sided = |from: &[Point], to: &[Point]| {
        from.iter()
            .map(|p| {
                (0..to.len())
                    .map(|j| segment_distance(p, &to[j], &to[(j + 1) % to.len()]))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    one_sided(&pa, &pb).max(one_sided(&pb, &pa))
}

fn segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}

/// Nystrom discretisation of a star-shaped boundary on an equispaced
/// parameter grid.
#[derive(Clone, Debug)]
pub struct BoundaryMesh {
    pub shape: StarShape,
    pub thetas: Vec<f64>,
    pub points: Vec<Point>,
    pub normals: Vec<Point>,
    /// `|p'(theta)|`, length per radian.
    pub jacobians: Vec<f64>,
    /// Trapezoid weights `2 pi / N` in the parameter.
    pub weights: Vec<f64>,
    /// `p'(theta)`.
    pub tangents: Vec<Point>,
    /// `p''(theta)`.
    pub accelerations: Vec<Point>,
    /// `rho(theta)` at the nodes.
    pub radii: Vec<f64>,
}

impl BoundaryMesh {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Arclength quadrature weights `|p'| 2 pi / N`.
    pub fn arc_weights(&self) -> Vec<f64> {
        self.jacobians.iter().zip(&self.weights).map(|(j, w)| j * w).collect()
    }

    pub fn arclength(&self) -> f64 {
        self.arc_weights().iter().sum()
    }

    /// Quadrature-weighted inner product on node values.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.arc_weights().iter().zip(u).zip(v).map(|((w, a), b)| w * a * b).sum()
    }

    /// Point-in-polygon test against the node polygon (even-odd rule).
    pub fn encloses(&self, x: &Point) -> bool {
        let n = self.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.points[i];
            let b = self.points[(i + 1) % n];
            if (a.y > x.y) != (b.y > x.y) {
                let cross = a.x + (x.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if x.x < cross {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

/// Discretises `shape` at `n_bdy` equispaced parameter values.
pub fn discretize(shape: &StarShape, n_bdy: usize) -> Result<BoundaryMesh> {
    if n_bdy < 16 || n_bdy % 2 != 0 {
        return Err(Error::Domain(format!("n_bdy must be even and >= 16, got {n_bdy}")));
    }
    shape.validate()?;
    let h = 2.0 * PI / n_bdy as f64;
    let mut mesh = BoundaryMesh {
        shape: shape.clone(),
        thetas: Vec::with_capacity(n_bdy),
        points: Vec::with_capacity(n_bdy),
        normals: Vec::with_capacity(n_bdy),
        jacobians: Vec::with_capacity(n_bdy),
        weights: vec![h; n_bdy],
        tangents: Vec::with_capacity(n_bdy),
        accelerations: Vec::with_capacity(n_bdy),
        radii: Vec::with_capacity(n_bdy),
    };
    for i in 0..n_bdy {
        let t = h * i as f64;
        let (z, dz, ddz) = shape.parameterization(t);
        let jac = dz.norm();
        mesh.thetas.push(t);
        mesh.points.push(z);
        mesh.normals.push(Point::new(dz.y, -dz.x) / jac);
        mesh.jacobians.push(jac);
        mesh.tangents.push(dz);
        mesh.accelerations.push(ddz);
        mesh.radii.push(shape.radial.eval(t));
    }
    Ok(mesh)
}

/// Tangent direction `d rho` of the shape space; same layout as the shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialPerturbation(pub TrigSeries);

impl RadialPerturbation {
    pub fn zeros(degree: usize) -> Self {
        Self(TrigSeries::zeros(degree))
    }

    pub fn from_vector(v: &DVector<f64>) -> Result<Self> {
        Ok(Self(TrigSeries::from_vector(v)?))
    }

    pub fn to_vector(&self) -> DVector<f64> {
        self.0.to_vector()
    }

    pub fn degree(&self) -> usize {
        self.0.degree()
    }
}

fn check_perturbation(shape: &StarShape, degree: usize) -> Result<()> {
    if shape.degree() != degree {
        return Err(Error::Dimension(format!(
            "perturbation degree {degree} does not match shape degree {}",
            shape.degree()
        )));
    }
    Ok(())
}

/// `(h . nu)` at the mesh nodes for `h = d rho (cos, sin)`, i.e.
/// `d rho * rho / |p'|`.
pub fn normal_speed(shape: &StarShape, dr: &RadialPerturbation, mesh: &BoundaryMesh) -> Result<Vec<f64>> {
    check_perturbation(shape, dr.degree())?;
    check_perturbation(&mesh.shape, dr.degree())?;
    Ok(mesh
        .thetas
        .iter()
        .enumerate()
        .map(|(i, &t)| dr.0.eval(t) * mesh.radii[i] / mesh.jacobians[i])
        .collect())
}

/// Adjoint of [`normal_speed`] from the arclength-weighted node inner product
/// to the `H^s` coefficient inner product given by `gram`.
pub fn normal_speed_adjoint(
    shape: &StarShape,
    mesh: &BoundaryMesh,
    w: &[f64],
    gram: &SobolevGram,
) -> Result<RadialPerturbation> {
    if w.len() != mesh.len() {
        return Err(Error::Dimension(format!("{} node values for {} nodes", w.len(), mesh.len())));
    }
    check_perturbation(shape, gram.degree())?;
    let raw = normal_speed_adjoint_raw(mesh, w);
    RadialPerturbation::from_vector(&gram.solve(&raw))
}

/// Euclidean (pre-Gram) part of the adjoint: `sum_i basis_j(t_i) rho_i w_i h`.
pub fn normal_speed_adjoint_raw(mesh: &BoundaryMesh, w: &[f64]) -> DVector<f64> {
    let degree = mesh.shape.degree();
    let n = 2 * degree + 1;
    let mut out = DVector::zeros(n);
    for (i, &t) in mesh.thetas.iter().enumerate() {
        // |p'| from the arclength weight cancels the 1/|p'| of the normal speed
        let s = w[i] * mesh.radii[i] * mesh.weights[i];
        for j in 0..n {
            out[j] += s * mesh.shape.radial.basis(j, t);
        }
    }
    out
}

/// Diagonal Gram matrix of the `H^s` inner product on shape coefficients:
/// weight `(1 + k^2)^s` on both degree-`k` coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SobolevGram {
    pub exponent: f64,
    pub weights: DVector<f64>,
}

pub fn sobolev_gram(max_degree: usize, s: f64) -> Result<SobolevGram> {
    if !(s >= 0.0) {
        return Err(Error::Domain(format!("Sobolev exponent must be non-negative, got {s}")));
    }
    let n = 2 * max_degree + 1;
    let weights = DVector::from_fn(n, |j, _| {
        let k = if j <= max_degree { j } else { j - max_degree } as f64;
        (1.0 + k * k).powf(s)
    });
    Ok(SobolevGram { exponent: s, weights })
}

impl SobolevGram {
    pub fn degree(&self) -> usize {
        self.weights.len() / 2
    }

    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.iter().zip(b.iter()).zip(self.weights.iter()).map(|((x, y), w)| w * x * y).sum()
    }

    pub fn norm(&self, a: &DVector<f64>) -> f64 {
        self.inner(a, a).sqrt()
    }

    pub fn apply(&self, a: &DVector<f64>) -> DVector<f64> {
        a.component_mul(&self.weights)
    }

    pub fn solve(&self, a: &DVector<f64>) -> DVector<f64> {
        a.component_div(&self.weights)
    }
}
