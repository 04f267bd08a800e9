//! Source grids, receiver arrays, the discrete near-field operator and the
//! covariance forward map `C(rho, q) = G diag(q) G^H`.

use crate::bie::ExteriorSolver;
use crate::error::{Error, Result};
use crate::geometry::{discretize, StarShape};
use crate::specfun::Point;
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::f64::consts::PI;
use std::hash::Hasher;
use std::io::{Read, Write};

/// One building block of a source region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Region {
    /// Axis-aligned rectangle split into `nx * ny` equal cells.
    Rectangle { xmin: f64, xmax: f64, ymin: f64, ymax: f64, nx: usize, ny: usize },
    /// Annulus split into `n_radial * n_angular` polar cells.
    Annulus { center: [f64; 2], r_inner: f64, r_outer: f64, n_radial: usize, n_angular: usize },
}

impl Region {
    pub fn area(&self) -> f64 {
        match *self {
            Region::Rectangle { xmin, xmax, ymin, ymax, .. } => (xmax - xmin) * (ymax - ymin),
            Region::Annulus { r_inner, r_outer, .. } => PI * (r_outer * r_outer - r_inner * r_inner),
        }
    }

    fn cell_count(&self) -> usize {
        match *self {
            Region::Rectangle { nx, ny, .. } => nx * ny,
            Region::Annulus { n_radial, n_angular, .. } => n_radial * n_angular,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Region::Rectangle { xmin, xmax, ymin, ymax, nx, ny } => {
                xmax > xmin && ymax > ymin && nx > 0 && ny > 0 && [xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite())
            }
            Region::Annulus { r_inner, r_outer, n_radial, n_angular, .. } => {
                r_inner >= 0.0 && r_outer > r_inner && n_radial > 0 && n_angular >= 3 && r_outer.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Geometry(format!("degenerate source region {self:?}")))
        }
    }

    fn contains(&self, p: &Point) -> bool {
        match *self {
            Region::Rectangle { xmin, xmax, ymin, ymax, .. } => {
                p.x >= xmin && p.x <= xmax && p.y >= ymin && p.y <= ymax
            }
            Region::Annulus { center, r_inner, r_outer, .. } => {
                let r = (p - Point::new(center[0], center[1])).norm();
                r >= r_inner && r <= r_outer
            }
        }
    }

    /// Points on the region outline, used for containment checks.
    fn outline(&self, per_side: usize) -> Vec<Point> {
        match *self {
            Region::Rectangle { xmin, xmax, ymin, ymax, .. } => {
                let mut out = Vec::with_capacity(4 * per_side);
                for i in 0..per_side {
                    let s = i as f64 / per_side as f64;
                    out.push(Point::new(xmin + s * (xmax - xmin), ymin));
                    out.push(Point::new(xmax, ymin + s * (ymax - ymin)));
                    out.push(Point::new(xmax - s * (xmax - xmin), ymax));
                    out.push(Point::new(xmin, ymax - s * (ymax - ymin)));
                }
                out
            }
            Region::Annulus { center, r_inner, r_outer, .. } => {
                let c = Point::new(center[0], center[1]);
                let n = 4 * per_side;
                (0..n)
                    .flat_map(|i| {
                        let t = 2.0 * PI * i as f64 / n as f64;
                        let dir = Point::new(t.cos(), t.sin());
                        [c + dir * r_inner, c + dir * r_outer]
                    })
                    .collect()
            }
        }
    }
}

/// Midpoint quadrature of a source region: nodes `y_n` with cell areas `|Omega_n|`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SourceGrid {
    pub regions: Vec<Region>,
    pub points: Vec<Point>,
    pub measures: Vec<f64>,
    /// Graph edges `(a, b, w)` of the discrete H^1 seminorm `sum w (q_a - q_b)^2`.
    pub edges: Vec<(usize, usize, f64)>,
}

/// Builds the midpoint grid of a union of rectangles and annuli.
pub fn make_source_grid(regions: &[Region]) -> Result<SourceGrid> {
    if regions.is_empty() {
        return Err(Error::Geometry("source region is empty".into()));
    }
    let mut points = Vec::new();
    let mut measures = Vec::new();
    let mut edges = Vec::new();
    for region in regions {
        region.validate()?;
        let offset = points.len();
        match *region {
            Region::Rectangle { xmin, xmax, ymin, ymax, nx, ny } => {
                let hx = (xmax - xmin) / nx as f64;
                let hy = (ymax - ymin) / ny as f64;
                for j in 0..ny {
                    for i in 0..nx {
                        points.push(Point::new(xmin + (i as f64 + 0.5) * hx, ymin + (j as f64 + 0.5) * hy));
                        measures.push(hx * hy);
                        let idx = offset + j * nx + i;
                        if i + 1 < nx {
                            edges.push((idx, idx + 1, hy / hx));
                        }
                        if j + 1 < ny {
                            edges.push((idx, idx + nx, hx / hy));
                        }
                    }
                }
            }
            Region::Annulus { center, r_inner, r_outer, n_radial, n_angular } => {
                let dr = (r_outer - r_inner) / n_radial as f64;
                let dt = 2.0 * PI / n_angular as f64;
                for i in 0..n_radial {
                    let r0 = r_inner + i as f64 * dr;
                    let rm = r0 + 0.5 * dr;
                    for k in 0..n_angular {
                        let t = (k as f64 + 0.5) * dt;
                        points.push(Point::new(center[0] + rm * t.cos(), center[1] + rm * t.sin()));
                        measures.push(0.5 * dt * ((r0 + dr).powi(2) - r0 * r0));
                        let idx = offset + i * n_angular + k;
                        let next = offset + i * n_angular + (k + 1) % n_angular;
                        edges.push((idx, next, dr / (rm * dt)));
                        if i + 1 < n_radial {
                            edges.push((idx, idx + n_angular, (r0 + dr) * dt / dr));
                        }
                    }
                }
            }
        }
        debug_assert_eq!(points.len() - offset, region.cell_count());
    }
    let grid = SourceGrid { regions: regions.to_vec(), points, measures, edges };
    let mut start = 0;
    for (a, region) in regions.iter().enumerate() {
        let end = start + region.cell_count();
        let clash = grid.points[start..end]
            .iter()
            .any(|p| regions.iter().enumerate().any(|(b, other)| b != a && other.contains(p)));
        if clash {
            return Err(Error::Geometry("source regions overlap".into()));
        }
        start = end;
    }
    Ok(grid)
}

impl SourceGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_area(&self) -> f64 {
        self.regions.iter().map(Region::area).sum()
    }

    /// Rejects grids that touch the obstacle or reach the measurement circle.
    pub fn check_geometry(&self, shape: Option<&StarShape>, meas: &MeasurementArray) -> Result<()> {
        let mut probes: Vec<Point> = self.points.clone();
        for r in &self.regions {
            probes.extend(r.outline(128));
        }
        for p in &probes {
            if p.norm() >= meas.radius {
                return Err(Error::Geometry(format!(
                    "source region reaches the measurement circle of radius {} at ({:.4}, {:.4})",
                    meas.radius, p.x, p.y
                )));
            }
        }
        if let Some(shape) = shape {
            if shape.center().norm() + shape.max_radius() >= meas.radius {
                return Err(Error::Geometry("obstacle is not inside the measurement circle".into()));
            }
            if probes.iter().any(|p| shape.contains(p) || shape.radial_gap(p) < 1e-10) {
                return Err(Error::Geometry("source region intersects the obstacle".into()));
            }
            let boundary_hit = (0..512).any(|i| {
                let z = shape.point(2.0 * PI * i as f64 / 512.0);
                self.regions.iter().any(|r| r.contains(&z))
            });
            if boundary_hit {
                return Err(Error::Geometry("source region intersects the obstacle".into()));
            }
        }
        Ok(())
    }

    /// Discrete H^1 quadratic form `q^T (L + diag(|Omega_n|)) q` applied to `q`.
    pub fn h1_apply(&self, q: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = q.iter().zip(&self.measures).map(|(v, m)| v * m).collect();
        for &(a, b, w) in &self.edges {
            let d = w * (q[a] - q[b]);
            out[a] += d;
            out[b] -= d;
        }
        out
    }

    /// `|Omega_n|`-weighted inner product of node values.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.measures).map(|((x, y), m)| x * y * m).sum()
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).sqrt()
    }

    pub fn hash(&self) -> String {
        let mut h = DefaultHasher::new();
        for (p, m) in self.points.iter().zip(&self.measures) {
            h.write_u64(p.x.to_bits());
            h.write_u64(p.y.to_bits());
            h.write_u64(m.to_bits());
        }
        format!("{:016x}", h.finish())
    }

    /// CSV with header `x,y,measure,value`.
    pub fn write_values_csv<W: Write>(&self, values: &[f64], mut out: W) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::Dimension(format!("{} values for {} cells", values.len(), self.len())));
        }
        writeln!(out, "x,y,measure,value")?;
        for ((p, m), v) in self.points.iter().zip(&self.measures).zip(values) {
            writeln!(out, "{:.17e},{:.17e},{:.17e},{:.17e}", p.x, p.y, m, v)?;
        }
        Ok(())
    }
}

/// Receivers equispaced on the circle of radius `R` about the origin.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasurementArray {
    pub radius: f64,
    pub points: Vec<Point>,
}

impl MeasurementArray {
    pub fn circle(radius: f64, n_meas: usize) -> Result<Self> {
        if !(radius > 0.0) || n_meas == 0 {
            return Err(Error::Geometry(format!("invalid measurement circle R = {radius}, N = {n_meas}")));
        }
        let points = (0..n_meas)
            .map(|l| {
                let t = 2.0 * PI * l as f64 / n_meas as f64;
                Point::new(radius * t.cos(), radius * t.sin())
            })
            .collect();
        Ok(Self { radius, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Arc length per receiver, `2 pi R / N_meas`.
    pub fn surface_weight(&self) -> f64 {
        2.0 * PI * self.radius / self.len() as f64
    }

    pub fn hash(&self) -> String {
        let mut h = DefaultHasher::new();
        h.write_u64(self.radius.to_bits());
        h.write_usize(self.len());
        format!("{:016x}", h.finish())
    }
}

/// Identifies the inputs a near-field matrix was assembled from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub shape_hash: String,
    pub kappa: f64,
    pub n_bdy: usize,
    pub grid_hash: String,
    pub meas_hash: String,
}

pub fn shape_hash(shape: Option<&StarShape>) -> String {
    match shape {
        None => "free-space".into(),
        Some(s) => {
            let mut h = DefaultHasher::new();
            for v in s.center.iter().chain(&s.radial.cos).chain(&s.radial.sin) {
                h.write_u64(v.to_bits());
            }
            format!("{:016x}", h.finish())
        }
    }
}

/// `(G)_{ln} = |Omega_n|^{1/2} G_D(x_l, y_n)`.
#[derive(Clone, Debug)]
pub struct NearFieldMatrix {
    pub entries: DMatrix<Complex64>,
    pub provenance: Provenance,
}

impl NearFieldMatrix {
    pub fn n_meas(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_src(&self) -> usize {
        self.entries.ncols()
    }
}

/// Near-field matrix together with the unscaled Neumann traces
/// `dG_D(z_j, y_n)/dnu(z_j)` (empty without an obstacle).
pub struct NearFieldAssembly {
    pub nearfield: NearFieldMatrix,
    pub traces: DMatrix<Complex64>,
}

/// Assembles the near-field matrix with an already factorised solver.
pub fn assemble_nearfield_with(
    solver: &ExteriorSolver,
    grid: &SourceGrid,
    meas: &MeasurementArray,
) -> Result<NearFieldAssembly> {
    let shape = solver.mesh().map(|m| &m.shape);
    grid.check_geometry(shape, meas)?;
    let traces = solver.neumann_traces(&grid.points)?;
    let mut entries = solver.green_matrix_with_traces(&meas.points, &grid.points, &traces)?;
    for (n, m) in grid.measures.iter().enumerate() {
        entries.column_mut(n).scale_mut(m.sqrt());
    }
    let provenance = Provenance {
        shape_hash: shape_hash(shape),
        kappa: solver.kappa(),
        n_bdy: solver.n_bdy(),
        grid_hash: grid.hash(),
        meas_hash: meas.hash(),
    };
    Ok(NearFieldAssembly { nearfield: NearFieldMatrix { entries, provenance }, traces })
}

/// Builds the solver for `shape` (free space when `None`) and assembles the
/// near-field matrix.
pub fn assemble_nearfield(
    shape: Option<&StarShape>,
    n_bdy: usize,
    grid: &SourceGrid,
    meas: &MeasurementArray,
    kappa: f64,
) -> Result<NearFieldMatrix> {
    let solver = build_solver(shape, n_bdy, kappa)?;
    Ok(assemble_nearfield_with(&solver, grid, meas)?.nearfield)
}

pub fn build_solver(shape: Option<&StarShape>, n_bdy: usize, kappa: f64) -> Result<ExteriorSolver> {
    match shape {
        Some(s) => ExteriorSolver::build(discretize(s, n_bdy)?, kappa),
        None => ExteriorSolver::free_space(kappa),
    }
}

/// Hermitian covariance matrix over the receivers.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceMatrix {
    pub entries: DMatrix<Complex64>,
}

impl CovarianceMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// `max |C - C^H|` relative to `max |C|`.
    pub fn hermitian_defect(&self) -> f64 {
        let scale = self.entries.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        (&self.entries - self.entries.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max) / scale
    }

    /// Sorted real eigenvalues of the Hermitian part.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let h = hermitian_part(&self.entries);
        let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Discrete `L^2(M x M)` norm of the kernel samples, `(2 pi R / N)^2`
    /// quadrature weight per entry.
    pub fn kernel_l2_norm(&self, meas: &MeasurementArray) -> f64 {
        self.entries.norm() * meas.surface_weight()
    }
}

/// `(K + K^H) / 2`.
pub fn hermitian_part(k: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (k + k.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Frobenius inner product `Re tr(A^H B)`, the discrete HS pairing.
pub fn hs_inner(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// `G diag(q) G^H` for real (possibly signed) `q`, symmetrised.
pub fn covariance_forward_signed(g: &DMatrix<Complex64>, q: &[f64]) -> Result<DMatrix<Complex64>> {
    if q.len() != g.ncols() {
        return Err(Error::Dimension(format!("q has {} entries for {} sources", q.len(), g.ncols())));
    }
    let mut gq = g.clone();
    for (n, v) in q.iter().enumerate() {
        gq.column_mut(n).scale_mut(*v);
    }
    Ok(hermitian_part(&(gq * g.adjoint())))
}

/// Covariance forward map `C = G diag(q) G^H` for `q >= 0`.
pub fn covariance_forward(g: &NearFieldMatrix, q: &[f64]) -> Result<CovarianceMatrix> {
    if let Some(v) = q.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("source strength must be nonnegative, got {v}")));
    }
    Ok(CovarianceMatrix { entries: covariance_forward_signed(&g.entries, q)? })
}

/// Payload kind stored in a PHLM1 header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixKind {
    NearField = 1,
    Covariance = 2,
    Samples = 3,
}

impl MatrixKind {
    fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(Self::NearField),
            2 => Some(Self::Covariance),
            3 => Some(Self::Samples),
            _ => None,
        }
    }
}

pub const PHLM_MAGIC: &[u8; 5] = b"PHLM1";

/// Writes the PHLM1 layout: magic, `rows: u64`, `cols: u64`, `kind: u32`,
/// then row-major interleaved `(re, im)` f64 values, all little-endian.
pub fn write_phlm<W: Write>(m: &DMatrix<Complex64>, kind: MatrixKind, mut out: W) -> Result<()> {
    out.write_all(PHLM_MAGIC)?;
    out.write_all(&(m.nrows() as u64).to_le_bytes())?;
    out.write_all(&(m.ncols() as u64).to_le_bytes())?;
    out.write_all(&(kind as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(16 * m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.extend_from_slice(&m[(i, j)].re.to_le_bytes());
            buf.extend_from_slice(&m[(i, j)].im.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads a PHLM1 file; errors name the offending header field.
pub fn read_phlm<R: Read>(mut input: R) -> Result<(DMatrix<Complex64>, MatrixKind)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let field = |name: &str, start: usize, len: usize| -> Result<&[u8]> {
        bytes
            .get(start..start + len)
            .ok_or_else(|| Error::Format(format!("truncated header field '{name}'")))
    };
    if field("magic", 0, 5)? != PHLM_MAGIC {
        return Err(Error::Format("bad header field 'magic' (expected PHLM1)".into()));
    }
    let rows = u64::from_le_bytes(field("rows", 5, 8)?.try_into().unwrap());
    let cols = u64::from_le_bytes(field("cols", 13, 8)?.try_into().unwrap());
    let code = u32::from_le_bytes(field("kind", 21, 4)?.try_into().unwrap());
    let kind = MatrixKind::from_code(code)
        .ok_or_else(|| Error::Format(format!("bad header field 'kind' (unknown code {code})")))?;
    let count = rows
        .checked_mul(cols)
        .filter(|c| *c < (1 << 40))
        .ok_or_else(|| Error::Format(format!("bad header field 'rows'/'cols' ({rows} x {cols})")))?;
    let payload = &bytes[25..];
    if payload.len() as u64 != 16 * count {
        return Err(Error::Format(format!(
            "payload length {} does not match header fields 'rows' = {rows}, 'cols' = {cols}",
            payload.len()
        )));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let value = |k: usize| f64::from_le_bytes(payload[8 * k..8 * k + 8].try_into().unwrap());
    let m = DMatrix::from_fn(rows, cols, |i, j| {
        let k = 2 * (i * cols + j);
        Complex64::new(value(k), value(k + 1))
    });
    Ok((m, kind))
}

/// CSV export with header `row,col,re,im`.
pub fn write_matrix_csv<W: Write>(m: &DMatrix<Complex64>, mut out: W) -> Result<()> {
    writeln!(out, "row,col,re,im")?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            writeln!(out, "{i},{j},{:.17e},{:.17e}", m[(i, j)].re, m[(i, j)].im)?;
        }
    }
    Ok(())
}
