//! Regularised reconstruction drivers: Tikhonov-CG for the source strength,
//! iteratively regularised Gauss-Newton for the shape and for shape and
//! strength jointly, and Newton-CG with a discrepancy-type inner stopping rule.
//!
//! All drivers minimise the weighted misfit
//! `1/2 || W^{-1/2} (C(rho, q) + nu I - C^obs) ||_F^2` where `W` acts as
//! `X -> B X B` with `B = C^obs + beta I` and `nu` is the modelled noise
//! variance.

use crate::calculus::{covariance_adjoint, covariance_derivative, LinearizationPoint};
use crate::error::{Error, Result};
use crate::forward::{
    covariance_forward_signed, hs_inner, CovarianceMatrix, MeasurementArray, NearFieldMatrix, SourceGrid,
};
use crate::geometry::{sobolev_gram, RadialPerturbation, StarShape, DEFAULT_SOBOLEV_EXPONENT};
use crate::stochastics::{build_weight, WeightOperator};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Which reconstruction driver to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InversionMode {
    Source,
    Shape,
    Joint,
    NewtonCg,
}

impl std::str::FromStr for InversionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Self::Source),
            "shape" => Ok(Self::Shape),
            "joint" => Ok(Self::Joint),
            "newton-cg" => Ok(Self::NewtonCg),
            other => Err(Error::Config(format!("unknown inversion mode '{other}'"))),
        }
    }
}

/// Regularisation and iteration parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    pub mode: InversionMode,
    pub alpha0: f64,
    pub alpha_decay: f64,
    pub max_newton: usize,
    pub cg_tol: f64,
    pub cg_max: usize,
    /// `H^s` exponent of the shape penalty.
    pub s: f64,
    /// Shift of the weight base `C^obs + beta I`.
    pub beta: f64,
    /// Noise variance added to the model covariance.
    pub noise_variance: f64,
    pub newton_cg_factor: f64,
    /// Boundary nodes used by the inversion's forward solver.
    pub n_bdy: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            mode: InversionMode::Shape,
            alpha0: 1.0,
            alpha_decay: 2.0 / 3.0,
            max_newton: 20,
            cg_tol: 1e-8,
            cg_max: 200,
            s: DEFAULT_SOBOLEV_EXPONENT,
            beta: 0.01,
            noise_variance: 0.0,
            newton_cg_factor: 0.8,
            n_bdy: 64,
        }
    }
}

impl InversionConfig {
    /// Preset with `alpha0 = N_sample^{-1/2}`.
    pub fn a_priori(n_sample: usize) -> Self {
        Self { alpha0: 1.0 / (n_sample.max(1) as f64).sqrt(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.alpha0 > 0.0) {
            return fail(format!("alpha0 must be positive, got {}", self.alpha0));
        }
        if !(self.alpha_decay > 0.0 && self.alpha_decay < 1.0) {
            return fail(format!("alpha_decay must lie in (0,1), got {}", self.alpha_decay));
        }
        if !(self.newton_cg_factor > 0.0 && self.newton_cg_factor < 1.0) {
            return fail(format!("newton_cg_factor must lie in (0,1), got {}", self.newton_cg_factor));
        }
        if !(self.cg_tol > 0.0) {
            return fail(format!("cg_tol must be positive, got {}", self.cg_tol));
        }
        if !(self.beta > 0.0) {
            return fail(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.noise_variance >= 0.0) {
            return fail(format!("noise_variance must be nonnegative, got {}", self.noise_variance));
        }
        if !(self.s >= 0.0) {
            return fail(format!("Sobolev exponent must be nonnegative, got {}", self.s));
        }
        if self.n_bdy < 16 || self.n_bdy % 2 != 0 {
            return fail(format!("n_bdy must be even and >= 16, got {}", self.n_bdy));
        }
        Ok(())
    }

    pub fn alpha(&self, n: usize) -> f64 {
        self.alpha0 * self.alpha_decay.powi(n as i32)
    }
}

/// One completed outer iteration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub alpha: f64,
    /// `||W^{-1/2} R||_F` before the update.
    pub weighted_residual: f64,
    pub regularization: f64,
    pub update_norm: f64,
    pub cg_iterations: usize,
    pub cg_converged: bool,
    pub step_halvings: usize,
    pub wall_time_s: f64,
}

/// Log of an inversion run.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: Option<InversionMode>,
    pub config: Option<InversionConfig>,
    pub seed: Option<u64>,
    pub iterations: Vec<IterationRecord>,
    pub final_weighted_residual: Option<f64>,
    /// Iterations after the first whose residual exceeded its predecessor.
    pub monotonicity_violations: Vec<usize>,
    pub stop_reason: String,
    pub final_shape: Option<StarShape>,
    pub final_q: Option<Vec<f64>>,
    pub condition_estimates: Vec<f64>,
    pub error: Option<String>,
}

impl RunRecord {
    fn new(cfg: &InversionConfig, mode: InversionMode) -> Self {
        Self { mode: Some(mode), config: Some(cfg.clone()), ..Self::default() }
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.iterations.iter().map(|i| i.weighted_residual).collect()
    }

    fn flag_monotonicity(&mut self) {
        let r = self.residuals();
        self.monotonicity_violations = (2..r.len()).filter(|&i| r[i] > r[i - 1]).collect();
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Driver failure carrying the record of the iterations that completed.
#[derive(Debug)]
pub struct InversionError {
    pub error: Error,
    pub record: RunRecord,
}

impl std::fmt::Display for InversionError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} iterations)", self.error, self.record.iterations.len())
    }
}

impl std::error::Error for InversionError {}

impl From<InversionError> for Error {
    fn from(e: InversionError) -> Self {
        e.error
    }
}

fn fail(error: Error, mut record: RunRecord) -> InversionError {
    record.error = Some(error.to_string());
    record.stop_reason = "error".into();
    InversionError { error, record }
}

pub type DriverResult<T> = std::result::Result<T, InversionError>;

// ---------------------------------------------------------------------------
// Conjugate gradients

/// Iterate state passed to a CG monitor.
pub struct CgState<'a> {
    pub iteration: usize,
    pub x: &'a DVector<f64>,
    pub residual_norm: f64,
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Stopped early by the monitor.
    pub stopped_by_monitor: bool,
    pub relative_residual: f64,
}

fn metric_inner(metric: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).zip(metric.iter()).map(|((x, y), m)| x * y * m).sum()
}

/// Random probe `|<Av, w> - <v, Aw>|` relative to `||Av|| ||w|| + ||v|| ||Aw||`.
pub fn symmetry_probe<F>(op: &mut F, metric: &DVector<f64>, seed: u64) -> Result<f64>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = metric.len();
    let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let w = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let av = op(&v)?;
    let aw = op(&w)?;
    let norm = |x: &DVector<f64>| metric_inner(metric, x, x).sqrt();
    let scale = norm(&av) * norm(&w) + norm(&v) * norm(&aw);
    let gap = (metric_inner(metric, &av, &w) - metric_inner(metric, &v, &aw)).abs();
    Ok(if scale > 0.0 { gap / scale } else { 0.0 })
}

/// CG for `A x = b` with `A` self-adjoint and positive semidefinite in the
/// inner product `<a, b> = sum metric_i a_i b_i`. Starts from zero. The
/// monitor may stop the iteration by returning `true`. In debug builds a
/// random symmetry probe guards the operator.
pub fn cg_solve<F, M>(
    mut op: F,
    rhs: &DVector<f64>,
    metric: &DVector<f64>,
    tol: f64,
    max_iter: usize,
    mut monitor: M,
) -> Result<CgOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    M: FnMut(&CgState) -> Result<bool>,
{
    if rhs.len() != metric.len() {
        return Err(Error::Dimension(format!("rhs length {} vs metric length {}", rhs.len(), metric.len())));
    }
    if cfg!(debug_assertions) && rhs.len() > 0 {
        let asym = symmetry_probe(&mut op, metric, 0x5eed)?;
        if asym > 1e-10 {
            return Err(Error::Numerical(format!("CG operator failed the symmetry probe ({asym:.3e})")));
        }
    }
    let mut x = DVector::zeros(rhs.len());
    let b_norm = metric_inner(metric, rhs, rhs).sqrt();
    if !b_norm.is_finite() {
        return Err(Error::Numerical("non-finite right-hand side in CG".into()));
    }
    if b_norm == 0.0 {
        return Ok(CgOutcome { x, iterations: 0, converged: true, stopped_by_monitor: false, relative_residual: 0.0 });
    }
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = metric_inner(metric, &r, &r);
    let mut iterations = 0;
    while iterations < max_iter {
        let ap = op(&p)?;
        let pap = metric_inner(metric, &p, &ap);
        if !pap.is_finite() {
            return Err(Error::Numerical("non-finite value in CG".into()));
        }
        if pap <= 0.0 {
            break;
        }
        let step = rr / pap;
        x.axpy(step, &p, 1.0);
        r.axpy(-step, &ap, 1.0);
        let rr_new = metric_inner(metric, &r, &r);
        iterations += 1;
        let rel = rr_new.sqrt() / b_norm;
        if monitor(&CgState { iteration: iterations, x: &x, residual_norm: rr_new.sqrt() })? {
            return Ok(CgOutcome { x, iterations, converged: rel <= tol, stopped_by_monitor: true, relative_residual: rel });
        }
        if rel <= tol {
            return Ok(CgOutcome { x, iterations, converged: true, stopped_by_monitor: false, relative_residual: rel });
        }
        p = &r + &p * (rr_new / rr);
        rr = rr_new;
    }
    let rel = metric_inner(metric, &r, &r).sqrt() / b_norm;
    Ok(CgOutcome { x, iterations, converged: rel <= tol, stopped_by_monitor: false, relative_residual: rel })
}

fn no_monitor(_: &CgState) -> Result<bool> {
    Ok(false)
}

// ---------------------------------------------------------------------------
// Data fidelity

/// Weighted misfit against observed correlations.
pub struct DataFidelity {
    pub weight: WeightOperator,
    /// `C^obs - nu I`.
    pub target: DMatrix<Complex64>,
}

impl DataFidelity {
    pub fn new(c_obs: &CovarianceMatrix, beta: f64, noise_variance: f64) -> Result<Self> {
        let weight = build_weight(c_obs, beta)?;
        let n = c_obs.dim();
        let target = &c_obs.entries - DMatrix::<Complex64>::identity(n, n) * Complex64::new(noise_variance, 0.0);
        Ok(Self { weight, target })
    }

    pub fn residual(&self, c: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        c - &self.target
    }

    /// `W^{-1} X`.
    pub fn whiten(&self, x: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
        self.weight.apply_power(x, -1.0)
    }

    /// `||W^{-1/2} X||_F`, computed as `sqrt(<X, W^{-1} X>)`.
    pub fn weighted_norm(&self, x: &DMatrix<Complex64>) -> Result<f64> {
        Ok(hs_inner(x, &self.whiten(x)?).max(0.0).sqrt())
    }

    /// `1/2 ||W^{-1/2}(C - target)||^2`.
    pub fn misfit(&self, c: &DMatrix<Complex64>) -> Result<f64> {
        let r = self.residual(c);
        Ok(0.5 * self.weighted_norm(&r)?.powi(2))
    }
}

/// Gradient of the misfit at a linearisation point: `(d rho*, dq*)` with
/// respect to the `H^s` and `|Omega_n|`-weighted inner products.
pub fn misfit_gradient(l: &LinearizationPoint, fid: &DataFidelity) -> Result<(RadialPerturbation, Vec<f64>)> {
    let r = fid.residual(&l.covariance()?);
    covariance_adjoint(l, &fid.whiten(&r)?)
}

// ---------------------------------------------------------------------------
// Source strength (linear problem)

/// Linear map `q -> G M_q G^H` with its `|Omega_n|`-weighted adjoint.
struct SourceOperator<'a> {
    g: &'a DMatrix<Complex64>,
    measures: &'a [f64],
}

impl SourceOperator<'_> {
    fn forward(&self, q: &DVector<f64>) -> Result<DMatrix<Complex64>> {
        covariance_forward_signed(self.g, q.as_slice())
    }

    fn adjoint(&self, k: &DMatrix<Complex64>) -> DVector<f64> {
        let kg = k * self.g;
        DVector::from_fn(self.g.ncols(), |n, _| {
            let d: Complex64 = self.g.column(n).iter().zip(kg.column(n).iter()).map(|(a, b)| a.conj() * b).sum();
            d.re / self.measures[n]
        })
    }
}

/// Result of a source reconstruction.
#[derive(Clone, Debug)]
pub struct SourceOutcome {
    pub q: Vec<f64>,
    pub record: RunRecord,
}

/// `M^{-1} (L + I_w) q`, the H^1 penalty gradient in the weighted metric.
fn h1_gradient(grid: &SourceGrid, q: &DVector<f64>) -> DVector<f64> {
    let applied = grid.h1_apply(q.as_slice());
    DVector::from_fn(q.len(), |n, _| applied[n] / grid.measures[n])
}

/// Tikhonov reconstruction of `q` with a known near-field matrix, by CG on
/// the normal equations `(T* W^{-1} T + alpha M^{-1}(L + I_w)) q = T* W^{-1} C^obs`.
pub fn invert_source(
    c_obs: &CovarianceMatrix,
    g: &NearFieldMatrix,
    grid: &SourceGrid,
    cfg: &InversionConfig,
) -> DriverResult<SourceOutcome> {
    let mut record = RunRecord::new(cfg, InversionMode::Source);
    let run = || -> Result<(Vec<f64>, IterationRecord, f64)> {
        cfg.validate()?;
        if g.n_src() != grid.len() || g.n_meas() != c_obs.dim() {
            return Err(Error::Dimension("near-field matrix does not match grid or data".into()));
        }
        let start = Instant::now();
        let fid = DataFidelity::new(c_obs, cfg.beta, cfg.noise_variance)?;
        let op = SourceOperator { g: &g.entries, measures: &grid.measures };
        let alpha = cfg.alpha0;
        let metric = DVector::from_column_slice(&grid.measures);
        let rhs = op.adjoint(&fid.whiten(&fid.target)?);
        let initial = fid.weighted_norm(&fid.target)?;
        let normal = |v: &DVector<f64>| -> Result<DVector<f64>> {
            Ok(op.adjoint(&fid.whiten(&op.forward(v)?)?) + h1_gradient(grid, v) * alpha)
        };
        let out = cg_solve(normal, &rhs, &metric, cfg.cg_tol, cfg.cg_max, no_monitor)?;
        let q = out.x;
        let final_res = fid.weighted_norm(&fid.residual(&op.forward(&q)?))?;
        let reg = 0.5 * alpha * q.dot(&DVector::from_vec(grid.h1_apply(q.as_slice())));
        let rec = IterationRecord {
            iteration: 0,
            alpha,
            weighted_residual: initial,
            regularization: reg,
            update_norm: metric_inner(&metric, &q, &q).sqrt(),
            cg_iterations: out.iterations,
            cg_converged: out.converged,
            step_halvings: 0,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        Ok((q.iter().copied().collect(), rec, final_res))
    };
    match run() {
        Ok((q, rec, final_res)) => {
            record.stop_reason = if rec.cg_converged { "cg converged".into() } else { "cg iteration limit".into() };
            record.iterations.push(rec);
            record.final_weighted_residual = Some(final_res);
            record.final_q = Some(q.clone());
            Ok(SourceOutcome { q, record })
        }
        Err(e) => Err(fail(e, record)),
    }
}

// ---------------------------------------------------------------------------
// Shape and joint Gauss-Newton

/// Fixed data of a shape or joint reconstruction.
pub struct ShapeProblem<'a> {
    pub c_obs: &'a CovarianceMatrix,
    pub grid: &'a SourceGrid,
    pub meas: &'a MeasurementArray,
    pub kappa: f64,
}

/// Result of a shape or joint reconstruction.
#[derive(Clone, Debug)]
pub struct ShapeOutcome {
    pub shape: StarShape,
    pub q: Vec<f64>,
    pub record: RunRecord,
}

/// Parameter layout `[shape coefficients; q]` with an optional frozen q-block.
struct Layout {
    n_shape: usize,
    n_q: usize,
    q_active: bool,
}

impl Layout {
    fn len(&self) -> usize {
        self.n_shape + if self.q_active { self.n_q } else { 0 }
    }

    fn metric(&self, l: &LinearizationPoint) -> DVector<f64> {
        let mut m = l.gram.weights.clone().resize_vertically(self.len(), 0.0);
        if self.q_active {
            m.rows_mut(self.n_shape, self.n_q).copy_from_slice(&l.measures);
        }
        m
    }

    fn split(&self, x: &DVector<f64>) -> Result<(RadialPerturbation, Vec<f64>)> {
        let dr = RadialPerturbation::from_vector(&x.rows(0, self.n_shape).into_owned())?;
        let dq = if self.q_active { x.rows(self.n_shape, self.n_q).iter().copied().collect() } else { vec![0.0; self.n_q] };
        Ok((dr, dq))
    }

    fn join(&self, dr: &RadialPerturbation, dq: &[f64]) -> DVector<f64> {
        let mut out = dr.to_vector().resize_vertically(self.len(), 0.0);
        if self.q_active {
            out.rows_mut(self.n_shape, self.n_q).copy_from_slice(dq);
        }
        out
    }
}

struct Linearized<'a> {
    l: &'a LinearizationPoint,
    fid: &'a DataFidelity,
    layout: &'a Layout,
}

impl Linearized<'_> {
    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<Complex64>> {
        let (dr, dq) = self.layout.split(x)?;
        covariance_derivative(self.l, &dr, &dq)
    }

    fn adjoint(&self, k: &DMatrix<Complex64>) -> Result<DVector<f64>> {
        if self.layout.q_active {
            let (dr, dq) = covariance_adjoint(self.l, k)?;
            Ok(self.layout.join(&dr, &dq))
        } else {
            let (dr, _) = covariance_adjoint(self.l, k)?;
            Ok(self.layout.join(&dr, &[]))
        }
    }

    /// `J* W^{-1} J x`.
    fn gauss_newton(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.adjoint(&self.fid.whiten(&self.jacobian(x)?)?)
    }
}

/// Applies `x -> (x_shape, M^{-1}(L + I_w) x_q)`, the regulariser gradient.
fn regularizer(layout: &Layout, grid: &SourceGrid, x: &DVector<f64>) -> DVector<f64> {
    let mut out = x.clone();
    if layout.q_active {
        let xq = x.rows(layout.n_shape, layout.n_q).into_owned();
        out.rows_mut(layout.n_shape, layout.n_q).copy_from(&h1_gradient(grid, &xq));
    }
    out
}

fn check_problem(p: &ShapeProblem, shape: &StarShape, q: &[f64], cfg: &InversionConfig) -> Result<()> {
    cfg.validate()?;
    shape.validate()?;
    if q.len() != p.grid.len() {
        return Err(Error::Dimension(format!("q has {} entries for {} sources", q.len(), p.grid.len())));
    }
    if p.c_obs.dim() != p.meas.len() {
        return Err(Error::Dimension(format!("data is {}x{} for {} receivers", p.c_obs.dim(), p.c_obs.dim(), p.meas.len())));
    }
    if let Some(v) = q.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("source strength must be nonnegative, got {v}")));
    }
    p.grid.check_geometry(Some(shape), p.meas)
}

/// Attempts `shape + step * dc`, halving the step on invalid geometry.
fn damped_update(
    p: &ShapeProblem,
    shape: &StarShape,
    dc: &DVector<f64>,
) -> Result<(StarShape, usize)> {
    let base = shape.coefficients();
    let mut step = 1.0;
    for halvings in 0..=10 {
        let trial = StarShape::from_coefficients(shape.center, &(&base + dc * step));
        if let Ok(s) = trial {
            if p.grid.check_geometry(Some(&s), p.meas).is_ok() {
                return Ok((s, halvings));
            }
        }
        step *= 0.5;
    }
    Err(Error::Geometry("shape update stays invalid after 10 step halvings".into()))
}

fn gauss_newton_loop(
    p: &ShapeProblem,
    init_shape: &StarShape,
    init_q: &[f64],
    cfg: &InversionConfig,
    q_active: bool,
    mode: InversionMode,
) -> DriverResult<ShapeOutcome> {
    let mut record = RunRecord::new(cfg, mode);
    if let Err(e) = check_problem(p, init_shape, init_q, cfg) {
        return Err(fail(e, record));
    }
    let fid = match DataFidelity::new(p.c_obs, cfg.beta, cfg.noise_variance) {
        Ok(f) => f,
        Err(e) => return Err(fail(e, record)),
    };
    let layout = Layout { n_shape: init_shape.coefficients().len(), n_q: init_q.len(), q_active };
    let c0 = init_shape.coefficients();
    let mut shape = init_shape.clone();
    let mut q = init_q.to_vec();
    for it in 0..cfg.max_newton {
        let start = Instant::now();
        let alpha = cfg.alpha(it);
        let step = || -> Result<(DVector<f64>, IterationRecord, f64)> {
            let l = LinearizationPoint::new(&shape, &q, p.grid, p.meas, p.kappa, cfg.n_bdy, cfg.s)?;
            let residual = fid.residual(&l.covariance()?);
            let res_norm = fid.weighted_norm(&residual)?;
            let lin = Linearized { l: &l, fid: &fid, layout: &layout };
            let metric = layout.metric(&l);
            let offset = layout.join(&RadialPerturbation::from_vector(&(shape.coefficients() - &c0))?, &vec![0.0; layout.n_q]);
            let rhs = -lin.adjoint(&fid.whiten(&residual)?)? - &offset * alpha;
            let normal = |v: &DVector<f64>| -> Result<DVector<f64>> {
                Ok(lin.gauss_newton(v)? + regularizer(&layout, p.grid, v) * alpha)
            };
            let out = cg_solve(normal, &rhs, &metric, cfg.cg_tol, cfg.cg_max, no_monitor)?;
            let reg = 0.5 * alpha * metric_inner(&metric, &offset, &offset);
            let rec = IterationRecord {
                iteration: it,
                alpha,
                weighted_residual: res_norm,
                regularization: reg,
                update_norm: metric_inner(&metric, &out.x, &out.x).sqrt(),
                cg_iterations: out.iterations,
                cg_converged: out.converged,
                step_halvings: 0,
                wall_time_s: 0.0,
            };
            Ok((out.x, rec, l.solver.info().condition_estimate))
        };
        let (dx, mut rec, cond) = match step() {
            Ok(v) => v,
            Err(e) => return Err(fail(e, record)),
        };
        record.condition_estimates.push(cond);
        let (dc, dq) = match layout.split(&dx) {
            Ok(v) => v,
            Err(e) => return Err(fail(e, record)),
        };
        match damped_update(p, &shape, &dc.to_vector()) {
            Ok((s, halvings)) => {
                let factor = 0.5f64.powi(halvings as i32);
                shape = s;
                if q_active {
                    for (v, d) in q.iter_mut().zip(&dq) {
                        *v = (*v + factor * d).max(0.0);
                    }
                }
                rec.step_halvings = halvings;
            }
            Err(e) => return Err(fail(e, record)),
        }
        rec.wall_time_s = start.elapsed().as_secs_f64();
        record.iterations.push(rec);
    }
    finish_shape_record(p, &fid, cfg, shape, q, record, format!("max_newton = {} reached", cfg.max_newton))
}

fn finish_shape_record(
    p: &ShapeProblem,
    fid: &DataFidelity,
    cfg: &InversionConfig,
    shape: StarShape,
    q: Vec<f64>,
    mut record: RunRecord,
    reason: String,
) -> DriverResult<ShapeOutcome> {
    let final_res = (|| -> Result<f64> {
        let l = LinearizationPoint::new(&shape, &q, p.grid, p.meas, p.kappa, cfg.n_bdy, cfg.s)?;
        fid.weighted_norm(&fid.residual(&l.covariance()?))
    })();
    match final_res {
        Ok(r) => record.final_weighted_residual = Some(r),
        Err(e) => return Err(fail(e, record)),
    }
    record.flag_monotonicity();
    record.stop_reason = reason;
    record.final_shape = Some(shape.clone());
    record.final_q = Some(q.clone());
    Ok(ShapeOutcome { shape, q, record })
}

/// Iteratively regularised Gauss-Newton for the shape with known `q`.
pub fn invert_shape(
    p: &ShapeProblem,
    q_known: &[f64],
    init_shape: &StarShape,
    cfg: &InversionConfig,
) -> DriverResult<ShapeOutcome> {
    gauss_newton_loop(p, init_shape, q_known, cfg, false, InversionMode::Shape)
}

/// Joint Gauss-Newton for shape and strength. With `freeze_q` the q-block is
/// removed from the update and the iteration coincides with [`invert_shape`].
pub fn invert_joint(
    p: &ShapeProblem,
    init_shape: &StarShape,
    init_q: &[f64],
    cfg: &InversionConfig,
    freeze_q: bool,
) -> DriverResult<ShapeOutcome> {
    gauss_newton_loop(p, init_shape, init_q, cfg, !freeze_q, InversionMode::Joint)
}

/// Newton-CG inner solve: CG on `J* W^{-1} J x = -J* W^{-1} R`, stopped at
/// the first iterate with `||W^{-1/2}(R + J x)|| <= factor ||W^{-1/2} R||`.
pub fn newton_cg_inner<J, A>(
    jacobian: J,
    adjoint: A,
    fid: &DataFidelity,
    residual: &DMatrix<Complex64>,
    metric: &DVector<f64>,
    factor: f64,
    cfg: &InversionConfig,
) -> Result<CgOutcome>
where
    J: Fn(&DVector<f64>) -> Result<DMatrix<Complex64>>,
    A: Fn(&DMatrix<Complex64>) -> Result<DVector<f64>>,
{
    let target = factor * fid.weighted_norm(residual)?;
    let rhs = -adjoint(&fid.whiten(residual)?)?;
    let normal = |v: &DVector<f64>| adjoint(&fid.whiten(&jacobian(v)?)?);
    let monitor = |s: &CgState| -> Result<bool> {
        let lin = residual + jacobian(s.x)?;
        Ok(fid.weighted_norm(&lin)? <= target)
    };
    cg_solve(normal, &rhs, metric, cfg.cg_tol, cfg.cg_max, monitor)
}

/// Newton-CG for the shape with known `q`; outer loop stops on stagnation
/// (relative decrease below 1e-3 over three iterations) or at `max_newton`.
pub fn invert_shape_newton_cg(
    p: &ShapeProblem,
    q_known: &[f64],
    init_shape: &StarShape,
    cfg: &InversionConfig,
) -> DriverResult<ShapeOutcome> {
    let mut record = RunRecord::new(cfg, InversionMode::NewtonCg);
    if let Err(e) = check_problem(p, init_shape, q_known, cfg) {
        return Err(fail(e, record));
    }
    let fid = match DataFidelity::new(p.c_obs, cfg.beta, cfg.noise_variance) {
        Ok(f) => f,
        Err(e) => return Err(fail(e, record)),
    };
    let layout = Layout { n_shape: init_shape.coefficients().len(), n_q: q_known.len(), q_active: false };
    let mut shape = init_shape.clone();
    let mut reason = format!("max_newton = {} reached", cfg.max_newton);
    for it in 0..cfg.max_newton {
        let start = Instant::now();
        let step = || -> Result<(DVector<f64>, IterationRecord, f64)> {
            let l = LinearizationPoint::new(&shape, q_known, p.grid, p.meas, p.kappa, cfg.n_bdy, cfg.s)?;
            let residual = fid.residual(&l.covariance()?);
            let res_norm = fid.weighted_norm(&residual)?;
            let lin = Linearized { l: &l, fid: &fid, layout: &layout };
            let metric = layout.metric(&l);
            let out = newton_cg_inner(
                |x| lin.jacobian(x),
                |k| lin.adjoint(k),
                &fid,
                &residual,
                &metric,
                cfg.newton_cg_factor,
                cfg,
            )?;
            let rec = IterationRecord {
                iteration: it,
                alpha: 0.0,
                weighted_residual: res_norm,
                regularization: 0.0,
                update_norm: metric_inner(&metric, &out.x, &out.x).sqrt(),
                cg_iterations: out.iterations,
                cg_converged: out.stopped_by_monitor,
                step_halvings: 0,
                wall_time_s: 0.0,
            };
            Ok((out.x, rec, l.solver.info().condition_estimate))
        };
        let (dx, mut rec, cond) = match step() {
            Ok(v) => v,
            Err(e) => return Err(fail(e, record)),
        };
        record.condition_estimates.push(cond);
        match damped_update(p, &shape, &dx) {
            Ok((s, halvings)) => {
                shape = s;
                rec.step_halvings = halvings;
            }
            Err(e) => return Err(fail(e, record)),
        }
        rec.wall_time_s = start.elapsed().as_secs_f64();
        record.iterations.push(rec);
        let r = record.residuals();
        if r.len() >= 4 {
            let old = r[r.len() - 4];
            let new = r[r.len() - 1];
            if old - new < 1e-3 * old {
                reason = "weighted residual stagnated".into();
                break;
            }
        }
    }
    finish_shape_record(p, &fid, cfg, shape, q_known.to_vec(), record, reason)
}

/// Recomputes the misfit at a shape and strength (used by gradient checks).
pub fn misfit_at(
    p: &ShapeProblem,
    fid: &DataFidelity,
    shape: &StarShape,
    q: &[f64],
    n_bdy: usize,
) -> Result<f64> {
    let g = crate::forward::assemble_nearfield(Some(shape), n_bdy, p.grid, p.meas, p.kappa)?;
    fid.misfit(&covariance_forward_signed(&g.entries, q)?)
}

/// H^s norm of shape coefficients.
pub fn shape_norm(shape: &StarShape, s: f64) -> Result<f64> {
    let gram = sobolev_gram(shape.degree(), s)?;
    Ok(gram.norm(&shape.coefficients()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{assemble_nearfield, covariance_forward, make_source_grid, Region};
    use crate::geometry::hausdorff_distance;
    use std::f64::consts::PI;

    #[test]
    fn cg_identity_one_step() {
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let m = DVector::from_element(3, 1.0);
        let out = cg_solve(|v: &DVector<f64>| Ok(v.clone()), &b, &m, 1e-12, 10, no_monitor).unwrap();
        assert_eq!(out.iterations, 1);
        assert!((out.x - b).norm() < 1e-15);
    }

    #[test]
    fn cg_random_spd_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = DMatrix::from_fn(20, 20, |_, _| rng.random_range(-1.0..1.0));
        let spd = &a * a.transpose() + DMatrix::identity(20, 20) * 0.5;
        let b = DVector::from_fn(20, |_, _| rng.random_range(-1.0..1.0));
        let m = DVector::from_element(20, 1.0);
        let out = cg_solve(|v: &DVector<f64>| Ok(&spd * v), &b, &m, 1e-14, 200, no_monitor).unwrap();
        let direct = spd.clone().lu().solve(&b).unwrap();
        assert!((out.x - &direct).norm() <= 1e-10 * direct.norm());
    }

    #[test]
    fn cg_weighted_metric() {
        // A self-adjoint in <a,b>_M: A = M^{-1} S with S symmetric
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = DMatrix::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0));
        let s = &s * s.transpose() + DMatrix::identity(8, 8);
        let m = DVector::from_fn(8, |i, _| 0.5 + i as f64);
        let op = DMatrix::from_fn(8, 8, |i, j| s[(i, j)] / m[i]);
        let b = DVector::from_fn(8, |i, _| (i as f64).sin());
        let out = cg_solve(|v: &DVector<f64>| Ok(&op * v), &b, &m, 1e-13, 100, no_monitor).unwrap();
        assert!((&op * &out.x - &b).norm() <= 1e-10);
    }

    #[test]
    fn cg_zero_iterations_flagged() {
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let m = DVector::from_element(2, 1.0);
        let out = cg_solve(|v: &DVector<f64>| Ok(v.clone()), &b, &m, 1e-12, 0, no_monitor).unwrap();
        assert_eq!(out.x, DVector::zeros(2));
        assert!(!out.converged);
    }

    #[test]
    fn cg_rejects_asymmetric_and_nonfinite() {
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let m = DVector::from_element(2, 1.0);
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 5.0, 0.0, 1.0]);
        if cfg!(debug_assertions) {
            assert!(cg_solve(|v: &DVector<f64>| Ok(&skew * v), &b, &m, 1e-12, 10, no_monitor).is_err());
        }
        let nan = |v: &DVector<f64>| Ok(v * f64::NAN);
        assert!(cg_solve(nan, &b, &m, 1e-12, 10, no_monitor).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(InversionConfig::default().validate().is_ok());
        assert!(InversionConfig { alpha_decay: 1.0, ..Default::default() }.validate().is_err());
        assert!(InversionConfig { newton_cg_factor: 1.2, ..Default::default() }.validate().is_err());
        assert!(InversionConfig { alpha0: 0.0, ..Default::default() }.validate().is_err());
        let json = serde_json::to_string(&InversionConfig::default()).unwrap();
        let back: InversionConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, InversionConfig::default());
        assert!(serde_json::from_str::<InversionConfig>("{\"bogus\": 1}").is_err());
        assert!((InversionConfig::a_priori(10_000).alpha0 - 0.01).abs() < 1e-15);
    }

    fn bump(points: &[crate::specfun::Point]) -> Vec<f64> {
        points.iter().map(|p| 0.5 + (-(p - crate::specfun::Point::new(0.3, 0.2)).norm_squared()).exp()).collect()
    }

    #[test]
    fn source_inverse_crime_recovery() {
        let grid = make_source_grid(&[Region::Rectangle { xmin: -1.5, xmax: 1.5, ymin: -1.5, ymax: 1.5, nx: 12, ny: 12 }])
            .unwrap();
        let meas = MeasurementArray::circle(4.0, 32).unwrap();
        let g = assemble_nearfield(None, 0, &grid, &meas, PI).unwrap();
        let q_true = bump(&grid.points);
        let c_obs = covariance_forward(&g, &q_true).unwrap();
        let cfg = InversionConfig {
            mode: InversionMode::Source,
            alpha0: 1e-8,
            beta: 1e-6,
            cg_max: 2000,
            cg_tol: 1e-10,
            ..Default::default()
        };
        let out = invert_source(&c_obs, &g, &grid, &cfg).unwrap();
        let diff: Vec<f64> = out.q.iter().zip(&q_true).map(|(a, b)| a - b).collect();
        let rel = grid.norm(&diff) / grid.norm(&q_true);
        assert!(rel <= 0.05, "relative error {rel}");

        let heavy = invert_source(&c_obs, &g, &grid, &InversionConfig { alpha0: 1e6, ..cfg.clone() }).unwrap();
        assert!(grid.norm(&heavy.q) <= 1e-3 * grid.norm(&q_true));
    }

    struct DiskCase {
        grid: SourceGrid,
        meas: MeasurementArray,
        q: Vec<f64>,
    }

    fn disk_case() -> DiskCase {
        let grid = make_source_grid(&[Region::Annulus { center: [0.0, 0.0], r_inner: 2.0, r_outer: 3.0, n_radial: 3, n_angular: 24 }])
            .unwrap();
        let meas = MeasurementArray::circle(5.0, 24).unwrap();
        let q = vec![1.0; grid.len()];
        DiskCase { grid, meas, q }
    }

    #[test]
    fn truth_is_fixed_point() {
        let case = disk_case();
        let truth = StarShape::new([0.0, 0.0], vec![0.9, 0.1, 0.05], vec![0.0, -0.05]).unwrap();
        let cfg = InversionConfig { max_newton: 1, alpha0: 1e-8, n_bdy: 64, ..Default::default() };
        let g = assemble_nearfield(Some(&truth), cfg.n_bdy, &case.grid, &case.meas, PI).unwrap();
        let c_obs = covariance_forward(&g, &case.q).unwrap();
        let p = ShapeProblem { c_obs: &c_obs, grid: &case.grid, meas: &case.meas, kappa: PI };
        let out = invert_shape(&p, &case.q, &truth, &cfg).unwrap();
        let norm = truth.coefficients().norm();
        assert!((out.shape.coefficients() - truth.coefficients()).norm() <= 1e-6 * norm);
        let joint = invert_joint(&p, &truth, &case.q, &cfg, false).unwrap();
        assert!((joint.shape.coefficients() - truth.coefficients()).norm() <= 1e-6 * norm);
        let dq: f64 = joint.q.iter().zip(&case.q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dq <= 1e-6 * (case.q.len() as f64).sqrt());
    }

    #[test]
    fn frozen_joint_matches_shape_trajectory() {
        let case = disk_case();
        let truth = StarShape::circle([0.0, 0.0], 0.8, 2).unwrap();
        let init = StarShape::circle([0.0, 0.0], 1.1, 2).unwrap();
        let cfg = InversionConfig { max_newton: 3, alpha0: 1e-2, n_bdy: 48, ..Default::default() };
        let g = assemble_nearfield(Some(&truth), cfg.n_bdy, &case.grid, &case.meas, PI).unwrap();
        let c_obs = covariance_forward(&g, &case.q).unwrap();
        let p = ShapeProblem { c_obs: &c_obs, grid: &case.grid, meas: &case.meas, kappa: PI };
        let a = invert_shape(&p, &case.q, &init, &cfg).unwrap();
        let b = invert_joint(&p, &init, &case.q, &cfg, true).unwrap();
        for (x, y) in a.record.residuals().iter().zip(b.record.residuals()) {
            assert!((x - y).abs() <= 1e-10 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn disk_shape_recovery_small() {
        let case = disk_case();
        let truth = StarShape::circle([0.0, 0.0], 0.8, 3).unwrap();
        let init = StarShape::circle([0.0, 0.0], 1.2, 3).unwrap();
        let cfg = InversionConfig { max_newton: 15, alpha0: 1e-2, n_bdy: 48, ..Default::default() };
        let g = assemble_nearfield(Some(&truth), cfg.n_bdy, &case.grid, &case.meas, PI).unwrap();
        let c_obs = covariance_forward(&g, &case.q).unwrap();
        let p = ShapeProblem { c_obs: &c_obs, grid: &case.grid, meas: &case.meas, kappa: PI };
        let out = invert_shape(&p, &case.q, &init, &cfg).unwrap();
        let h = hausdorff_distance(&out.shape, &truth, 256);
        assert!(h <= 0.01, "hausdorff {h}, residuals {:?}", out.record.residuals());
        let ncg = invert_shape_newton_cg(&p, &case.q, &init, &cfg).unwrap();
        let h2 = hausdorff_distance(&ncg.shape, &truth, 256);
        assert!(h2 <= 0.02, "newton-cg hausdorff {h2}");
    }

    #[test]
    fn newton_cg_factor_monotone() {
        let case = disk_case();
        let truth = StarShape::circle([0.0, 0.0], 0.8, 2).unwrap();
        let init = StarShape::circle([0.0, 0.0], 1.2, 2).unwrap();
        let base = InversionConfig { max_newton: 1, n_bdy: 48, ..Default::default() };
        let g = assemble_nearfield(Some(&truth), base.n_bdy, &case.grid, &case.meas, PI).unwrap();
        let c_obs = covariance_forward(&g, &case.q).unwrap();
        let p = ShapeProblem { c_obs: &c_obs, grid: &case.grid, meas: &case.meas, kappa: PI };
        let loose = invert_shape_newton_cg(&p, &case.q, &init, &InversionConfig { newton_cg_factor: 0.999, ..base.clone() }).unwrap();
        let tight = invert_shape_newton_cg(&p, &case.q, &init, &InversionConfig { newton_cg_factor: 0.8, ..base }).unwrap();
        assert!(loose.record.iterations[0].cg_iterations <= tight.record.iterations[0].cg_iterations);
    }

    #[test]
    fn newton_cg_inner_reduces_to_plain_cg_on_linear_problem() {
        let grid = make_source_grid(&[Region::Rectangle { xmin: -1.0, xmax: 1.0, ymin: -1.0, ymax: 1.0, nx: 4, ny: 4 }]).unwrap();
        let meas = MeasurementArray::circle(3.0, 12).unwrap();
        let g = assemble_nearfield(None, 0, &grid, &meas, 2.0).unwrap();
        let q_true = bump(&grid.points);
        let c_obs = covariance_forward(&g, &q_true).unwrap();
        let cfg = InversionConfig::default();
        let fid = DataFidelity::new(&c_obs, cfg.beta, 0.0).unwrap();
        let op = SourceOperator { g: &g.entries, measures: &grid.measures };
        let metric = DVector::from_column_slice(&grid.measures);
        // linear problem at q = 0: residual is -C^obs
        let residual = fid.residual(&DMatrix::zeros(12, 12));
        let inner = newton_cg_inner(|x| op.forward(x), |k| Ok(op.adjoint(k)), &fid, &residual, &metric, 0.5, &cfg).unwrap();
        let target = 0.5 * fid.weighted_norm(&residual).unwrap();
        let rhs = op.adjoint(&fid.whiten(&fid.target).unwrap());
        let plain = cg_solve(
            |v: &DVector<f64>| Ok(op.adjoint(&fid.whiten(&op.forward(v)?)?)),
            &rhs,
            &metric,
            cfg.cg_tol,
            cfg.cg_max,
            |s: &CgState| Ok(fid.weighted_norm(&fid.residual(&op.forward(s.x)?))? <= target),
        )
        .unwrap();
        assert_eq!(inner.iterations, plain.iterations);
        assert!((&inner.x - &plain.x).norm() <= 1e-12 * plain.x.norm());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let case = disk_case();
        let truth = StarShape::new([0.0, 0.0], vec![0.9, 0.1, 0.0], vec![0.05, 0.0]).unwrap();
        let here = StarShape::new([0.0, 0.0], vec![1.0, 0.0, 0.05], vec![0.0, 0.02]).unwrap();
        let n_bdy = 64;
        let g = assemble_nearfield(Some(&truth), n_bdy, &case.grid, &case.meas, PI).unwrap();
        let c_obs = covariance_forward(&g, &case.q).unwrap();
        let p = ShapeProblem { c_obs: &c_obs, grid: &case.grid, meas: &case.meas, kappa: PI };
        let fid = DataFidelity::new(&c_obs, 0.01, 0.0).unwrap();
        let q: Vec<f64> = case.q.iter().enumerate().map(|(i, v)| v * (1.0 + 0.2 * (i as f64).sin())).collect();
        let l = LinearizationPoint::new(&here, &q, &case.grid, &case.meas, PI, n_bdy, 1.6).unwrap();
        let (gr, gq) = misfit_gradient(&l, &fid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let eps = 1e-5;
        for _ in 0..3 {
            let dr = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
            let dq: Vec<f64> = (0..q.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let at = |t: f64| {
                let s = StarShape::from_coefficients([0.0, 0.0], &(here.coefficients() + &dr * t)).unwrap();
                let qt: Vec<f64> = q.iter().zip(&dq).map(|(a, b)| a + t * b).collect();
                misfit_at(&p, &fid, &s, &qt, n_bdy).unwrap()
            };
            let fd = (at(eps) - at(-eps)) / (2.0 * eps);
            let analytic = l.gram.inner(&dr, &gr.to_vector()) + l.q_inner(&dq, &gq);
            assert!((fd - analytic).abs() <= 1e-4 * analytic.abs(), "{fd} vs {analytic}");
        }
    }
}
