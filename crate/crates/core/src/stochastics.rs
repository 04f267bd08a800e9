//! Proper complex Gaussian sampling, synthetic correlation data and the
//! fourth-moment weight operator of the data-fidelity term.
//!
//! Random numbers come from ChaCha20 seeded with the user seed; sample `j`
//! uses stream `j` of that generator, drawing first its source vector and
//! then its noise vector. Samples can therefore be produced in any order or
//! in parallel with identical results.

use crate::error::{Error, Result};
use crate::forward::{hermitian_part, CovarianceMatrix, MatrixKind, NearFieldMatrix};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

/// Generator for sample index `j`.
pub fn sample_rng(seed: u64, j: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(j as u64);
    rng
}

fn proper_normal<R: Rng>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (0.5 * variance).sqrt();
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    Complex64::new(s * a, s * b)
}

fn check_strength(q: &[f64]) -> Result<()> {
    match q.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        Some(v) => Err(Error::Domain(format!("source strength must be nonnegative, got {v}"))),
        None => Ok(()),
    }
}

/// Draws `pi ~ CN(0, diag(q))`; column `j` is sample `j`.
pub fn sample_sources(q: &[f64], n_sample: usize, seed: u64) -> Result<DMatrix<Complex64>> {
    check_strength(q)?;
    let columns: Vec<Vec<Complex64>> = (0..n_sample)
        .into_par_iter()
        .map(|j| {
            let mut rng = sample_rng(seed, j);
            q.iter().map(|v| proper_normal(&mut rng, *v)).collect()
        })
        .collect();
    Ok(DMatrix::from_fn(q.len(), n_sample, |i, j| columns[j][i]))
}

/// Synthetic measurements `u^(j) = G pi^(j) + eps^(j)` with `eps ~ CN(0, beta I)`.
#[derive(Clone, Debug)]
pub struct SampleSet {
    /// `N_meas x N_sample`, column `j` is `u^(j)`.
    pub samples: DMatrix<Complex64>,
    pub seed: u64,
    pub beta: f64,
}

#[derive(Serialize)]
pub struct SampleMeta {
    pub seed: u64,
    pub beta: f64,
    pub n_sample: usize,
    pub n_meas: usize,
    pub rng: &'static str,
}

impl SampleSet {
    pub fn n_sample(&self) -> usize {
        self.samples.ncols()
    }

    pub fn meta(&self) -> SampleMeta {
        SampleMeta {
            seed: self.seed,
            beta: self.beta,
            n_sample: self.n_sample(),
            n_meas: self.samples.nrows(),
            rng: "ChaCha20, stream j per sample index",
        }
    }

    /// PHLM1 with one row per sample.
    pub fn write_phlm<W: Write>(&self, out: W) -> Result<()> {
        crate::forward::write_phlm(&self.samples.transpose(), MatrixKind::Samples, out)
    }
}

pub fn synthesize_measurements(
    g: &NearFieldMatrix,
    q: &[f64],
    n_sample: usize,
    beta: f64,
    seed: u64,
) -> Result<SampleSet> {
    synthesize_from_matrix(&g.entries, q, n_sample, beta, seed)
}

pub fn synthesize_from_matrix(
    g: &DMatrix<Complex64>,
    q: &[f64],
    n_sample: usize,
    beta: f64,
    seed: u64,
) -> Result<SampleSet> {
    check_strength(q)?;
    if q.len() != g.ncols() {
        return Err(Error::Dimension(format!("q has {} entries for {} sources", q.len(), g.ncols())));
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::Domain(format!("noise variance must be nonnegative, got {beta}")));
    }
    if n_sample < 1 {
        return Err(Error::Domain("need at least one sample".into()));
    }
    let n_meas = g.nrows();
    let columns: Vec<DVector<Complex64>> = (0..n_sample)
        .into_par_iter()
        .map(|j| {
            let mut rng = sample_rng(seed, j);
            let pi = DVector::from_iterator(q.len(), q.iter().map(|v| proper_normal(&mut rng, *v)));
            let noise = DVector::from_iterator(n_meas, (0..n_meas).map(|_| proper_normal(&mut rng, beta)));
            g * pi + noise
        })
        .collect();
    let samples = DMatrix::from_columns(&columns);
    Ok(SampleSet { samples, seed, beta })
}

/// `C^obs = (1/N) sum_j u^(j) (u^(j))^H`, without mean subtraction.
pub fn empirical_covariance(s: &SampleSet) -> Result<CovarianceMatrix> {
    empirical_covariance_of(&s.samples)
}

pub fn empirical_covariance_of(u: &DMatrix<Complex64>) -> Result<CovarianceMatrix> {
    if u.ncols() == 0 {
        return Err(Error::Domain("empty sample set".into()));
    }
    let raw = u * u.adjoint() / Complex64::new(u.ncols() as f64, 0.0);
    Ok(CovarianceMatrix { entries: hermitian_part(&raw) })
}

/// Power of the weight base applied on both sides.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightPower {
    InverseSqrt,
    Inverse,
}

/// Eigendecomposition of `B = C^obs + beta I`; acts on data matrices as
/// `X -> B^p X B^p`, the covariance structure of the entries of `C^obs`.
#[derive(Clone, Debug)]
pub struct WeightOperator {
    pub base: DMatrix<Complex64>,
    pub eigenvectors: DMatrix<Complex64>,
    pub eigenvalues: DVector<f64>,
    pub beta: f64,
}

pub fn build_weight(c_obs: &CovarianceMatrix, beta: f64) -> Result<WeightOperator> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Domain(format!("weight shift beta must be positive, got {beta}")));
    }
    let n = c_obs.dim();
    let base = hermitian_part(&c_obs.entries) + DMatrix::<Complex64>::identity(n, n) * Complex64::new(beta, 0.0);
    let eig = SymmetricEigen::try_new(base.clone(), 1e-15, 10_000)
        .ok_or_else(|| Error::Numerical("Hermitian eigensolver did not converge".into()))?;
    if let Some(v) = eig.eigenvalues.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Numerical(format!("weight base has nonpositive eigenvalue {v}")));
    }
    Ok(WeightOperator { base, eigenvectors: eig.eigenvectors, eigenvalues: eig.eigenvalues, beta })
}

impl WeightOperator {
    pub fn dim(&self) -> usize {
        self.base.nrows()
    }

    /// `B^p` from the eigendecomposition.
    pub fn base_power(&self, p: f64) -> DMatrix<Complex64> {
        let mut scaled = self.eigenvectors.clone();
        for (k, lambda) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(k).scale_mut(lambda.powf(p));
        }
        scaled * self.eigenvectors.adjoint()
    }

    /// `B^p A B^p` for a general real power.
    pub fn apply_power(&self, a: &DMatrix<Complex64>, p: f64) -> Result<DMatrix<Complex64>> {
        if a.nrows() != self.dim() || a.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "weight of size {} applied to {}x{} matrix",
                self.dim(),
                a.nrows(),
                a.ncols()
            )));
        }
        let bp = self.base_power(p);
        Ok(&bp * a * &bp)
    }
}

pub fn weight_apply(w: &WeightOperator, a: &DMatrix<Complex64>, power: WeightPower) -> Result<DMatrix<Complex64>> {
    let p = match power {
        WeightPower::InverseSqrt => -0.5,
        WeightPower::Inverse => -1.0,
    };
    w.apply_power(a, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{assemble_nearfield, covariance_forward, make_source_grid, MeasurementArray, Region};

    fn small_nearfield(n_meas: usize) -> NearFieldMatrix {
        let grid = make_source_grid(&[Region::Rectangle { xmin: -1.0, xmax: 1.0, ymin: -1.0, ymax: 1.0, nx: 3, ny: 3 }])
            .unwrap();
        let meas = MeasurementArray::circle(3.0, n_meas).unwrap();
        assemble_nearfield(None, 0, &grid, &meas, 2.0).unwrap()
    }

    fn random_hermitian(n: usize, seed: u64) -> DMatrix<Complex64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| proper_normal(&mut rng, 1.0));
        &a * a.adjoint()
    }

    #[test]
    fn zero_strength_gives_zero_samples() {
        let s = sample_sources(&[0.0; 5], 10, 1).unwrap();
        assert!(s.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
        assert!(sample_sources(&[1.0, -0.1], 3, 1).is_err());
        let g = small_nearfield(4);
        let set = synthesize_measurements(&g, &[0.0; 9], 5, 0.0, 3).unwrap();
        assert!(set.samples.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn source_moments() {
        let n = 100_000;
        let s = sample_sources(&[1.0, 1.0], n, 42).unwrap();
        for i in 0..2 {
            let var = s.row(i).iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
            assert!((0.97..=1.03).contains(&var), "variance {var}");
            let pseudo: Complex64 = s.row(i).iter().map(|v| v * v).sum::<Complex64>() / n as f64;
            assert!(pseudo.norm() <= 0.02, "pseudo-covariance {pseudo}");
        }
    }

    #[test]
    fn sampling_is_reproducible_and_order_free() {
        let a = sample_sources(&[1.0, 2.0, 0.5], 50, 7).unwrap();
        let b = sample_sources(&[1.0, 2.0, 0.5], 50, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_sources(&[1.0, 2.0, 0.5], 80, 7).unwrap();
        assert_eq!(a.columns(0, 50), c.columns(0, 50));
        assert_ne!(a, sample_sources(&[1.0, 2.0, 0.5], 50, 8).unwrap());
    }

    #[test]
    fn pure_noise_covariance_is_identity() {
        let g = NearFieldMatrix { entries: DMatrix::zeros(4, 9), provenance: small_nearfield(4).provenance };
        let set = synthesize_measurements(&g, &[1.0; 9], 40_000, 1.0, 5).unwrap();
        let c = empirical_covariance(&set).unwrap();
        let err = (c.entries - DMatrix::<Complex64>::identity(4, 4)).norm();
        assert!(err <= 3.0 * 4.0 / (40_000f64).sqrt(), "{err}");
    }

    #[test]
    fn sample_mean_obeys_clt_bound() {
        let g = small_nearfield(6);
        let q = vec![1.0; 9];
        let n = 10_000;
        let set = synthesize_measurements(&g, &q, n, 0.1, 9).unwrap();
        let mean = set.samples.column_sum() / Complex64::new(n as f64, 0.0);
        let c = covariance_forward(&g, &q).unwrap();
        let trace: f64 = (0..6).map(|i| c.entries[(i, i)].re + 0.1).sum();
        assert!(mean.norm() <= 3.0 * (trace / n as f64).sqrt());
    }

    #[test]
    fn empirical_covariance_simple_cases() {
        let u = DMatrix::from_column_slice(3, 1, &[Complex64::new(1.0, 2.0), Complex64::new(0.0, -1.0), Complex64::new(3.0, 0.5)]);
        let c = empirical_covariance_of(&u).unwrap();
        assert!((c.entries - &u * u.adjoint()).norm() < 1e-15);
        let z = empirical_covariance_of(&DMatrix::zeros(3, 4)).unwrap();
        assert_eq!(z.entries, DMatrix::zeros(3, 3));
        assert!(empirical_covariance_of(&DMatrix::zeros(3, 0)).is_err());
    }

    #[test]
    fn empirical_covariance_converges_at_root_n() {
        let g = small_nearfield(6);
        let q = vec![1.0; 9];
        let beta = 0.01;
        let exact = covariance_forward(&g, &q).unwrap().entries + DMatrix::<Complex64>::identity(6, 6) * Complex64::new(beta, 0.0);
        // average over a few seeds to keep the two-point ratio stable
        let err = |n: usize| {
            (0..4)
                .map(|s| {
                    let set = synthesize_measurements(&g, &q, n, beta, 100 + s).unwrap();
                    (empirical_covariance(&set).unwrap().entries - &exact).norm()
                })
                .sum::<f64>()
                / exact.norm()
        };
        let ratio = err(1_000) / err(40_000);
        assert!((4.5..=8.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn zero_covariance_weight_is_beta() {
        let w = build_weight(&CovarianceMatrix { entries: DMatrix::zeros(3, 3) }, 0.5).unwrap();
        assert!(w.eigenvalues.iter().all(|v| (v - 0.5).abs() < 1e-15));
        let w1 = build_weight(&CovarianceMatrix { entries: DMatrix::zeros(3, 3) }, 1.0).unwrap();
        let a = random_hermitian(3, 1);
        for p in [WeightPower::InverseSqrt, WeightPower::Inverse] {
            assert!((weight_apply(&w1, &a, p).unwrap() - &a).norm() < 1e-14);
        }
        assert!(build_weight(&CovarianceMatrix { entries: DMatrix::zeros(3, 3) }, 0.0).is_err());
    }

    #[test]
    fn eigenvalues_match_characteristic_polynomial() {
        // real symmetric 3x3 with known roots of the characteristic polynomial
        // via the trigonometric formula for three real roots
        let c = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]).map(|v| Complex64::new(v, 0.0));
        let w = build_weight(&CovarianceMatrix { entries: c.clone() }, 1e-300).unwrap();
        let m = c.map(|v| v.re);
        let p1 = m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2);
        let q = m.trace() / 3.0;
        let p2 = (0..3).map(|i| (m[(i, i)] - q).powi(2)).sum::<f64>() + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let bm = (&m - nalgebra::DMatrix::<f64>::identity(3, 3) * q) / p;
        let r = (bm.determinant() / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        let e2 = 3.0 * q - e1 - e3;
        let mut exact = [e1, e2, e3];
        exact.sort_by(f64::total_cmp);
        let mut got: Vec<f64> = w.eigenvalues.iter().copied().collect();
        got.sort_by(f64::total_cmp);
        for (a, b) in got.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn decomposition_reconstructs_base() {
        let c = random_hermitian(5, 3);
        let w = build_weight(&CovarianceMatrix { entries: c }, 0.1).unwrap();
        assert!((w.base_power(1.0) - &w.base).norm() <= 1e-12 * w.base.norm());
    }

    #[test]
    fn semigroup_and_round_trip() {
        let w = build_weight(&CovarianceMatrix { entries: random_hermitian(4, 5) }, 0.2).unwrap();
        let a = DMatrix::from_fn(4, 4, |i, j| Complex64::new(i as f64 - j as f64, (i * j) as f64));
        let half = weight_apply(&w, &a, WeightPower::InverseSqrt).unwrap();
        let twice = weight_apply(&w, &half, WeightPower::InverseSqrt).unwrap();
        let once = weight_apply(&w, &a, WeightPower::Inverse).unwrap();
        assert!((&twice - &once).norm() <= 1e-12 * once.norm());
        let back = &w.base * &once * &w.base;
        assert!((back - &a).norm() <= 1e-11 * a.norm());
    }

    #[test]
    fn matches_explicit_kronecker_form() {
        // column-major vec(B X B) = (B^T kron B) vec(X)
        let w = build_weight(&CovarianceMatrix { entries: random_hermitian(2, 9) }, 0.3).unwrap();
        let x = DMatrix::from_fn(2, 2, |i, j| Complex64::new(1.0 + i as f64, 2.0 * j as f64 - 0.5));
        let binv = w.base_power(-1.0);
        let kron = binv.transpose().kronecker(&binv);
        let vx = DVector::from_column_slice(x.as_slice());
        let expected = kron * vx;
        let got = weight_apply(&w, &x, WeightPower::Inverse).unwrap();
        let vgot = DVector::from_column_slice(got.as_slice());
        assert!((vgot - expected).norm() <= 1e-12);
    }
}
