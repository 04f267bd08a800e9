//! Reproducible experiments: JSON configuration, `simulate`, `invert` and
//! `verify` commands writing PHLM1, CSV and JSON files.
//!
//! Configuration schema (all fields JSON):
//!
//! ```json
//! {
//!   "kappa": 3.14159,
//!   "measurement": { "radius": 5.0, "n_meas": 32 },
//!   "source_regions": [ { "type": "rectangle", "xmin": -3, "xmax": -1.5, "ymin": -3, "ymax": 3, "nx": 6, "ny": 24 } ],
//!   "n_src": 144,
//!   "obstacle": { "center": [0, 0], "cos": [1.0], "sin": [] },
//!   "strength": { "type": "constant", "value": 1.0 },
//!   "sampling": { "n_sample": 10000, "beta": 0.01, "seed": 1 },
//!   "inversion": { "mode": "source", "alpha0": 0.01 },
//!   "initial_shape": { "center": [0, 0], "cos": [1.2], "sin": [] },
//!   "initial_strength": 1.0,
//!   "output_dir": "out"
//! }
//! ```
//!
//! `n_src`, `obstacle`, `inversion`, `initial_shape`, `initial_strength` and
//! `output_dir` are optional. `strength` is one of `constant {value}`,
//! `csv {path}` (one row per cell in grid order, value in the last column,
//! path relative to the config file) or `bumps {floor, bumps: [{center,
//! width, amplitude}]}`.

use crate::error::{Error, Result};
use crate::forward::{
    assemble_nearfield, make_source_grid, read_phlm, shape_hash, write_phlm, CovarianceMatrix,
    MatrixKind, MeasurementArray, Region, SourceGrid,
};
use crate::geometry::{discretize, hausdorff_distance, StarShape};
use crate::inversion::{
    invert_joint, invert_shape, invert_shape_newton_cg, invert_source, InversionConfig, InversionError,
    InversionMode, RunRecord, ShapeProblem,
};
use crate::stochastics::{empirical_covariance, synthesize_measurements};
use crate::verify::{run_suite, CheckResult};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Receiver circle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementConfig {
    pub radius: f64,
    pub n_meas: usize,
}

/// Sampling parameters; `beta` is the measurement noise variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_sample: usize,
    pub beta: f64,
    pub seed: u64,
}

/// True source strength.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum StrengthSpec {
    Constant { value: f64 },
    Csv { path: PathBuf },
    /// `floor + sum_k amplitude_k * exp(-|x - center_k|^2 / (2 width_k^2))`.
    Bumps { floor: f64, bumps: Vec<Bump> },
}

/// One Gaussian bump of a [`StrengthSpec::Bumps`] profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: [f64; 2],
    pub width: f64,
    pub amplitude: f64,
}

impl StrengthSpec {
    /// Cell values on `grid`; CSV paths resolve against `base_dir`.
    pub fn evaluate(&self, grid: &SourceGrid, base_dir: &Path) -> Result<Vec<f64>> {
        Ok(match self {
            StrengthSpec::Constant { value } => vec![*value; grid.len()],
            StrengthSpec::Csv { path } => read_strength_csv(&base_dir.join(path), grid.len())?,
            StrengthSpec::Bumps { floor, bumps } => grid
                .points
                .iter()
                .map(|p| {
                    floor
                        + bumps
                            .iter()
                            .map(|b| {
                                let d2 = (p.x - b.center[0]).powi(2) + (p.y - b.center[1]).powi(2);
                                b.amplitude * (-d2 / (2.0 * b.width * b.width)).exp()
                            })
                            .sum::<f64>()
                })
                .collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kappa: f64,
    pub measurement: MeasurementConfig,
    pub source_regions: Vec<Region>,
    #[serde(default)]
    pub n_src: Option<usize>,
    #[serde(default)]
    pub obstacle: Option<StarShape>,
    pub strength: StrengthSpec,
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default)]
    pub initial_shape: Option<StarShape>,
    #[serde(default)]
    pub initial_strength: Option<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// A configuration with its derived geometry.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub grid: SourceGrid,
    pub meas: MeasurementArray,
    pub q_true: Vec<f64>,
    base_dir: PathBuf,
}

/// Boundary nodes used for synthetic data: 1.5 times the inversion
/// resolution, rounded up to an even count.
pub fn simulation_n_bdy(inversion_n_bdy: usize) -> usize {
    let n = (3 * inversion_n_bdy).div_ceil(2);
    n + n % 2
}

fn read_strength_csv(path: &Path, n: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::with_capacity(n);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let last = line.rsplit(',').next().unwrap_or("").trim();
        match last.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::Config(format!("{}: line {} has no numeric value", path.display(), i + 1)))
            }
        }
    }
    if values.len() != n {
        return Err(Error::Config(format!("{}: {} values for {} source cells", path.display(), values.len(), n)));
    }
    Ok(values)
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_config(config, base_dir)
    }

    /// Validates a configuration; relative CSV paths resolve against `base_dir`.
    pub fn from_config(config: ExperimentConfig, base_dir: PathBuf) -> Result<Self> {
        let cfg_err = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        if !(config.kappa > 0.0) || !config.kappa.is_finite() {
            return Err(Error::Config(format!("kappa must be positive, got {}", config.kappa)));
        }
        if config.sampling.n_sample == 0 {
            return Err(Error::Config("sampling.n_sample must be at least 1".into()));
        }
        if !(config.sampling.beta >= 0.0) {
            return Err(Error::Config(format!("sampling.beta must be nonnegative, got {}", config.sampling.beta)));
        }
        config.inversion.validate()?;
        let meas = MeasurementArray::circle(config.measurement.radius, config.measurement.n_meas).map_err(cfg_err)?;
        let grid = make_source_grid(&config.source_regions).map_err(cfg_err)?;
        if let Some(n) = config.n_src {
            if n != grid.len() {
                return Err(Error::Config(format!("n_src = {n} but the regions define {} cells", grid.len())));
            }
        }
        if let Some(shape) = &config.obstacle {
            shape.validate().map_err(cfg_err)?;
        }
        grid.check_geometry(config.obstacle.as_ref(), &meas).map_err(cfg_err)?;
        if let Some(init) = &config.initial_shape {
            init.validate().map_err(cfg_err)?;
            grid.check_geometry(Some(init), &meas).map_err(cfg_err)?;
        }
        let q_true = config.strength.evaluate(&grid, &base_dir)?;
        if let Some(v) = q_true.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("true strength must be nonnegative, got {v}")));
        }
        Ok(Self { config, grid, meas, q_true, base_dir })
    }

    /// Output directory from the override, the config, or `out`.
    pub fn output_dir(&self, overridden: Option<&Path>) -> PathBuf {
        match (overridden, &self.config.output_dir) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => self.base_dir.join(p),
            (None, None) => PathBuf::from("out"),
        }
    }
}

/// Best-effort revision of the working tree.
pub fn git_revision() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SimulateMeta<'a> {
    command: &'static str,
    tool_version: &'static str,
    git_revision: String,
    config: &'a ExperimentConfig,
    n_src: usize,
    simulation_n_bdy: Option<usize>,
    shape_hash: String,
    grid_hash: String,
    meas_hash: String,
    sampling: crate::stochastics::SampleMeta,
    samples_file: &'static str,
    covariance_file: &'static str,
}

/// Paths written by [`cmd_simulate`].
#[derive(Clone, Debug)]
pub struct SimulateOutput {
    pub samples: PathBuf,
    pub cobs: PathBuf,
    pub meta: PathBuf,
}

/// Synthesises `N_sample` measurements on a boundary mesh 1.5 times finer
/// than the inversion's, and writes samples, `C^obs` and metadata.
pub fn cmd_simulate(exp: &Experiment, out_dir: &Path) -> Result<SimulateOutput> {
    let cfg = &exp.config;
    let n_bdy = simulation_n_bdy(cfg.inversion.n_bdy);
    let g = assemble_nearfield(cfg.obstacle.as_ref(), n_bdy, &exp.grid, &exp.meas, cfg.kappa)?;
    let set = synthesize_measurements(&g, &exp.q_true, cfg.sampling.n_sample, cfg.sampling.beta, cfg.sampling.seed)?;
    let cobs = empirical_covariance(&set)?;
    std::fs::create_dir_all(out_dir)?;
    let out = SimulateOutput {
        samples: out_dir.join("samples.phlm"),
        cobs: out_dir.join("cobs.phlm"),
        meta: out_dir.join("meta.json"),
    };
    let mut f = create(&out.samples)?;
    set.write_phlm(&mut f)?;
    f.flush()?;
    let mut f = create(&out.cobs)?;
    write_phlm(&cobs.entries, MatrixKind::Covariance, &mut f)?;
    f.flush()?;
    let meta = SimulateMeta {
        command: "simulate",
        tool_version: env!("CARGO_PKG_VERSION"),
        git_revision: git_revision(),
        config: cfg,
        n_src: exp.grid.len(),
        simulation_n_bdy: cfg.obstacle.as_ref().map(|_| n_bdy),
        shape_hash: shape_hash(cfg.obstacle.as_ref()),
        grid_hash: exp.grid.hash(),
        meas_hash: exp.meas.hash(),
        sampling: set.meta(),
        samples_file: "samples.phlm",
        covariance_file: "cobs.phlm",
    };
    write_json(&out.meta, &meta)?;
    Ok(out)
}

/// Reads `cobs.phlm` from a data directory (or file) and checks its shape.
pub fn load_covariance(data: &Path, n_meas: usize) -> Result<CovarianceMatrix> {
    let path = if data.is_dir() { data.join("cobs.phlm") } else { data.to_path_buf() };
    let file = File::open(&path).map_err(|e| Error::Format(format!("cannot open {}: {e}", path.display())))?;
    let (m, kind) = read_phlm(BufReader::new(file))?;
    if kind != MatrixKind::Covariance {
        return Err(Error::Format(format!("kind: expected covariance, found {kind:?}")));
    }
    if m.nrows() != n_meas {
        return Err(Error::Format(format!("rows: expected {n_meas} receivers, found {}", m.nrows())));
    }
    if m.ncols() != n_meas {
        return Err(Error::Format(format!("cols: expected {n_meas} receivers, found {}", m.ncols())));
    }
    Ok(CovarianceMatrix { entries: m })
}

/// Errors of the estimate against the configured truth.
#[derive(Clone, Debug, Default, Serialize)]
pub struct TruthComparison {
    /// `||q - q_true||_M / ||q_true||_M` with the cell-measure weighting.
    pub q_relative_error: Option<f64>,
    pub hausdorff_distance: Option<f64>,
}

/// Result of [`cmd_invert`].
#[derive(Clone, Debug)]
pub struct InvertOutput {
    pub record: RunRecord,
    pub shape: Option<StarShape>,
    pub q: Option<Vec<f64>>,
    pub comparison: TruthComparison,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct InvertMeta<'a> {
    command: &'static str,
    mode: InversionMode,
    tool_version: &'static str,
    git_revision: String,
    config: &'a ExperimentConfig,
    data: String,
    n_src: usize,
    seed: u64,
    comparison: &'a TruthComparison,
}

/// Weighted relative L^2 error over the source grid.
pub fn relative_q_error(grid: &SourceGrid, q: &[f64], truth: &[f64]) -> f64 {
    let diff: Vec<f64> = q.iter().zip(truth).map(|(a, b)| a - b).collect();
    grid.norm(&diff) / grid.norm(truth)
}

/// Runs the selected driver on `C^obs` from `data` and writes the estimate,
/// `runrecord.json` and `meta.json` to `out_dir`. On driver failure the
/// partial record is still written before the error is returned.
pub fn cmd_invert(exp: &Experiment, mode: InversionMode, data: &Path, out_dir: &Path) -> Result<InvertOutput> {
    let cfg = &exp.config;
    let inv = InversionConfig { mode, ..cfg.inversion.clone() };
    let c_obs = load_covariance(data, exp.meas.len())?;
    std::fs::create_dir_all(out_dir)?;
    let record_path = out_dir.join("runrecord.json");
    let finish = |record: &mut RunRecord| -> Result<()> {
        record.seed = Some(cfg.sampling.seed);
        write_json(&record_path, record)
    };
    let problem = ShapeProblem { c_obs: &c_obs, grid: &exp.grid, meas: &exp.meas, kappa: cfg.kappa };
    let init_shape = || {
        cfg.initial_shape
            .clone()
            .ok_or_else(|| Error::Config(format!("mode {mode:?} needs initial_shape in the config")))
    };
    let result: std::result::Result<(RunRecord, Option<StarShape>, Option<Vec<f64>>), InversionError> = match mode {
        InversionMode::Source => {
            let g = assemble_nearfield(cfg.obstacle.as_ref(), inv.n_bdy, &exp.grid, &exp.meas, cfg.kappa)?;
            invert_source(&c_obs, &g, &exp.grid, &inv).map(|o| (o.record, None, Some(o.q)))
        }
        InversionMode::Shape => invert_shape(&problem, &exp.q_true, &init_shape()?, &inv)
            .map(|o| (o.record, Some(o.shape), None)),
        InversionMode::NewtonCg => invert_shape_newton_cg(&problem, &exp.q_true, &init_shape()?, &inv)
            .map(|o| (o.record, Some(o.shape), None)),
        InversionMode::Joint => {
            let q0 = vec![cfg.initial_strength.unwrap_or(1.0); exp.grid.len()];
            invert_joint(&problem, &init_shape()?, &q0, &inv, false).map(|o| (o.record, Some(o.shape), Some(o.q)))
        }
    };
    let (mut record, shape, q) = match result {
        Ok(v) => v,
        Err(mut e) => {
            finish(&mut e.record)?;
            return Err(e.error);
        }
    };
    finish(&mut record)?;
    let mut files = vec![record_path];
    let mut comparison = TruthComparison::default();
    if let Some(q) = &q {
        let path = out_dir.join("estimate_q.csv");
        let mut f = create(&path)?;
        exp.grid.write_values_csv(q, &mut f)?;
        f.flush()?;
        files.push(path);
        comparison.q_relative_error = Some(relative_q_error(&exp.grid, q, &exp.q_true));
    }
    if let Some(shape) = &shape {
        let path = out_dir.join("estimate_boundary.csv");
        let mut f = create(&path)?;
        StarShape::write_boundary_csv(&discretize(shape, inv.n_bdy)?, &mut f)?;
        f.flush()?;
        files.push(path);
        let path = out_dir.join("estimate_shape.json");
        write_json(&path, shape)?;
        files.push(path);
        comparison.hausdorff_distance = cfg.obstacle.as_ref().map(|t| hausdorff_distance(shape, t, 2048));
    }
    let meta = InvertMeta {
        command: "invert",
        mode,
        tool_version: env!("CARGO_PKG_VERSION"),
        git_revision: git_revision(),
        config: cfg,
        data: data.display().to_string(),
        n_src: exp.grid.len(),
        seed: cfg.sampling.seed,
        comparison: &comparison,
    };
    let meta_path = out_dir.join("meta.json");
    write_json(&meta_path, &meta)?;
    files.push(meta_path);
    Ok(InvertOutput { record, shape, q, comparison, files })
}

/// Runs the oracle suite, printing one line per check; returns the results
/// and whether all passed.
pub fn cmd_verify<W: Write>(quick: bool, mut out: W) -> Result<(Vec<CheckResult>, bool)> {
    let results = run_suite(quick);
    for r in &results {
        writeln!(
            out,
            "[{}] {:<45} measured {:>10.3e}  threshold {:>9.2e}  ({:.2} s)",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.measured,
            r.threshold,
            r.seconds
        )?;
    }
    let ok = results.iter().all(|r| r.passed);
    writeln!(out, "{}", if ok { "all checks passed" } else { "verification FAILED" })?;
    Ok((results, ok))
}
