//! Experiment runner: parameter sweeps, random batches and single inversions,
//! each cell a pure function of the fields stored in its [`ResultRecord`].

pub mod matrices;
pub mod records;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    auto_dt, invert_via_dynamics, DynamicsDiagnostics, SdeMode, SdeRunSpec, StepSize,
};
use crate::energy::{invert_via_energy, EnergyDiagnostics, GridSpec};
use crate::error::{OnnError, Result};
use crate::linalg::{require_spd, SquareMatrix};
use crate::mapping::{choose_k, SYMMETRY_TOL};

pub use matrices::{
    derive_seed, matrix_hash, random_spd_matrix, reference_matrix, GeneratedMatrix,
};
pub use records::{emit_results, ErrorHistogram, Method, OutputFormat, ResultRecord, Routine};

/// Steps per single-matrix run when none are given.
pub const DEFAULT_SWEEP_STEPS: u64 = 5_000_000;
/// Steps per matrix in random batches when none are given.
pub const DEFAULT_BATCH_STEPS: u64 = 500_000;
pub const DEFAULT_KN: f64 = 1e4;

/// 30 log-spaced values over `[10, 1e5]`, or `[10, 1e3]` from `d = 10` on.
pub fn default_k_grid(dim: usize) -> Vec<f64> {
    let hi: f64 = if dim >= 10 { 3.0 } else { 5.0 };
    log_space(1.0, hi, 30)
}

/// `n` points evenly spaced in `log10` between `10^lo` and `10^hi`.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![10f64.powf(lo)],
        _ => (0..n)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (n - 1) as f64))
            .collect(),
    }
}

/// Parameters shared by every cell of a routine.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTemplate {
    pub method: Method,
    pub sde: SdeRunSpec,
    pub grid: GridSpec,
    pub record_wall_time: bool,
}

impl CellTemplate {
    pub fn dynamics(sde: SdeRunSpec) -> Self {
        Self {
            method: Method::Dynamics,
            sde,
            grid: GridSpec::default(),
            record_wall_time: false,
        }
    }

    pub fn energy(grid: GridSpec) -> Self {
        Self {
            method: Method::Energy,
            sde: SdeRunSpec::default(),
            grid,
            record_wall_time: false,
        }
    }
}

/// Everything needed to run and describe one inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub routine: Routine,
    pub matrix: SquareMatrix,
    pub matrix_seed: Option<u64>,
    pub matrix_draws: Option<usize>,
    pub k: f64,
    pub kn: f64,
    pub template: CellTemplate,
}

impl Cell {
    pub fn new(
        routine: Routine,
        matrix: SquareMatrix,
        k: f64,
        kn: f64,
        template: CellTemplate,
    ) -> Self {
        Self {
            routine,
            matrix,
            matrix_seed: None,
            matrix_draws: None,
            k,
            kn,
            template,
        }
    }

    fn base_record(&self) -> ResultRecord {
        let t = &self.template;
        let dynamics = t.method == Method::Dynamics;
        let dt = match t.sde.dt {
            StepSize::Fixed(v) => v,
            StepSize::Auto => auto_dt(&self.matrix, self.k),
        };
        ResultRecord {
            routine: self.routine,
            dim: self.matrix.dim(),
            scale: self.matrix.max_abs(),
            k: self.k,
            kn: self.kn,
            ns: dynamics.then_some(t.sde.n_steps),
            dt: dynamics.then_some(dt),
            seed: dynamics.then_some(t.sde.seed),
            method: t.method,
            rel_err_pct: None,
            max_phase: None,
            wall_s: None,
            flags: String::new(),
            mode: dynamics.then_some(t.sde.mode),
            burn_in: dynamics.then_some(t.sde.burn_in_fraction),
            stride: dynamics.then_some(t.sde.sample_stride),
            grid_points: (!dynamics).then_some(t.grid.points_per_dim),
            window: (!dynamics).then(|| t.grid.window.to_string()),
            matrix_seed: self.matrix_seed,
            matrix_draws: self.matrix_draws,
            matrix_hash: matrix_hash(&self.matrix),
            failure: None,
        }
    }
}

/// A cell's record together with the full estimate and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionReport {
    pub record: ResultRecord,
    pub estimate: Option<SquareMatrix>,
    pub exact_inverse: Option<SquareMatrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy: Option<EnergyDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<DynamicsDiagnostics>,
}

fn join_flags<W: std::fmt::Display>(warnings: &[W]) -> String {
    warnings
        .iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

/// Runs one cell. Failures are recorded in the report, never returned.
pub fn run_cell(cell: &Cell) -> InversionReport {
    let mut record = cell.base_record();
    let started = Instant::now();
    let mut report = InversionReport {
        record: record.clone(),
        estimate: None,
        exact_inverse: None,
        energy: None,
        dynamics: None,
    };
    match cell.template.method {
        Method::Energy => {
            match invert_via_energy(&cell.matrix, cell.k, cell.kn, &cell.template.grid) {
                Ok((est, diag)) => {
                    record.rel_err_pct = diag.relative_error;
                    record.flags = join_flags(&diag.warnings);
                    report.estimate = Some(est);
                    report.exact_inverse = Some(diag.exact_inverse.clone());
                    report.energy = Some(diag);
                }
                Err(e) => record.failure = Some(e.to_string()),
            }
        }
        Method::Dynamics => {
            match invert_via_dynamics(&cell.matrix, cell.k, cell.kn, &cell.template.sde) {
                Ok((est, diag)) => {
                    record.rel_err_pct = diag.relative_error;
                    record.max_phase = Some(diag.max_abs_phase);
                    record.dt = Some(diag.dt);
                    record.flags = join_flags(&diag.warnings);
                    report.estimate = Some(est);
                    report.exact_inverse = Some(diag.exact_inverse.clone());
                    report.dynamics = Some(diag);
                }
                Err(e) => record.failure = Some(e.to_string()),
            }
        }
    }
    if cell.template.record_wall_time {
        record.wall_s = Some(started.elapsed().as_secs_f64());
    }
    report.record = record;
    report
}

/// Runs cells on the current rayon pool; output order follows `cells`.
pub fn run_cells(cells: &[Cell]) -> Vec<ResultRecord> {
    cells.par_iter().map(|c| run_cell(c).record).collect()
}

fn require_values(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(OnnError::InvalidParameter(format!("{name} list is empty")));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(OnnError::InvalidParameter(format!(
            "{name} values must be positive, got {v}"
        )));
    }
    Ok(())
}

/// One cell per `K`, all sharing the seed and the step size. An automatic
/// step is resolved once at `choose_k(max |A|)` so that only `K` changes
/// between cells.
pub fn sweep_k_cells(
    a: &SquareMatrix,
    k_values: &[f64],
    kn: f64,
    template: &CellTemplate,
) -> Result<Vec<Cell>> {
    require_spd(a, SYMMETRY_TOL)?;
    require_values("K", k_values)?;
    let mut t = template.clone();
    if t.sde.dt == StepSize::Auto {
        t.sde.dt = StepSize::Fixed(auto_dt(a, choose_k(a.max_abs())?));
    }
    Ok(k_values
        .iter()
        .map(|&k| Cell::new(Routine::SweepK, a.clone(), k, kn, t.clone()))
        .collect())
}

pub fn sweep_k(
    a: &SquareMatrix,
    k_values: &[f64],
    kn: f64,
    template: &CellTemplate,
) -> Result<Vec<ResultRecord>> {
    Ok(run_cells(&sweep_k_cells(a, k_values, kn, template)?))
}

/// One cell per scale `s`, inverting `s A` with `K = choose_k(s max |A|)`.
pub fn sweep_scale_cells(
    a: &SquareMatrix,
    scales: &[f64],
    kn: f64,
    template: &CellTemplate,
) -> Result<Vec<Cell>> {
    require_spd(a, SYMMETRY_TOL)?;
    require_values("scale", scales)?;
    scales
        .iter()
        .map(|&s| {
            let m = a.scaled(s);
            let k = choose_k(m.max_abs())?;
            Ok(Cell::new(Routine::SweepScale, m, k, kn, template.clone()))
        })
        .collect()
}

pub fn sweep_scale(
    a: &SquareMatrix,
    scales: &[f64],
    kn: f64,
    template: &CellTemplate,
) -> Result<Vec<ResultRecord>> {
    Ok(run_cells(&sweep_scale_cells(a, scales, kn, template)?))
}

/// One cell per `Kn` at `K = k` (or `choose_k(max |A|)`), sharing the seed.
pub fn sweep_noise_cells(
    a: &SquareMatrix,
    kn_values: &[f64],
    k: Option<f64>,
    template: &CellTemplate,
) -> Result<Vec<Cell>> {
    require_spd(a, SYMMETRY_TOL)?;
    require_values("Kn", kn_values)?;
    let k = match k {
        Some(k) => k,
        None => choose_k(a.max_abs())?,
    };
    Ok(kn_values
        .iter()
        .map(|&kn| Cell::new(Routine::SweepNoise, a.clone(), k, kn, template.clone()))
        .collect())
}

pub fn sweep_noise(
    a: &SquareMatrix,
    kn_values: &[f64],
    k: Option<f64>,
    template: &CellTemplate,
) -> Result<Vec<ResultRecord>> {
    Ok(run_cells(&sweep_noise_cells(a, kn_values, k, template)?))
}

/// Parameters of a random-matrix batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSpec {
    pub count: usize,
    pub dim: usize,
    /// Max entry magnitude of each generated matrix.
    pub scale: f64,
    pub kn_values: Vec<f64>,
    pub master_seed: u64,
    pub bin_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutput {
    pub records: Vec<ResultRecord>,
    pub histograms: Vec<ErrorHistogram>,
}

/// Matrix `i` is drawn from `derive_seed(master, i)` and simulated with the
/// seed `derive_seed(matrix_seed, 1)` for every `Kn`.
pub fn random_batch_cells(spec: &BatchSpec, template: &CellTemplate) -> Result<Vec<Cell>> {
    if spec.count == 0 {
        return Err(OnnError::InvalidParameter(
            "batch count must be at least 1".into(),
        ));
    }
    if spec.dim == 0 {
        return Err(OnnError::EmptyMatrix);
    }
    require_values("Kn", &spec.kn_values)?;
    let mut cells = Vec::with_capacity(spec.count * spec.kn_values.len());
    for i in 0..spec.count {
        let matrix_seed = derive_seed(spec.master_seed, i as u64);
        let g = random_spd_matrix(spec.dim, spec.scale, matrix_seed)?;
        let k = choose_k(g.matrix.max_abs())?;
        let mut t = template.clone();
        t.sde.seed = derive_seed(matrix_seed, 1);
        for &kn in &spec.kn_values {
            let mut cell = Cell::new(Routine::RandomBatch, g.matrix.clone(), k, kn, t.clone());
            cell.matrix_seed = Some(matrix_seed);
            cell.matrix_draws = Some(g.draws);
            cells.push(cell);
        }
    }
    Ok(cells)
}

/// Histograms per `Kn`, in the order of `kn_values`.
pub fn batch_histograms(
    records: &[ResultRecord],
    kn_values: &[f64],
    bin_width: f64,
) -> Result<Vec<ErrorHistogram>> {
    kn_values
        .iter()
        .map(|&kn| {
            let mut h = ErrorHistogram::new(kn, bin_width)?;
            records
                .iter()
                .filter(|r| r.kn == kn)
                .for_each(|r| h.add(r.rel_err_pct));
            Ok(h)
        })
        .collect()
}

pub fn random_batch(spec: &BatchSpec, template: &CellTemplate) -> Result<BatchOutput> {
    let records = run_cells(&random_batch_cells(spec, template)?);
    let histograms = batch_histograms(&records, &spec.kn_values, spec.bin_width)?;
    Ok(BatchOutput {
        records,
        histograms,
    })
}

/// Where the input matrix comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatrixSource {
    /// Matrix text file: the dimension, then one row per line.
    File {
        path: PathBuf,
    },
    Rows {
        rows: Vec<Vec<f64>>,
    },
    Generated {
        dim: usize,
        scale: f64,
        seed: u64,
    },
    /// The built-in 3x3 test matrix.
    #[default]
    Reference,
}

impl MatrixSource {
    pub fn load(&self) -> Result<(SquareMatrix, Option<GeneratedMatrix>, Option<u64>)> {
        match self {
            MatrixSource::File { path } => Ok((read_matrix_file(path)?, None, None)),
            MatrixSource::Rows { rows } => Ok((SquareMatrix::from_rows(rows)?, None, None)),
            MatrixSource::Generated { dim, scale, seed } => {
                let g = random_spd_matrix(*dim, *scale, *seed)?;
                Ok((g.matrix.clone(), Some(g), Some(*seed)))
            }
            MatrixSource::Reference => Ok((reference_matrix(), None, None)),
        }
    }
}

pub fn read_matrix_file(path: &Path) -> Result<SquareMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| OnnError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    SquareMatrix::parse_text(&text)
}

/// Integration settings of an experiment file; `steps` falls back to the
/// routine's default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeSettings {
    pub dt: StepSize,
    pub steps: Option<u64>,
    pub burn_in_fraction: f64,
    pub sample_stride: u64,
    pub mode: SdeMode,
}

impl Default for SdeSettings {
    fn default() -> Self {
        let d = SdeRunSpec::default();
        Self {
            dt: d.dt,
            steps: None,
            burn_in_fraction: d.burn_in_fraction,
            sample_stride: d.sample_stride,
            mode: d.mode,
        }
    }
}

impl SdeSettings {
    pub fn to_spec(&self, default_steps: u64, seed: u64) -> SdeRunSpec {
        SdeRunSpec {
            dt: self.dt,
            n_steps: self.steps.unwrap_or(default_steps),
            burn_in_fraction: self.burn_in_fraction,
            sample_stride: self.sample_stride,
            seed,
            mode: self.mode,
            initial_phase: None,
        }
    }
}

/// A complete experiment, as read from a TOML or JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub routine: Routine,
    pub matrix: MatrixSource,
    pub method: Method,
    /// Coupling strength; `choose_k(max |A|)` when absent.
    pub k: Option<f64>,
    pub kn: f64,
    /// Defaults to [`default_k_grid`].
    pub k_values: Option<Vec<f64>>,
    pub kn_values: Vec<f64>,
    pub scales: Vec<f64>,
    pub sde: SdeSettings,
    pub grid: GridSpec,
    pub seed: u64,
    pub count: usize,
    pub dim: usize,
    pub batch_scale: f64,
    /// Runs per cell; repetition `r` uses seed `seed + r`.
    pub repetitions: usize,
    pub record_wall_time: bool,
    pub histogram_bin_width: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            routine: Routine::SingleInvert,
            matrix: MatrixSource::default(),
            method: Method::default(),
            k: None,
            kn: DEFAULT_KN,
            k_values: None,
            kn_values: vec![1.0, 1e2, 1e4, 1e9, 1e15],
            scales: vec![1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3],
            sde: SdeSettings::default(),
            grid: GridSpec::default(),
            seed: 0,
            count: 100,
            dim: 3,
            batch_scale: 1.0,
            repetitions: 1,
            record_wall_time: false,
            histogram_bin_width: 5.0,
        }
    }
}

/// Records plus the batch histograms (empty for other routines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub records: Vec<ResultRecord>,
    pub histograms: Vec<ErrorHistogram>,
}

impl ExperimentOutput {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.failed()).count()
    }
}

impl ExperimentConfig {
    /// Parses JSON when the text starts with `{`, TOML otherwise.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| OnnError::Parse(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| OnnError::Parse(e.to_string()))
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| OnnError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text).map_err(|e| OnnError::Parse(format!("{}: {e}", path.display())))
    }

    fn template(&self, default_steps: u64, seed: u64) -> CellTemplate {
        CellTemplate {
            method: self.method,
            sde: self.sde.to_spec(default_steps, seed),
            grid: self.grid,
            record_wall_time: self.record_wall_time,
        }
    }

    /// Builds every cell of the experiment in output order.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        if self.repetitions == 0 {
            return Err(OnnError::InvalidParameter(
                "repetitions must be at least 1".into(),
            ));
        }
        let mut all = Vec::new();
        for rep in 0..self.repetitions as u64 {
            let seed = self.seed.wrapping_add(rep);
            let mut cells = if self.routine == Routine::RandomBatch {
                random_batch_cells(
                    &self.batch_spec_with_seed(seed),
                    &self.template(DEFAULT_BATCH_STEPS, 0),
                )?
            } else {
                let (a, generated, matrix_seed) = self.matrix.load()?;
                require_spd(&a, SYMMETRY_TOL)?;
                let t = self.template(DEFAULT_SWEEP_STEPS, seed);
                let k = match self.k {
                    Some(k) => k,
                    None => choose_k(a.max_abs())?,
                };
                let mut cells = match self.routine {
                    Routine::SweepK => {
                        let ks = self
                            .k_values
                            .clone()
                            .unwrap_or_else(|| default_k_grid(a.dim()));
                        sweep_k_cells(&a, &ks, self.kn, &t)?
                    }
                    Routine::SweepScale => sweep_scale_cells(&a, &self.scales, self.kn, &t)?,
                    Routine::SweepNoise => sweep_noise_cells(&a, &self.kn_values, self.k, &t)?,
                    Routine::EnergyInvert => {
                        let t = CellTemplate {
                            method: Method::Energy,
                            ..t
                        };
                        vec![Cell::new(self.routine, a.clone(), k, self.kn, t)]
                    }
                    Routine::DynamicsInvert => {
                        let t = CellTemplate {
                            method: Method::Dynamics,
                            ..t
                        };
                        vec![Cell::new(self.routine, a.clone(), k, self.kn, t)]
                    }
                    _ => vec![Cell::new(self.routine, a.clone(), k, self.kn, t)],
                };
                for c in &mut cells {
                    if c.routine != Routine::SweepScale {
                        c.matrix_seed = matrix_seed;
                        c.matrix_draws = generated.as_ref().map(|g| g.draws);
                    }
                }
                cells
            };
            all.append(&mut cells);
        }
        Ok(all)
    }

    fn batch_spec_with_seed(&self, seed: u64) -> BatchSpec {
        BatchSpec {
            count: self.count,
            dim: self.dim,
            scale: self.batch_scale,
            kn_values: self.kn_values.clone(),
            master_seed: seed,
            bin_width: self.histogram_bin_width,
        }
    }

    /// Runs the experiment on the current rayon pool.
    pub fn run(&self) -> Result<ExperimentOutput> {
        let records = run_cells(&self.cells()?);
        let histograms = if self.routine == Routine::RandomBatch {
            batch_histograms(&records, &self.kn_values, self.histogram_bin_width)?
        } else {
            Vec::new()
        };
        Ok(ExperimentOutput {
            records,
            histograms,
        })
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (0 = rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| OnnError::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
