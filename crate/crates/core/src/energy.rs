//! Inversion by direct quadrature of the Boltzmann density `exp(-Kn E(phi))`
//! on a uniform midpoint grid.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::diagnostics::Warning;
use crate::error::{OnnError, Result};
use crate::linalg::{
    invert_exact, relative_error_skipping, require_spd, CovarianceMatrix, SquareMatrix,
};
use crate::mapping::{map_matrix_to_onn, map_onn_to_matrix, OnnConfig, SYMMETRY_TOL};
use crate::stats::NeumaierSum;

/// Default cap on the number of grid cells: `100^3` fits, as does `56^4`.
pub const DEFAULT_CELL_CAP: u64 = 10_000_000;
/// Largest dimension the grid method accepts.
pub const MAX_GRID_DIM: usize = 4;
/// Outer-layer mass above which the window is considered too narrow.
pub const BOUNDARY_MASS_LIMIT: f64 = 1e-6;

/// Integration window per dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridWindow {
    /// Fixed half-width in radians.
    HalfWidth(f64),
    /// `sigmas` times the widest linear-theory standard deviation, capped at pi.
    Auto { sigmas: f64 },
}

impl Default for GridWindow {
    fn default() -> Self {
        GridWindow::Auto { sigmas: 8.0 }
    }
}

impl std::fmt::Display for GridWindow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GridWindow::HalfWidth(w) => write!(f, "{w:?}"),
            GridWindow::Auto { sigmas } => write!(f, "auto:{sigmas:?}"),
        }
    }
}

/// Accepts `auto`, `auto:<sigmas>`, `pi` or a half-width in radians.
impl std::str::FromStr for GridWindow {
    type Err = OnnError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || OnnError::Parse(format!("invalid grid window '{s}'"));
        if s.eq_ignore_ascii_case("pi") {
            return Ok(GridWindow::HalfWidth(PI));
        }
        if s.eq_ignore_ascii_case("auto") {
            return Ok(GridWindow::default());
        }
        if let Some(rest) = s.strip_prefix("auto:") {
            let sigmas: f64 = rest.parse().map_err(|_| bad())?;
            if !(sigmas > 0.0 && sigmas.is_finite()) {
                return Err(bad());
            }
            return Ok(GridWindow::Auto { sigmas });
        }
        let w: f64 = s.parse().map_err(|_| bad())?;
        if !(w > 0.0 && w.is_finite()) {
            return Err(bad());
        }
        Ok(GridWindow::HalfWidth(w))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points_per_dim: usize,
    pub window: GridWindow,
    pub cell_cap: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points_per_dim: 100,
            window: GridWindow::default(),
            cell_cap: DEFAULT_CELL_CAP,
        }
    }
}

impl GridSpec {
    pub fn with_points(points_per_dim: usize) -> Self {
        Self {
            points_per_dim,
            ..Self::default()
        }
    }

    pub fn with_halfwidth(mut self, w: f64) -> Self {
        self.window = GridWindow::HalfWidth(w);
        self
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.points_per_dim < 3 {
            return Err(OnnError::InvalidParameter(format!(
                "need at least 3 grid points per dimension, got {}",
                self.points_per_dim
            )));
        }
        if dim > MAX_GRID_DIM {
            return Err(OnnError::InvalidParameter(format!(
                "grid quadrature supports d <= {MAX_GRID_DIM}, got {dim}"
            )));
        }
        let cells = (self.points_per_dim as u64).checked_pow(dim as u32);
        match cells {
            Some(c) if c <= self.cell_cap => Ok(()),
            _ => Err(OnnError::GridTooLarge {
                points: self.points_per_dim,
                dim,
                cap: self.cell_cap,
            }),
        }
    }

    /// Resolves the half-width for `config`.
    pub fn halfwidth_for(&self, config: &OnnConfig) -> Result<f64> {
        match self.window {
            GridWindow::HalfWidth(w) if w > 0.0 && w.is_finite() => Ok(w),
            GridWindow::HalfWidth(w) => Err(OnnError::InvalidParameter(format!(
                "window half-width must be positive, got {w}"
            ))),
            GridWindow::Auto { sigmas } => {
                if !(sigmas > 0.0) {
                    return Err(OnnError::InvalidParameter(format!(
                        "auto window needs sigmas > 0, got {sigmas}"
                    )));
                }
                Ok(linear_sigmas(config)
                    .map(|s| s.into_iter().fold(0.0, f64::max))
                    .filter(|s| s.is_finite() && *s > 0.0)
                    .map_or(PI, |s| (sigmas * s).min(PI)))
            }
        }
    }
}

/// Standard deviations predicted by the linearized theory, `diag((Kn K A)^-1)^(1/2)`.
fn linear_sigmas(config: &OnnConfig) -> Option<Vec<f64>> {
    let a = map_onn_to_matrix(config);
    let inv = invert_exact(&a.scaled(config.k() * config.kn())).ok()?;
    let diag = inv.diagonal();
    if diag.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    Some(diag.into_iter().map(f64::sqrt).collect())
}

/// Normalized probability masses on the cell centers of `[-w, w]^d`.
#[derive(Debug, Clone)]
pub struct BoltzmannGrid {
    pub spec: GridSpec,
    pub dim: usize,
    pub halfwidth: f64,
    /// Row-major over cells, last dimension fastest.
    pub density: Vec<f64>,
}

impl BoltzmannGrid {
    pub fn cell_width(&self) -> f64 {
        2.0 * self.halfwidth / self.spec.points_per_dim as f64
    }

    /// Center coordinate of grid index `k` along any axis.
    pub fn center(&self, k: usize) -> f64 {
        -self.halfwidth + (k as f64 + 0.5) * self.cell_width()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.spec.points_per_dim)
            .map(|k| self.center(k))
            .collect()
    }

    /// Mass in cells touching the outer layer of the grid.
    pub fn boundary_mass(&self) -> f64 {
        let n = self.spec.points_per_dim;
        let mut total = NeumaierSum::default();
        let mut idx = vec![0usize; self.dim];
        for &m in &self.density {
            if idx.iter().any(|&k| k == 0 || k == n - 1) {
                total.add(m);
            }
            advance(&mut idx, n);
        }
        total.sum()
    }

    pub fn total_mass(&self) -> f64 {
        let mut s = NeumaierSum::default();
        self.density.iter().for_each(|&m| s.add(m));
        s.sum()
    }
}

#[inline]
fn advance(idx: &mut [usize], n: usize) {
    for k in idx.iter_mut().rev() {
        *k += 1;
        if *k < n {
            return;
        }
        *k = 0;
    }
}

/// `E(phi) - E(0)` written with `1 - cos x = 2 sin^2(x/2)` so that it stays
/// accurate when the excess is many orders below `|E(0)|`.
fn excess_energy(config: &OnnConfig, phi: &[f64]) -> f64 {
    let d = config.dim();
    let j = config.coupling();
    let mut pair = 0.0;
    for a in 0..d {
        for b in (a + 1)..d {
            let w = j[(a, b)];
            if w != 0.0 {
                let s = (0.5 * (phi[a] - phi[b])).sin();
                pair += w * s * s;
            }
        }
    }
    let mut inj = 0.0;
    for (ks, p) in config.injection().iter().zip(phi) {
        let s = (0.5 * p).sin();
        inj += ks * s * s;
    }
    2.0 * (config.k() * pair + inj)
}

/// Evaluates and normalizes the Boltzmann density of `config` on the grid.
pub fn boltzmann_grid(config: &OnnConfig, spec: &GridSpec) -> Result<BoltzmannGrid> {
    let d = config.dim();
    spec.validate(d)?;
    let halfwidth = spec.halfwidth_for(config)?;
    let n = spec.points_per_dim;
    let h = 2.0 * halfwidth / n as f64;
    let centers: Vec<f64> = (0..n).map(|k| -halfwidth + (k as f64 + 0.5) * h).collect();
    let cells = n.pow(d as u32);

    let mut energies = Vec::with_capacity(cells);
    let mut idx = vec![0usize; d];
    let mut phi = vec![0.0; d];
    let mut e_min = f64::INFINITY;
    for _ in 0..cells {
        for (p, &k) in phi.iter_mut().zip(&idx) {
            *p = centers[k];
        }
        let e = excess_energy(config, &phi);
        e_min = e_min.min(e);
        energies.push(e);
        advance(&mut idx, n);
    }

    let kn = config.kn();
    let mut z = NeumaierSum::default();
    let mut density: Vec<f64> = energies
        .into_iter()
        .map(|e| {
            let w = (-kn * (e - e_min)).exp();
            z.add(w);
            w
        })
        .collect();
    let z = z.sum();
    if !(z > 0.0) || !z.is_finite() {
        return Err(OnnError::DegenerateDensity);
    }
    density.iter_mut().for_each(|m| *m /= z);
    Ok(BoltzmannGrid {
        spec: *spec,
        dim: d,
        halfwidth,
        density,
    })
}

/// Raw second moment `sum_cells mass * phi_i * phi_j` over cell centers.
pub fn covariance_from_grid(grid: &BoltzmannGrid) -> CovarianceMatrix {
    let d = grid.dim;
    let n = grid.spec.points_per_dim;
    let centers = grid.centers();
    let mut acc = vec![NeumaierSum::default(); d * d];
    let mut idx = vec![0usize; d];
    for &m in &grid.density {
        if m != 0.0 {
            for i in 0..d {
                let mi = m * centers[idx[i]];
                for j in i..d {
                    acc[i * d + j].add(mi * centers[idx[j]]);
                }
            }
        }
        advance(&mut idx, n);
    }
    let mut s = SquareMatrix::zeros(d);
    for i in 0..d {
        for j in i..d {
            let v = acc[i * d + j].sum();
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    CovarianceMatrix::from_matrix(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyDiagnostics {
    /// Percent error against the exact inverse (entries with a zero reference skipped).
    pub relative_error: Option<f64>,
    pub skipped_entries: usize,
    pub halfwidth: f64,
    pub cell_width: f64,
    pub boundary_mass: f64,
    /// Cell width divided by each linear-theory standard deviation.
    pub resolution: Vec<f64>,
    pub covariance: CovarianceMatrix,
    pub exact_inverse: SquareMatrix,
    pub warnings: Vec<Warning>,
}

/// `A^-1 ~ Kn K Sigma` with `Sigma` from grid quadrature.
pub fn invert_via_energy(
    a: &SquareMatrix,
    k: f64,
    kn: f64,
    spec: &GridSpec,
) -> Result<(SquareMatrix, EnergyDiagnostics)> {
    require_spd(a, SYMMETRY_TOL)?;
    let config = map_matrix_to_onn(a, k, kn)?;
    let grid = boltzmann_grid(&config, spec)?;
    let sigma = covariance_from_grid(&grid);
    let estimate = sigma.matrix().scaled(kn * k);
    let exact = invert_exact(a)?;

    let mut warnings = Vec::new();
    if !config.negative_injections().is_empty() {
        warnings.push(Warning::NegativeInjection);
    }
    let boundary_mass = grid.boundary_mass();
    if boundary_mass > BOUNDARY_MASS_LIMIT {
        warnings.push(Warning::BoundaryMass);
    }
    let (relative_error, skipped_entries) = match relative_error_skipping(&exact, &estimate) {
        Ok((e, s)) => (Some(e), s),
        Err(_) => (None, a.dim() * a.dim()),
    };
    if skipped_entries > 0 {
        warnings.push(Warning::SkippedReferenceEntries);
    }
    let cell_width = grid.cell_width();
    let resolution: Vec<f64> = linear_sigmas(&config)
        .map(|s| s.into_iter().map(|v| cell_width / v).collect())
        .unwrap_or_default();
    if resolution.iter().any(|r| *r > 1.0) {
        warnings.push(Warning::CoarseGrid);
    }
    warnings.sort();
    let diag = EnergyDiagnostics {
        relative_error,
        skipped_entries,
        halfwidth: grid.halfwidth,
        cell_width,
        boundary_mass,
        resolution,
        covariance: sigma,
        exact_inverse: exact,
        warnings,
    };
    Ok((estimate, diag))
}
