//! WebAssembly bindings for the browser demo. Each operation works on a
//! symmetric 2x2 matrix `[[a11, a12], [a12, a22]]`.
//!
//! The plain Rust functions ([`landscape`], [`trajectory`], [`error_curve`])
//! carry the logic; the `#[wasm_bindgen]` wrappers only convert errors.

use wasm_bindgen::prelude::*;

use onn_therminv::dynamics::{
    auto_dt, invert_via_dynamics, simulate_with, SdeMode, SdeRunSpec, StepSize,
};
use onn_therminv::energy::{boltzmann_grid, invert_via_energy, GridSpec, GridWindow};
use onn_therminv::harness::log_space;
use onn_therminv::linalg::{invert_exact, relative_error};
use onn_therminv::{choose_k, map_matrix_to_onn, OnnError, Result, SquareMatrix};

/// Most scatter points returned by [`trajectory`].
pub const MAX_SCATTER: usize = 4000;

pub fn matrix2(a11: f64, a12: f64, a22: f64) -> Result<SquareMatrix> {
    SquareMatrix::from_rows(&[[a11, a12], [a12, a22]])
}

/// Boltzmann density of the mapped network on a square grid, with the
/// inverse recovered from it.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Landscape {
    points: usize,
    halfwidth: f64,
    density: Vec<f64>,
    estimate: Vec<f64>,
    exact: Vec<f64>,
    rel_err: f64,
    boundary_mass: f64,
}

#[wasm_bindgen]
impl Landscape {
    #[wasm_bindgen(getter)]
    pub fn points(&self) -> usize {
        self.points
    }

    #[wasm_bindgen(getter)]
    pub fn halfwidth(&self) -> f64 {
        self.halfwidth
    }

    /// Row-major masses, `phi_1` along rows.
    #[wasm_bindgen(getter)]
    pub fn density(&self) -> Vec<f64> {
        self.density.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn estimate(&self) -> Vec<f64> {
        self.estimate.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn exact(&self) -> Vec<f64> {
        self.exact.clone()
    }

    #[wasm_bindgen(getter, js_name = relErr)]
    pub fn rel_err(&self) -> f64 {
        self.rel_err
    }

    #[wasm_bindgen(getter, js_name = boundaryMass)]
    pub fn boundary_mass(&self) -> f64 {
        self.boundary_mass
    }
}

/// `window <= 0` selects the automatic window.
pub fn landscape(
    a: &SquareMatrix,
    k: f64,
    kn: f64,
    points: usize,
    window: f64,
) -> Result<Landscape> {
    let mut spec = GridSpec::with_points(points);
    if window > 0.0 {
        spec.window = GridWindow::HalfWidth(window);
    }
    let (est, diag) = invert_via_energy(a, k, kn, &spec)?;
    let grid = boltzmann_grid(&map_matrix_to_onn(a, k, kn)?, &spec)?;
    Ok(Landscape {
        points,
        halfwidth: grid.halfwidth,
        density: grid.density,
        estimate: est.as_slice().to_vec(),
        exact: diag.exact_inverse.as_slice().to_vec(),
        rel_err: diag.relative_error.unwrap_or(f64::NAN),
        boundary_mass: diag.boundary_mass,
    })
}

/// Thinned phase samples of one simulated run and the resulting inverse.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct Trajectory {
    phi1: Vec<f64>,
    phi2: Vec<f64>,
    estimate: Vec<f64>,
    exact: Vec<f64>,
    rel_err: f64,
    max_phase: f64,
    dt: f64,
}

#[wasm_bindgen]
impl Trajectory {
    #[wasm_bindgen(getter)]
    pub fn phi1(&self) -> Vec<f64> {
        self.phi1.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn phi2(&self) -> Vec<f64> {
        self.phi2.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn estimate(&self) -> Vec<f64> {
        self.estimate.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn exact(&self) -> Vec<f64> {
        self.exact.clone()
    }

    #[wasm_bindgen(getter, js_name = relErr)]
    pub fn rel_err(&self) -> f64 {
        self.rel_err
    }

    #[wasm_bindgen(getter, js_name = maxPhase)]
    pub fn max_phase(&self) -> f64 {
        self.max_phase
    }

    #[wasm_bindgen(getter)]
    pub fn dt(&self) -> f64 {
        self.dt
    }
}

pub fn trajectory(
    a: &SquareMatrix,
    k: f64,
    kn: f64,
    steps: u64,
    seed: u64,
    linear: bool,
) -> Result<Trajectory> {
    let mode = if linear {
        SdeMode::LinearOu
    } else {
        SdeMode::FullKuramoto
    };
    let spec = SdeRunSpec::new(steps, seed, mode);
    let config = map_matrix_to_onn(a, k, kn)?;
    let every = (spec.sample_count() / MAX_SCATTER as u64).max(1);
    let (mut phi1, mut phi2) = (Vec::new(), Vec::new());
    let mut seen = 0u64;
    let stats = simulate_with(&config, &spec, |_, phi| {
        if seen.is_multiple_of(every) && phi1.len() < MAX_SCATTER {
            phi1.push(phi[0]);
            phi2.push(phi[1]);
        }
        seen += 1;
    })?;
    let est = stats.second_moment.matrix().scaled(kn * k);
    let exact = invert_exact(a)?;
    Ok(Trajectory {
        phi1,
        phi2,
        rel_err: relative_error(&exact, &est).unwrap_or(f64::NAN),
        estimate: est.as_slice().to_vec(),
        exact: exact.as_slice().to_vec(),
        max_phase: stats.max_abs_phase,
        dt: stats.dt,
    })
}

/// Interleaved `(K, error %)` pairs over `n` log-spaced `K` in `[10, 1e5]`.
/// The step size is fixed at the value for `K = 1000 / max |A|`; cells where
/// it is unstable come back as `NaN`.
pub fn error_curve(a: &SquareMatrix, kn: f64, steps: u64, seed: u64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(OnnError::InvalidParameter(
            "need at least one K value".into(),
        ));
    }
    let mut spec = SdeRunSpec::new(steps, seed, SdeMode::FullKuramoto);
    spec.dt = StepSize::Fixed(auto_dt(a, choose_k(a.max_abs())?));
    let mut out = Vec::with_capacity(2 * n);
    for k in log_space(1.0, 5.0, n) {
        let err = match invert_via_dynamics(a, k, kn, &spec) {
            Ok((_, d)) => d.relative_error.unwrap_or(f64::NAN),
            Err(OnnError::UnstableStep { .. } | OnnError::Diverged { .. }) => f64::NAN,
            Err(e) => return Err(e),
        };
        out.push(k);
        out.push(err);
    }
    Ok(out)
}

fn js(e: OnnError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = energyLandscape)]
pub fn energy_landscape_js(
    a11: f64,
    a12: f64,
    a22: f64,
    k: f64,
    kn: f64,
    points: usize,
    window: f64,
) -> std::result::Result<Landscape, JsError> {
    landscape(&matrix2(a11, a12, a22).map_err(js)?, k, kn, points, window).map_err(js)
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen(js_name = simulateTrajectory)]
pub fn simulate_trajectory_js(
    a11: f64,
    a12: f64,
    a22: f64,
    k: f64,
    kn: f64,
    steps: u32,
    seed: u32,
    linear: bool,
) -> std::result::Result<Trajectory, JsError> {
    trajectory(
        &matrix2(a11, a12, a22).map_err(js)?,
        k,
        kn,
        steps.into(),
        seed.into(),
        linear,
    )
    .map_err(js)
}

#[wasm_bindgen(js_name = errorVersusK)]
pub fn error_versus_k_js(
    a11: f64,
    a12: f64,
    a22: f64,
    kn: f64,
    steps: u32,
    seed: u32,
    n: usize,
) -> std::result::Result<Vec<f64>, JsError> {
    error_curve(
        &matrix2(a11, a12, a22).map_err(js)?,
        kn,
        steps.into(),
        seed.into(),
        n,
    )
    .map_err(js)
}
