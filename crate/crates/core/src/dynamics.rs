//! Euler-Maruyama integration of the noisy oscillator network and inversion
//! from the sampled stationary phase covariance.
//!
//! ```text
//! dphi = drift(phi) dt + sqrt(2/Kn) dW
//! ```
//!
//! `drift` is either the full injected Kuramoto drift or its linearization
//! `-K A phi` (an Ornstein-Uhlenbeck process with stationary covariance
//! `(Kn K A)^-1`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diagnostics::Warning;
use crate::error::{OnnError, Result};
use crate::linalg::{
    invert_exact, relative_error_skipping, require_spd, symmetric_eigenvalues, CovarianceMatrix,
    SquareMatrix,
};
use crate::mapping::{
    kuramoto_drift, linearized_drift, map_matrix_to_onn, map_onn_to_matrix, OnnConfig, PhaseState,
    SYMMETRY_TOL,
};
use crate::stats::MomentAccumulator;

/// `|phi_i|` beyond which a run is declared diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e3;
/// Max observed `|phi|` above which the small-angle mapping is considered degraded.
pub const SMALL_PHASE_LIMIT: f64 = 0.3;
/// `dt * K * lambda_hat` used by the automatic step rule.
pub const AUTO_DT_FACTOR: f64 = 0.1;
/// Batches used for the batch-means standard error.
pub const STDERR_BATCHES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdeMode {
    /// Full nonlinear Kuramoto drift with harmonic injection.
    FullKuramoto,
    /// Linearized drift `-K A phi`.
    LinearOu,
}

impl SdeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SdeMode::FullKuramoto => "kuramoto",
            SdeMode::LinearOu => "linear",
        }
    }
}

impl std::str::FromStr for SdeMode {
    type Err = OnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kuramoto" | "full" | "full_kuramoto" => Ok(SdeMode::FullKuramoto),
            "linear" | "ou" | "linear_ou" => Ok(SdeMode::LinearOu),
            other => Err(OnnError::Parse(format!("unknown SDE mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum AutoTag {
    Auto,
}

/// Integration step: either fixed or derived from the network by the auto rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSize {
    Fixed(f64),
    #[serde(with = "auto_tag")]
    Auto,
}

mod auto_tag {
    use super::AutoTag;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        AutoTag::Auto.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        AutoTag::deserialize(d).map(|_| ())
    }
}

impl std::str::FromStr for StepSize {
    type Err = OnnError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(StepSize::Auto);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| OnnError::Parse(format!("bad dt {s:?}; expected `auto` or a number")))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(OnnError::InvalidParameter(format!(
                "dt must be positive, got {v}"
            )));
        }
        Ok(StepSize::Fixed(v))
    }
}

/// Upper bound on the spectral radius of `A`: the max absolute row sum.
pub fn lambda_bound(a: &SquareMatrix) -> f64 {
    a.norm_inf()
}

/// `dt = 0.1 / (K * lambda_hat)`.
pub fn auto_dt(a: &SquareMatrix, k: f64) -> f64 {
    AUTO_DT_FACTOR / (k * lambda_bound(a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeRunSpec {
    pub dt: StepSize,
    pub n_steps: u64,
    pub burn_in_fraction: f64,
    pub sample_stride: u64,
    pub seed: u64,
    pub mode: SdeMode,
    /// Zero vector when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_phase: Option<PhaseState>,
}

impl Default for SdeRunSpec {
    fn default() -> Self {
        Self {
            dt: StepSize::Auto,
            n_steps: 5_000_000,
            burn_in_fraction: 0.1,
            sample_stride: 1,
            seed: 0,
            mode: SdeMode::FullKuramoto,
            initial_phase: None,
        }
    }
}

impl SdeRunSpec {
    pub fn new(n_steps: u64, seed: u64, mode: SdeMode) -> Self {
        Self {
            n_steps,
            seed,
            mode,
            ..Self::default()
        }
    }

    pub fn burn_in_steps(&self) -> u64 {
        (self.burn_in_fraction * self.n_steps as f64).floor() as u64
    }

    /// Number of states that enter the statistics.
    pub fn sample_count(&self) -> u64 {
        (self.n_steps - self.burn_in_steps()) / self.sample_stride.max(1)
    }

    pub fn resolve_dt(&self, config: &OnnConfig) -> f64 {
        match self.dt {
            StepSize::Fixed(v) => v,
            StepSize::Auto => auto_dt(&map_onn_to_matrix(config), config.k()),
        }
    }

    fn validate(&self, config: &OnnConfig) -> Result<f64> {
        if self.n_steps == 0 {
            return Err(OnnError::InvalidParameter(
                "n_steps must be positive".into(),
            ));
        }
        if self.sample_stride == 0 {
            return Err(OnnError::InvalidParameter(
                "sample_stride must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(OnnError::InvalidParameter(format!(
                "burn_in_fraction must lie in [0, 1), got {}",
                self.burn_in_fraction
            )));
        }
        if let Some(p) = &self.initial_phase {
            if p.dim() != config.dim() {
                return Err(OnnError::DimensionMismatch {
                    left: config.dim(),
                    right: p.dim(),
                });
            }
            if p.0.iter().any(|v| !v.is_finite()) {
                return Err(OnnError::InvalidParameter(
                    "non-finite initial phase".into(),
                ));
            }
        }
        let dt = self.resolve_dt(config);
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(OnnError::InvalidParameter(format!(
                "dt must be positive, got {dt}"
            )));
        }
        let ratio = dt * config.k() * lambda_bound(&map_onn_to_matrix(config));
        if ratio >= 2.0 {
            return Err(OnnError::UnstableStep { ratio });
        }
        Ok(dt)
    }
}

/// `sqrt(2 / Kn)`, the scalar diffusion amplitude.
pub fn noise_amplitude(kn: f64) -> Result<f64> {
    if !(kn > 0.0) {
        return Err(OnnError::NonPositiveNoiseParameter(kn));
    }
    Ok((2.0 / kn).sqrt())
}

/// One explicit Euler-Maruyama step with caller-supplied increments `dW ~ N(0, dt)`.
pub fn step(
    config: &OnnConfig,
    phi: &PhaseState,
    dt: f64,
    dw: &[f64],
    mode: SdeMode,
) -> PhaseState {
    assert_eq!(dw.len(), phi.dim());
    let drift = match mode {
        SdeMode::FullKuramoto => kuramoto_drift(config, phi),
        SdeMode::LinearOu => linearized_drift(config, phi),
    };
    let amp = (2.0 / config.kn()).sqrt();
    PhaseState(
        phi.0
            .iter()
            .zip(&drift)
            .zip(dw)
            .map(|((p, f), w)| p + f * dt + amp * w)
            .collect(),
    )
}

/// Precomputed drift for the hot loop.
enum DriftKernel {
    Full {
        pairs: Vec<(usize, usize, f64)>,
        ks: Vec<f64>,
    },
    Linear {
        ka: SquareMatrix,
    },
}

impl DriftKernel {
    fn new(config: &OnnConfig, mode: SdeMode) -> Self {
        match mode {
            SdeMode::FullKuramoto => {
                let d = config.dim();
                let j = config.coupling();
                let mut pairs = Vec::new();
                for a in 0..d {
                    for b in (a + 1)..d {
                        if j[(a, b)] != 0.0 {
                            pairs.push((a, b, config.k() * j[(a, b)]));
                        }
                    }
                }
                DriftKernel::Full {
                    pairs,
                    ks: config.injection().to_vec(),
                }
            }
            SdeMode::LinearOu => DriftKernel::Linear {
                ka: map_onn_to_matrix(config).scaled(config.k()),
            },
        }
    }

    #[inline]
    fn eval(&self, phi: &[f64], out: &mut [f64]) {
        match self {
            DriftKernel::Full { pairs, ks } => {
                for ((o, s), p) in out.iter_mut().zip(ks).zip(phi) {
                    *o = -s * p.sin();
                }
                for &(a, b, w) in pairs {
                    let f = w * (phi[a] - phi[b]).sin();
                    out[a] -= f;
                    out[b] += f;
                }
            }
            DriftKernel::Linear { ka } => {
                let d = phi.len();
                let m = ka.as_slice();
                for i in 0..d {
                    let row = &m[i * d..(i + 1) * d];
                    out[i] = -row.iter().zip(phi).map(|(x, y)| x * y).sum::<f64>();
                }
            }
        }
    }
}

/// Streaming statistics of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub n_samples: u64,
    pub mean: Vec<f64>,
    pub second_moment: CovarianceMatrix,
    /// Batch-means standard error of each second-moment entry.
    pub second_moment_stderr: SquareMatrix,
    pub min_abs_phase: f64,
    pub max_abs_phase: f64,
    pub dt: f64,
    pub n_steps: u64,
    pub burn_in_steps: u64,
}

impl TrajectoryStats {
    pub fn mean_norm(&self) -> f64 {
        self.mean.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn total_time(&self) -> f64 {
        self.dt * self.n_steps as f64
    }
}

/// Integrates `spec.n_steps` steps and accumulates statistics after burn-in.
/// Bit-for-bit deterministic in `(config, spec)`.
pub fn simulate(config: &OnnConfig, spec: &SdeRunSpec) -> Result<TrajectoryStats> {
    simulate_with(config, spec, |_, _| {})
}

/// [`simulate`] with a callback receiving `(step, phi)` for every retained sample.
pub fn simulate_with<F>(
    config: &OnnConfig,
    spec: &SdeRunSpec,
    mut on_sample: F,
) -> Result<TrajectoryStats>
where
    F: FnMut(u64, &[f64]),
{
    let dt = spec.validate(config)?;
    let d = config.dim();
    let kernel = DriftKernel::new(config, spec.mode);
    let amp = noise_amplitude(config.kn())? * dt.sqrt();
    let burn_in = spec.burn_in_steps();
    let stride = spec.sample_stride;
    let mut acc = MomentAccumulator::new(d, spec.sample_count(), STDERR_BATCHES);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut phi = spec
        .initial_phase
        .as_ref()
        .map_or_else(|| vec![0.0; d], |p| p.0.clone());
    let mut drift = vec![0.0; d];
    for k in 1..=spec.n_steps {
        kernel.eval(&phi, &mut drift);
        let mut worst = 0.0f64;
        for (p, f) in phi.iter_mut().zip(&drift) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *p += f * dt + amp * z;
            worst = worst.max(p.abs());
        }
        if !(worst <= DIVERGENCE_LIMIT) {
            return Err(OnnError::Diverged {
                step: k,
                magnitude: worst,
            });
        }
        if k > burn_in && (k - burn_in).is_multiple_of(stride) {
            acc.push(&phi);
            on_sample(k, &phi);
        }
    }
    let summary = acc
        .finish()
        .ok_or_else(|| OnnError::InvalidParameter("no samples retained after burn-in".into()))?;
    Ok(TrajectoryStats {
        n_samples: summary.n_samples,
        mean: summary.mean,
        second_moment: summary.second_moment,
        second_moment_stderr: summary.second_moment_stderr,
        min_abs_phase: summary.min_abs_phase,
        max_abs_phase: summary.max_abs_phase,
        dt,
        n_steps: spec.n_steps,
        burn_in_steps: burn_in,
    })
}

/// Relaxation and sampling time estimates for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeToSolution {
    /// `1 / (K lambda_min(A))`; also used as the autocorrelation time.
    pub relaxation_time: f64,
    pub burn_in_time: f64,
    pub sampling_time: f64,
    pub effective_samples: f64,
    pub warnings: Vec<Warning>,
}

/// Burn-in must cover this many relaxation times.
pub const BURN_IN_RELAXATIONS: f64 = 5.0;

pub fn time_to_solution_estimate(config: &OnnConfig, spec: &SdeRunSpec) -> TimeToSolution {
    let a = map_onn_to_matrix(config);
    let lambda_min = symmetric_eigenvalues(&a)[0];
    let relaxation_time = if lambda_min > 0.0 {
        1.0 / (config.k() * lambda_min)
    } else {
        f64::INFINITY
    };
    let dt = spec.resolve_dt(config);
    let burn_in_time = spec.burn_in_steps() as f64 * dt;
    let sampling_time = (spec.n_steps - spec.burn_in_steps()) as f64 * dt;
    let n = spec.sample_count() as f64;
    let spacing = spec.sample_stride.max(1) as f64 * dt;
    let effective_samples = n / (relaxation_time / spacing).max(1.0);
    let mut warnings = Vec::new();
    if !(burn_in_time >= BURN_IN_RELAXATIONS * relaxation_time) {
        warnings.push(Warning::InsufficientBurnIn);
    }
    TimeToSolution {
        relaxation_time,
        burn_in_time,
        sampling_time,
        effective_samples,
        warnings,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsDiagnostics {
    pub relative_error: Option<f64>,
    pub skipped_entries: usize,
    pub max_abs_phase: f64,
    pub mean_norm: f64,
    pub n_samples: u64,
    pub effective_samples: f64,
    pub dt: f64,
    pub total_time: f64,
    pub exact_inverse: SquareMatrix,
    pub stats: TrajectoryStats,
    pub timing: TimeToSolution,
    pub warnings: Vec<Warning>,
}

/// `A^-1 ~ Kn K E[phi phi^T]` from one simulated trajectory.
pub fn invert_via_dynamics(
    a: &SquareMatrix,
    k: f64,
    kn: f64,
    spec: &SdeRunSpec,
) -> Result<(SquareMatrix, DynamicsDiagnostics)> {
    require_spd(a, SYMMETRY_TOL)?;
    let config = map_matrix_to_onn(a, k, kn)?;
    let stats = simulate(&config, spec)?;
    let estimate = stats.second_moment.matrix().scaled(kn * k);
    let exact = invert_exact(a)?;
    let timing = time_to_solution_estimate(&config, spec);

    let mut warnings = Vec::new();
    if !config.negative_injections().is_empty() {
        warnings.push(Warning::NegativeInjection);
    }
    if stats.max_abs_phase > SMALL_PHASE_LIMIT {
        warnings.push(Warning::SmallPhaseViolation);
    }
    warnings.extend(timing.warnings.iter().copied());
    let (relative_error, skipped_entries) = match relative_error_skipping(&exact, &estimate) {
        Ok((e, s)) => (Some(e), s),
        Err(_) => (None, a.dim() * a.dim()),
    };
    if skipped_entries > 0 {
        warnings.push(Warning::SkippedReferenceEntries);
    }
    warnings.sort();
    warnings.dedup();
    let diag = DynamicsDiagnostics {
        relative_error,
        skipped_entries,
        max_abs_phase: stats.max_abs_phase,
        mean_norm: stats.mean_norm(),
        n_samples: stats.n_samples,
        effective_samples: timing.effective_samples,
        dt: stats.dt,
        total_time: stats.total_time(),
        exact_inverse: exact,
        stats,
        timing,
        warnings,
    };
    Ok((estimate, diag))
}
