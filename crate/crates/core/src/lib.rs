//! Simulator for matrix inversion with a noisy network of coupled phase
//! oscillators.
//!
//! A symmetric positive-definite matrix `A` is encoded into Kuramoto
//! couplings and harmonic-injection strengths. Near the in-phase state the
//! network energy is `phi^T (K A) phi / 2`, so at noise level `Kn` the
//! stationary phase covariance is `(Kn K A)^-1` and `A^-1 = Kn K Sigma`.
//! Two estimators of `Sigma` are provided: quadrature of the Boltzmann
//! density ([`energy`]) and Euler-Maruyama simulation ([`dynamics`]).

// `!(x > 0.0)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mapping;
pub mod stats;

pub use diagnostics::Warning;
pub use dynamics::{invert_via_dynamics, simulate, SdeMode, SdeRunSpec, StepSize, TrajectoryStats};
pub use energy::{invert_via_energy, GridSpec, GridWindow};
pub use error::{OnnError, Result};
pub use harness::{random_spd_matrix, ExperimentConfig, Method, ResultRecord, Routine};
pub use linalg::{invert_exact, is_spd, relative_error, CovarianceMatrix, SquareMatrix};
pub use mapping::{choose_k, map_matrix_to_onn, map_onn_to_matrix, OnnConfig, PhaseState};
