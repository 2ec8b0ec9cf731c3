use std::fmt;

use serde::{Deserialize, Serialize};

/// Non-fatal conditions attached to a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Warning {
    /// Some `Ks_i < 0`; the energy well may not be single-welled.
    NegativeInjection,
    /// Grid window leaves more than the allowed mass in its outer layer.
    BoundaryMass,
    /// Grid cells are wider than the narrowest standard deviation.
    CoarseGrid,
    /// Observed phases left the small-angle regime.
    SmallPhaseViolation,
    /// Burn-in shorter than five relaxation times.
    InsufficientBurnIn,
    /// Reference inverse had (near-)zero entries that were left out of the error.
    SkippedReferenceEntries,
}

impl Warning {
    pub fn as_str(self) -> &'static str {
        match self {
            Warning::NegativeInjection => "negative_injection",
            Warning::BoundaryMass => "boundary_mass",
            Warning::CoarseGrid => "coarse_grid",
            Warning::SmallPhaseViolation => "small_phase_violation",
            Warning::InsufficientBurnIn => "insufficient_burn_in",
            Warning::SkippedReferenceEntries => "skipped_reference_entries",
        }
    }
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
