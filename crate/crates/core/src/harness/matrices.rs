//! Seeded test-matrix generation and seed derivation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{OnnError, Result};
use crate::linalg::{invert_exact, SquareMatrix};

/// Redraw budget for [`random_spd_matrix`].
pub const MAX_DRAWS: usize = 100;
/// Inverse entries below this fraction of `||S^-1||_inf` trigger a redraw.
pub const MIN_INVERSE_ENTRY: f64 = 1e-6;
const RIDGE: f64 = 0.1;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent child seed `index` of `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// A generated matrix together with how many draws it took.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedMatrix {
    pub matrix: SquareMatrix,
    pub draws: usize,
}

/// Draws `S = M M^T / d + 0.1 I` with `M_ij ~ U(-1, 1)` and rescales it so
/// that `max |S_ij| = scale`. Draws whose inverse has an entry below
/// `1e-6 ||S^-1||_inf` in magnitude are rejected and redrawn from the next
/// sub-seed.
pub fn random_spd_matrix(dim: usize, scale: f64, seed: u64) -> Result<GeneratedMatrix> {
    if dim == 0 {
        return Err(OnnError::EmptyMatrix);
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(OnnError::NonPositiveScale(scale));
    }
    for attempt in 0..MAX_DRAWS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, attempt as u64));
        let m: Vec<f64> = (0..dim * dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let mut s = SquareMatrix::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v: f64 = (0..dim)
                    .map(|k| m[i * dim + k] * m[j * dim + k])
                    .sum::<f64>()
                    / dim as f64;
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
            s[(i, i)] += RIDGE;
        }
        let peak = s.max_abs();
        let mut out = SquareMatrix::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                // divide first so the largest entry lands exactly on `scale`
                out[(i, j)] = s[(i, j)] / peak * scale;
            }
        }
        let inv = match invert_exact(&out) {
            Ok(inv) => inv,
            Err(_) => continue,
        };
        let floor = MIN_INVERSE_ENTRY * inv.norm_inf();
        if inv.as_slice().iter().all(|v| v.abs() >= floor) {
            return Ok(GeneratedMatrix {
                matrix: out,
                draws: attempt + 1,
            });
        }
    }
    Err(OnnError::RejectionLimit(MAX_DRAWS))
}

/// Short content hash identifying a matrix in result records.
pub fn matrix_hash(a: &SquareMatrix) -> String {
    let mut h = Sha256::new();
    h.update((a.dim() as u64).to_le_bytes());
    for v in a.as_slice() {
        h.update(v.to_le_bytes());
    }
    h.finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Fixed 3x3 test matrix with entries of magnitude near one, non-negative
/// row sums and no small inverse entries.
pub fn reference_matrix() -> SquareMatrix {
    SquareMatrix::from_rows(&[[1.2, -0.6, -0.4], [-0.6, 1.2, -0.5], [-0.4, -0.5, 1.1]])
        .expect("reference matrix is well formed")
}
