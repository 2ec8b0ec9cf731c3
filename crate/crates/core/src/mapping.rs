//! Matrix <-> oscillator-network mapping and the network's energy landscape.
//!
//! A symmetric matrix `A` is encoded as couplings `J_ij = -A_ij` (i != j)
//! plus per-oscillator injection strengths `Ks_i = K * (row sum of A)_i`.
//! Around the in-phase state the energy gradient then linearizes to `K A phi`.

use serde::{Deserialize, Serialize};

use crate::error::{OnnError, Result};
use crate::linalg::{is_spd, SquareMatrix};

/// Relative tolerance used when checking that an input matrix is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Phases of the `d` oscillators in radians, relative to the zero-phase reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhaseState(pub Vec<f64>);

impl PhaseState {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl AsRef<[f64]> for PhaseState {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for PhaseState {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Oscillator network parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OnnConfigDoc", into = "OnnConfigDoc")]
pub struct OnnConfig {
    j: SquareMatrix,
    k: f64,
    ks: Vec<f64>,
    kn: f64,
}

/// Wire form: `{dim, J (row-major), Ks, K, Kn}`.
#[derive(Serialize, Deserialize)]
struct OnnConfigDoc {
    dim: usize,
    #[serde(rename = "J")]
    j: Vec<f64>,
    #[serde(rename = "Ks")]
    ks: Vec<f64>,
    #[serde(rename = "K")]
    k: f64,
    #[serde(rename = "Kn")]
    kn: f64,
}

impl TryFrom<OnnConfigDoc> for OnnConfig {
    type Error = OnnError;

    fn try_from(doc: OnnConfigDoc) -> Result<Self> {
        OnnConfig::new(SquareMatrix::new(doc.dim, doc.j)?, doc.k, doc.ks, doc.kn)
    }
}

impl From<OnnConfig> for OnnConfigDoc {
    fn from(c: OnnConfig) -> Self {
        OnnConfigDoc {
            dim: c.dim(),
            j: c.j.as_slice().to_vec(),
            ks: c.ks,
            k: c.k,
            kn: c.kn,
        }
    }
}

/// Counts of attractive/repulsive couplings and the sign of each injection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignPattern {
    pub positive_couplings: usize,
    pub negative_couplings: usize,
    pub negative_injections: Vec<usize>,
}

impl OnnConfig {
    pub fn new(j: SquareMatrix, k: f64, ks: Vec<f64>, kn: f64) -> Result<Self> {
        let d = j.dim();
        if ks.len() != d {
            return Err(OnnError::DimensionMismatch {
                left: d,
                right: ks.len(),
            });
        }
        if !(k.is_finite() && k > 0.0) {
            return Err(OnnError::InvalidParameter(format!(
                "K must be positive and finite, got {k}"
            )));
        }
        if !(kn.is_finite() && kn > 0.0) {
            return Err(OnnError::NonPositiveNoiseParameter(kn));
        }
        if ks.iter().any(|v| !v.is_finite()) {
            return Err(OnnError::InvalidParameter(
                "non-finite injection strength".into(),
            ));
        }
        if (0..d).any(|i| j[(i, i)] != 0.0) {
            return Err(OnnError::InvalidParameter(
                "coupling matrix must have a zero diagonal".into(),
            ));
        }
        let asym = j.asymmetry();
        if asym > SYMMETRY_TOL * j.max_abs() {
            return Err(OnnError::NotSymmetric { asymmetry: asym });
        }
        Ok(Self { j, k, ks, kn })
    }

    pub fn dim(&self) -> usize {
        self.j.dim()
    }

    pub fn coupling(&self) -> &SquareMatrix {
        &self.j
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn injection(&self) -> &[f64] {
        &self.ks
    }

    pub fn kn(&self) -> f64 {
        self.kn
    }

    pub fn with_kn(&self, kn: f64) -> Result<Self> {
        Self::new(self.j.clone(), self.k, self.ks.clone(), kn)
    }

    /// Injections with negative strength; these flip the single-well shape
    /// along that oscillator and are reported rather than rejected.
    pub fn negative_injections(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.ks[i] < 0.0).collect()
    }

    pub fn sign_pattern(&self) -> SignPattern {
        let d = self.dim();
        let mut pos = 0;
        let mut neg = 0;
        for i in 0..d {
            for j in (i + 1)..d {
                let v = self.j[(i, j)];
                if v > 0.0 {
                    pos += 1;
                } else if v < 0.0 {
                    neg += 1;
                }
            }
        }
        SignPattern {
            positive_couplings: pos,
            negative_couplings: neg,
            negative_injections: self.negative_injections(),
        }
    }
}

fn check_phase(config: &OnnConfig, phi: &PhaseState) {
    assert_eq!(
        config.dim(),
        phi.dim(),
        "phase vector dimension does not match the network"
    );
}

/// Encodes a symmetric `A` as couplings and injections.
pub fn map_matrix_to_onn(a: &SquareMatrix, k: f64, kn: f64) -> Result<OnnConfig> {
    let report = is_spd(a, SYMMETRY_TOL);
    if !report.symmetric {
        return Err(OnnError::NotSymmetric {
            asymmetry: report.asymmetry,
        });
    }
    let d = a.dim();
    let mut j = SquareMatrix::zeros(d);
    let mut ks = vec![0.0; d];
    for i in 0..d {
        let mut off = 0.0;
        for c in 0..d {
            if c != i {
                j[(i, c)] = -a[(i, c)];
                off += a[(i, c)];
            }
        }
        ks[i] = k * (a[(i, i)] + off);
    }
    OnnConfig::new(j, k, ks, kn)
}

/// Recovers `A` from a network: `A_ij = -J_ij`, `A_ii = sum_{j != i} J_ij + Ks_i / K`.
pub fn map_onn_to_matrix(config: &OnnConfig) -> SquareMatrix {
    let d = config.dim();
    let j = &config.j;
    let mut a = SquareMatrix::zeros(d);
    for i in 0..d {
        let mut off = 0.0;
        for c in 0..d {
            if c != i {
                a[(i, c)] = -j[(i, c)];
                off += j[(i, c)];
            }
        }
        a[(i, i)] = off + config.ks[i] / config.k;
    }
    a
}

/// Coupling strength for a matrix whose largest entry magnitude is `scale`.
pub fn choose_k(scale: f64) -> Result<f64> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(OnnError::NonPositiveScale(scale));
    }
    Ok(1e3 / scale)
}

/// Lyapunov energy `E = -(K/2) sum_ij J_ij cos(phi_i - phi_j) - sum_i Ks_i cos(phi_i)`.
pub fn onn_energy(config: &OnnConfig, phi: &PhaseState) -> f64 {
    check_phase(config, phi);
    energy_at(config, &phi.0)
}

pub(crate) fn energy_at(config: &OnnConfig, phi: &[f64]) -> f64 {
    let d = config.dim();
    let j = &config.j;
    let mut pair = 0.0;
    for a in 0..d {
        for b in (a + 1)..d {
            let w = j[(a, b)];
            if w != 0.0 {
                pair += w * (phi[a] - phi[b]).cos();
            }
        }
    }
    // the double sum counts every unordered pair twice; cancels the 1/2
    let inj: f64 = config.ks.iter().zip(phi).map(|(s, p)| s * p.cos()).sum();
    -config.k * pair - inj
}

/// `dE/dphi_i = K sum_j J_ij sin(phi_i - phi_j) + Ks_i sin(phi_i)`.
pub fn onn_energy_gradient(config: &OnnConfig, phi: &PhaseState) -> Vec<f64> {
    check_phase(config, phi);
    let mut g = vec![0.0; config.dim()];
    gradient_into(config, &phi.0, &mut g);
    g
}

fn gradient_into(config: &OnnConfig, phi: &[f64], out: &mut [f64]) {
    let d = config.dim();
    let j = &config.j;
    for (i, o) in out.iter_mut().enumerate() {
        *o = config.ks[i] * phi[i].sin();
    }
    for a in 0..d {
        for b in (a + 1)..d {
            let w = j[(a, b)];
            if w != 0.0 {
                let s = config.k * w * (phi[a] - phi[b]).sin();
                out[a] += s;
                out[b] -= s;
            }
        }
    }
}

/// Deterministic part of the injected Kuramoto model; equals `-grad E`.
pub fn kuramoto_drift(config: &OnnConfig, phi: &PhaseState) -> Vec<f64> {
    let mut g = onn_energy_gradient(config, phi);
    g.iter_mut().for_each(|v| *v = -*v);
    g
}

/// Small-phase drift `-K A phi`.
pub fn linearized_drift(config: &OnnConfig, phi: &PhaseState) -> Vec<f64> {
    check_phase(config, phi);
    let a = map_onn_to_matrix(config);
    a.matvec(&phi.0)
        .into_iter()
        .map(|v| -config.k * v)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sq(rows: &[&[f64]]) -> SquareMatrix {
        SquareMatrix::from_rows(rows).unwrap()
    }

    fn pair_config(k: f64, ks: f64) -> OnnConfig {
        OnnConfig::new(sq(&[&[0.0, 1.0], &[1.0, 0.0]]), k, vec![ks, ks], 1.0).unwrap()
    }

    #[test]
    fn identity_maps_to_pure_injection() {
        let c = map_matrix_to_onn(&SquareMatrix::identity(3), 1000.0, 1e4).unwrap();
        assert_eq!(c.coupling(), &SquareMatrix::zeros(3));
        assert_eq!(c.injection(), &[1000.0, 1000.0, 1000.0]);
    }

    #[test]
    fn tridiagonal_2x2_mapping() {
        let a = sq(&[&[2.0, -1.0], &[-1.0, 2.0]]);
        let c = map_matrix_to_onn(&a, 1000.0, 1e4).unwrap();
        assert_eq!(c.coupling(), &sq(&[&[0.0, 1.0], &[1.0, 0.0]]));
        assert_eq!(c.injection(), &[1000.0, 1000.0]);
        assert_eq!(map_onn_to_matrix(&c), a);
    }

    #[test]
    fn diagonal_reconstruction_3x3() {
        let j = sq(&[&[0.0, 0.3, 0.7], &[0.3, 0.0, 0.2], &[0.7, 0.2, 0.0]]);
        let c = OnnConfig::new(j, 50.0, vec![10.0, 20.0, 30.0], 1.0).unwrap();
        let a = map_onn_to_matrix(&c);
        assert_relative_eq!(a[(0, 0)], 0.3 + 0.7 + 10.0 / 50.0, epsilon = 1e-15);
        assert_relative_eq!(a[(1, 1)], 0.3 + 0.2 + 20.0 / 50.0, epsilon = 1e-15);
        assert_eq!(a[(0, 2)], -0.7);
    }

    #[test]
    fn unit_injection_is_identity() {
        let c = OnnConfig::new(SquareMatrix::zeros(3), 7.0, vec![7.0; 3], 1.0).unwrap();
        assert_eq!(map_onn_to_matrix(&c), SquareMatrix::identity(3));
    }

    #[test]
    fn asymmetric_input_rejected() {
        let a = sq(&[&[2.0, -1.0], &[-0.9, 2.0]]);
        assert!(matches!(
            map_matrix_to_onn(&a, 1.0, 1.0),
            Err(OnnError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn negative_row_sum_is_flagged() {
        let a = sq(&[&[1.0, -2.0], &[-2.0, 5.0]]);
        let c = map_matrix_to_onn(&a, 10.0, 1.0).unwrap();
        assert_eq!(c.negative_injections(), vec![0]);
        let p = c.sign_pattern();
        assert_eq!(p.positive_couplings, 1);
        assert_eq!(p.negative_couplings, 0);
    }

    #[test]
    fn config_validation() {
        let j = sq(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!(OnnConfig::new(j.clone(), 0.0, vec![1.0, 1.0], 1.0).is_err());
        assert!(matches!(
            OnnConfig::new(j.clone(), 1.0, vec![1.0, 1.0], -1.0),
            Err(OnnError::NonPositiveNoiseParameter(_))
        ));
        assert!(OnnConfig::new(j, 1.0, vec![1.0], 1.0).is_err());
        assert!(OnnConfig::new(SquareMatrix::identity(2), 1.0, vec![1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn config_json_roundtrip() {
        let c = pair_config(3.0, 2.0);
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(
            s,
            r#"{"dim":2,"J":[0.0,1.0,1.0,0.0],"Ks":[2.0,2.0],"K":3.0,"Kn":1.0}"#
        );
        assert_eq!(serde_json::from_str::<OnnConfig>(&s).unwrap(), c);
    }

    #[test]
    fn choose_k_rule() {
        assert_eq!(choose_k(1.0).unwrap(), 1000.0);
        assert_eq!(choose_k(10.0).unwrap(), 100.0);
        assert_relative_eq!(choose_k(0.01).unwrap(), 1e5, max_relative = 1e-15);
        assert!(matches!(choose_k(0.0), Err(OnnError::NonPositiveScale(_))));
        assert!(choose_k(-1.0).is_err());
    }

    #[test]
    fn energy_examples() {
        let c = pair_config(1.0, 1.0);
        assert_eq!(onn_energy(&c, &PhaseState::zeros(2)), -3.0);
        let e = onn_energy(&c, &PhaseState(vec![std::f64::consts::PI, 0.0]));
        assert_relative_eq!(e, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn gradient_examples() {
        let c = pair_config(1.0, 1.0);
        assert_eq!(
            onn_energy_gradient(&c, &PhaseState::zeros(2)),
            vec![0.0, 0.0]
        );
        let c1 = OnnConfig::new(SquareMatrix::zeros(1), 1.0, vec![2.0], 1.0).unwrap();
        let g = onn_energy_gradient(&c1, &PhaseState(vec![0.1]));
        assert_relative_eq!(g[0], 2.0 * 0.1f64.sin(), epsilon = 1e-16);
        assert_relative_eq!(g[0], 0.19967, epsilon = 1e-5);
    }

    #[test]
    fn drift_examples() {
        let c = pair_config(1.0, 0.0);
        let d = kuramoto_drift(&c, &PhaseState(vec![0.2, 0.0]));
        assert_eq!(d, vec![-(0.2f64.sin()), 0.2f64.sin()]);
        assert_eq!(kuramoto_drift(&c, &PhaseState::zeros(2)), vec![-0.0, -0.0]);
    }

    #[test]
    fn linearized_scalar() {
        let c = map_matrix_to_onn(&sq(&[&[2.0]]), 1000.0, 1.0).unwrap();
        let d = linearized_drift(&c, &PhaseState(vec![0.001]));
        assert_relative_eq!(d[0], -2.0, epsilon = 1e-12);
        assert_eq!(linearized_drift(&c, &PhaseState(vec![0.0])), vec![-0.0]);
    }

    #[test]
    fn linearization_remainder_is_cubic() {
        let a = sq(&[&[2.0, -0.5, 0.3], &[-0.5, 1.5, -0.4], &[0.3, -0.4, 1.8]]);
        let k = 100.0;
        let c = map_matrix_to_onn(&a, k, 1.0).unwrap();
        // |sin x - x| <= |x|^3/6; |phi_i - phi_j| <= 2|phi|_inf
        let bound_c: f64 = (0..3)
            .map(|i| {
                let inj = c.injection()[i].abs() / k;
                let cpl: f64 = (0..3).map(|j| c.coupling()[(i, j)].abs() * 8.0).sum();
                (inj + cpl) / 6.0
            })
            .fold(0.0, f64::max);
        for &amp in &[0.1, 0.03, 0.01, 0.001] {
            let phi = PhaseState(vec![amp, -0.6 * amp, 0.3 * amp]);
            let full = kuramoto_drift(&c, &phi);
            let lin = linearized_drift(&c, &phi);
            let diff = full
                .iter()
                .zip(&lin)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(diff <= k * bound_c * amp.powi(3), "amp {amp}: {diff}");
        }
    }

    #[test]
    fn energy_periodicity() {
        let a = sq(&[&[2.0, -0.5], &[-0.5, 1.0]]);
        let c = map_matrix_to_onn(&a, 10.0, 1.0).unwrap();
        let phi = PhaseState(vec![0.4, -1.1]);
        let e0 = onn_energy(&c, &phi);
        for i in 0..2 {
            let mut p = phi.clone();
            p.0[i] += 2.0 * std::f64::consts::PI;
            assert!((onn_energy(&c, &p) - e0).abs() <= 1e-9);
        }
    }
}
