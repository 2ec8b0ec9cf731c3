//! Dense small-matrix linear algebra: the exact inverse used as the ground
//! truth, the Lyapunov solver for stationary OU covariances, the raw second
//! moment estimator and the entrywise relative error metric.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{OnnError, Result};
use crate::stats::NeumaierSum;

/// Largest dimension accepted by the Kronecker-form Lyapunov solver.
pub const MAX_LYAPUNOV_DIM: usize = 32;

/// Dense real `dim x dim` matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct SquareMatrix {
    dim: usize,
    entries: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    dim: usize,
    entries: Vec<Vec<f64>>,
}

impl TryFrom<RawMatrix> for SquareMatrix {
    type Error = OnnError;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        if raw.entries.len() != raw.dim || raw.entries.iter().any(|r| r.len() != raw.dim) {
            return Err(OnnError::ShapeMismatch {
                dim: raw.dim,
                expected: raw.dim * raw.dim,
                got: raw.entries.iter().map(Vec::len).sum(),
            });
        }
        SquareMatrix::new(raw.dim, raw.entries.into_iter().flatten().collect())
    }
}

impl From<SquareMatrix> for RawMatrix {
    fn from(m: SquareMatrix) -> Self {
        RawMatrix {
            dim: m.dim,
            entries: m.rows(),
        }
    }
}

impl SquareMatrix {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(OnnError::EmptyMatrix);
        }
        if entries.len() != dim * dim {
            return Err(OnnError::ShapeMismatch {
                dim,
                expected: dim * dim,
                got: entries.len(),
            });
        }
        if let Some(pos) = entries.iter().position(|v| !v.is_finite()) {
            return Err(OnnError::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self { dim, entries })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(OnnError::ShapeMismatch {
                    dim,
                    expected: dim * dim,
                    got: r.len() * dim,
                });
            }
            entries.extend_from_slice(r);
        }
        Self::new(dim, entries)
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "zero-dimensional matrix");
        Self {
            dim,
            entries: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major entries.
    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let d = self.dim;
        let mut t = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a + b)
            .collect();
        Self {
            dim: self.dim,
            entries,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a - b)
            .collect();
        Self {
            dim: self.dim,
            entries,
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let d = self.dim;
        let mut out = Self::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out.entries[i * d + j] += a * other.entries[k * d + j];
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.dim, x.len());
        (0..self.dim)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Induced infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `max |a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in (i + 1)..d {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn symmetrized(&self) -> Self {
        let d = self.dim;
        let mut s = self.clone();
        for i in 0..d {
            for j in (i + 1)..d {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }

    /// Applies the same permutation to rows and columns: `out[i][j] = self[p[i]][p[j]]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let d = self.dim;
        assert_eq!(perm.len(), d);
        let mut out = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                out[(i, j)] = self[(perm[i], perm[j])];
            }
        }
        out
    }

    /// Parses the plain-text format: a line with `d`, then `d` rows of `d`
    /// whitespace-separated reals.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| OnnError::Parse("empty matrix file".into()))?;
        let dim: usize = header
            .parse()
            .map_err(|_| OnnError::Parse(format!("bad dimension line {header:?}")))?;
        let mut entries = Vec::with_capacity(dim * dim);
        for row in 0..dim {
            let line = lines
                .next()
                .ok_or_else(|| OnnError::Parse(format!("missing row {row}")))?;
            let before = entries.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| OnnError::Parse(format!("bad number {tok:?} in row {row}")))?;
                entries.push(v);
            }
            if entries.len() - before != dim {
                return Err(OnnError::Parse(format!(
                    "row {row} has {} entries, expected {dim}",
                    entries.len() - before
                )));
            }
        }
        if lines.next().is_some() {
            return Err(OnnError::Parse("trailing data after matrix rows".into()));
        }
        Self::new(dim, entries)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.dim);
        for i in 0..self.dim {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    pub(crate) fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.dim, self.dim, &self.entries)
    }
}

impl Index<(usize, usize)> for SquareMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.entries[i * self.dim + j]
    }
}

impl IndexMut<(usize, usize)> for SquareMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.entries[i * self.dim + j]
    }
}

impl fmt::Display for SquareMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.dim {
            let row: Vec<String> = self.row(i).iter().map(|v| format!("{v:>12.6e}")).collect();
            writeln!(f, "[{}]", row.join(", "))?;
        }
        Ok(())
    }
}

/// Symmetric covariance (or second-moment) matrix of phases, in rad².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CovarianceMatrix(SquareMatrix);

impl CovarianceMatrix {
    /// Wraps `m` after forcing exact symmetry.
    pub fn from_matrix(m: SquareMatrix) -> Self {
        Self(m.symmetrized())
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> SquareMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }
}

impl Index<(usize, usize)> for CovarianceMatrix {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpdReport {
    pub symmetric: bool,
    pub positive_definite: bool,
    /// Smallest Cholesky pivot of the symmetrized matrix (`-inf` if elimination broke early).
    pub min_pivot: f64,
    pub asymmetry: f64,
}

/// Symmetry test relative to `tol * max|a_ij|`, then a Cholesky pass on `(A + A^T)/2`.
pub fn is_spd(a: &SquareMatrix, tol: f64) -> SpdReport {
    let asymmetry = a.asymmetry();
    let symmetric = asymmetry <= tol * a.max_abs();
    let s = a.symmetrized();
    let d = s.dim();
    let mut l = SquareMatrix::zeros(d);
    let mut min_pivot = f64::INFINITY;
    let mut chol_ok = true;
    'outer: for j in 0..d {
        let mut pivot = s[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        min_pivot = min_pivot.min(pivot);
        if !(pivot > 0.0) {
            chol_ok = false;
            break 'outer;
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..d {
            let mut v = s[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    SpdReport {
        symmetric,
        positive_definite: symmetric && chol_ok,
        min_pivot,
        asymmetry,
    }
}

/// Fails unless `a` passes [`is_spd`].
pub fn require_spd(a: &SquareMatrix, tol: f64) -> Result<SpdReport> {
    let report = is_spd(a, tol);
    if !report.symmetric {
        return Err(OnnError::NotSymmetric {
            asymmetry: report.asymmetry,
        });
    }
    if !report.positive_definite {
        return Err(OnnError::NotPositiveDefinite {
            min_pivot: report.min_pivot,
        });
    }
    Ok(report)
}

const PIVOT_FLOOR: f64 = 1e-300;

/// Gauss-Jordan elimination with partial pivoting.
pub fn invert_exact(a: &SquareMatrix) -> Result<SquareMatrix> {
    let d = a.dim();
    let w = 2 * d;
    let mut aug = vec![0.0; d * w];
    for i in 0..d {
        aug[i * w..i * w + d].copy_from_slice(a.row(i));
        aug[i * w + d + i] = 1.0;
    }
    for col in 0..d {
        let (p, pmag) =
            (col..d)
                .map(|r| (r, aug[r * w + col].abs()))
                .fold(
                    (col, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if pmag < PIVOT_FLOOR {
            return Err(OnnError::SingularMatrix { col, pivot: pmag });
        }
        if p != col {
            for k in 0..w {
                aug.swap(p * w + k, col * w + k);
            }
        }
        let inv = 1.0 / aug[col * w + col];
        for k in 0..w {
            aug[col * w + k] *= inv;
        }
        for r in 0..d {
            if r == col {
                continue;
            }
            let f = aug[r * w + col];
            if f == 0.0 {
                continue;
            }
            for k in 0..w {
                aug[r * w + k] -= f * aug[col * w + k];
            }
        }
    }
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        out.extend_from_slice(&aug[i * w + d..(i + 1) * w]);
    }
    SquareMatrix::new(d, out)
}

/// Solves `m x = rhs` in place by Gaussian elimination with partial pivoting.
/// Returns `None` when a pivot falls below `floor`.
fn solve_dense(n: usize, m: &mut [f64], rhs: &mut [f64], floor: f64) -> Option<()> {
    for col in 0..n {
        let mut p = col;
        let mut best = m[col * n + col].abs();
        for r in (col + 1)..n {
            let v = m[r * n + col].abs();
            if v > best {
                best = v;
                p = r;
            }
        }
        if best < floor {
            return None;
        }
        if p != col {
            for k in 0..n {
                m.swap(p * n + k, col * n + k);
            }
            rhs.swap(p, col);
        }
        let piv = m[col * n + col];
        for r in (col + 1)..n {
            let f = m[r * n + col] / piv;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[r * n + k] -= f * m[col * n + k];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    for col in (0..n).rev() {
        let mut v = rhs[col];
        for k in (col + 1)..n {
            v -= m[col * n + k] * rhs[k];
        }
        rhs[col] = v / m[col * n + col];
    }
    Some(())
}

/// Solves the continuous Lyapunov equation `A S + S A^T = B` through the
/// Kronecker form `(I (x) A + A (x) I) vec(S) = vec(B)`.
pub fn solve_stationary_covariance(
    a_script: &SquareMatrix,
    b: &SquareMatrix,
) -> Result<CovarianceMatrix> {
    let d = a_script.dim();
    if b.dim() != d {
        return Err(OnnError::DimensionMismatch {
            left: d,
            right: b.dim(),
        });
    }
    if d > MAX_LYAPUNOV_DIM {
        return Err(OnnError::InvalidParameter(format!(
            "Lyapunov solver supports d <= {MAX_LYAPUNOV_DIM}, got {d}"
        )));
    }
    let n = d * d;
    let mut m = vec![0.0; n * n];
    for i in 0..d {
        for j in 0..d {
            let row = i * d + j;
            for k in 0..d {
                // (A S)_ij = sum_k A_ik S_kj
                m[row * n + k * d + j] += a_script[(i, k)];
                // (S A^T)_ij = sum_k S_ik A_jk
                m[row * n + i * d + k] += a_script[(j, k)];
            }
        }
    }
    let mut rhs = b.as_slice().to_vec();
    let floor = 1e-14 * a_script.norm_inf().max(f64::MIN_POSITIVE);
    solve_dense(n, &mut m, &mut rhs, floor).ok_or(OnnError::UnstableSystem)?;
    let sigma = SquareMatrix::new(d, rhs).map_err(|_| OnnError::UnstableSystem)?;
    Ok(CovarianceMatrix::from_matrix(sigma))
}

/// Raw second moment `E[x x^T]` of a sample together with its mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMoment {
    pub moment: CovarianceMatrix,
    pub mean: Vec<f64>,
    pub n: usize,
}

/// `(1/N) sum_k x_k x_k^T` without mean subtraction; the sample mean is
/// returned alongside as a diagnostic.
pub fn sample_second_moment<S: AsRef<[f64]>>(samples: &[S]) -> Result<SecondMoment> {
    if samples.len() < 2 {
        return Err(OnnError::EmptySample(samples.len()));
    }
    let d = samples[0].as_ref().len();
    if d == 0 {
        return Err(OnnError::EmptyMatrix);
    }
    let mut mean = vec![NeumaierSum::default(); d];
    let mut moment = vec![NeumaierSum::default(); d * d];
    for s in samples {
        let x = s.as_ref();
        if x.len() != d {
            return Err(OnnError::DimensionMismatch {
                left: d,
                right: x.len(),
            });
        }
        for i in 0..d {
            mean[i].add(x[i]);
            for j in i..d {
                moment[i * d + j].add(x[i] * x[j]);
            }
        }
    }
    let n = samples.len() as f64;
    let mut m = SquareMatrix::zeros(d);
    for i in 0..d {
        for j in i..d {
            let v = moment[i * d + j].sum() / n;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(SecondMoment {
        moment: CovarianceMatrix::from_matrix(m),
        mean: mean.iter().map(|s| s.sum() / n).collect(),
        n: samples.len(),
    })
}

const ZERO_REFERENCE_GUARD: f64 = 1e-14;

/// Mean absolute percent error over all `d^2` entries.
pub fn relative_error(truth: &SquareMatrix, estimate: &SquareMatrix) -> Result<f64> {
    let (err, skipped) = relative_error_inner(truth, estimate, false)?;
    debug_assert_eq!(skipped, 0);
    Ok(err)
}

/// Like [`relative_error`] but entries with a (near-)zero reference are left
/// out of the mean. Returns the error and the number of skipped entries.
pub fn relative_error_skipping(
    truth: &SquareMatrix,
    estimate: &SquareMatrix,
) -> Result<(f64, usize)> {
    relative_error_inner(truth, estimate, true)
}

fn relative_error_inner(
    truth: &SquareMatrix,
    estimate: &SquareMatrix,
    skip: bool,
) -> Result<(f64, usize)> {
    if truth.dim() != estimate.dim() {
        return Err(OnnError::DimensionMismatch {
            left: truth.dim(),
            right: estimate.dim(),
        });
    }
    let d = truth.dim();
    let floor = ZERO_REFERENCE_GUARD * truth.norm_inf();
    let mut total = NeumaierSum::default();
    let mut used = 0usize;
    let mut skipped = 0usize;
    for i in 0..d {
        for j in 0..d {
            let t = truth[(i, j)];
            if t.abs() < floor || t == 0.0 {
                if skip {
                    skipped += 1;
                    continue;
                }
                return Err(OnnError::ZeroReferenceEntry {
                    row: i,
                    col: j,
                    value: t,
                });
            }
            total.add(((t - estimate[(i, j)]) / t).abs() * 100.0);
            used += 1;
        }
    }
    if used == 0 {
        return Err(OnnError::ZeroReferenceEntry {
            row: 0,
            col: 0,
            value: truth[(0, 0)],
        });
    }
    Ok((total.sum() / used as f64, skipped))
}

/// Eigenvalues of the symmetric part of `a`, ascending.
pub fn symmetric_eigenvalues(a: &SquareMatrix) -> Vec<f64> {
    let eig = nalgebra::SymmetricEigen::new(a.symmetrized().to_nalgebra());
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}
