//! Compensated and streaming accumulators.

use crate::linalg::{CovarianceMatrix, SquareMatrix};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn sum(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Single-pass accumulator of the mean and raw second moment of a stream of
/// phase vectors whose length is known up front. Samples are split into
/// contiguous batches so a batch-means standard error can be reported.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    dim: usize,
    expected: u64,
    n_batches: usize,
    seen: u64,
    batch: usize,
    batch_end: u64,
    batch_count: u64,
    batch_mean: Vec<NeumaierSum>,
    batch_moment: Vec<NeumaierSum>,
    // one row of upper-triangle second moments per finished batch
    finished_moments: Vec<Vec<f64>>,
    finished_counts: Vec<u64>,
    finished_means: Vec<Vec<f64>>,
    min_abs: f64,
    max_abs: f64,
}

/// Result of a [`MomentAccumulator`].
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSummary {
    pub n_samples: u64,
    pub mean: Vec<f64>,
    pub second_moment: CovarianceMatrix,
    /// Batch-means standard error of each second-moment entry (zero when
    /// fewer than two batches were filled).
    pub second_moment_stderr: SquareMatrix,
    pub n_batches: usize,
    pub min_abs_phase: f64,
    pub max_abs_phase: f64,
}

#[inline]
fn tri_len(d: usize) -> usize {
    d * (d + 1) / 2
}

impl MomentAccumulator {
    pub fn new(dim: usize, expected: u64, n_batches: usize) -> Self {
        assert!(dim > 0);
        let n_batches = n_batches.max(1).min(expected.max(1) as usize);
        let mut acc = Self {
            dim,
            expected,
            n_batches,
            seen: 0,
            batch: 0,
            batch_end: 0,
            batch_count: 0,
            batch_mean: vec![NeumaierSum::default(); dim],
            batch_moment: vec![NeumaierSum::default(); tri_len(dim)],
            finished_moments: Vec::with_capacity(n_batches),
            finished_counts: Vec::with_capacity(n_batches),
            finished_means: Vec::with_capacity(n_batches),
            min_abs: f64::INFINITY,
            max_abs: 0.0,
        };
        acc.batch_end = acc.boundary(1);
        acc
    }

    fn boundary(&self, b: usize) -> u64 {
        ((self.expected as u128 * b as u128) / self.n_batches as u128) as u64
    }

    #[inline]
    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        let d = self.dim;
        let mut t = 0;
        for i in 0..d {
            let xi = x[i];
            let a = xi.abs();
            if a > self.max_abs {
                self.max_abs = a;
            }
            if a < self.min_abs {
                self.min_abs = a;
            }
            self.batch_mean[i].add(xi);
            for &xj in &x[i..] {
                self.batch_moment[t].add(xi * xj);
                t += 1;
            }
        }
        self.seen += 1;
        self.batch_count += 1;
        if self.seen >= self.batch_end && self.batch + 1 < self.n_batches {
            self.close_batch();
            self.batch += 1;
            self.batch_end = self.boundary(self.batch + 1);
        }
    }

    fn close_batch(&mut self) {
        if self.batch_count == 0 {
            return;
        }
        let n = self.batch_count as f64;
        self.finished_moments
            .push(self.batch_moment.iter().map(|s| s.sum() / n).collect());
        self.finished_means
            .push(self.batch_mean.iter().map(|s| s.sum() / n).collect());
        self.finished_counts.push(self.batch_count);
        self.batch_moment
            .iter_mut()
            .for_each(|s| *s = NeumaierSum::default());
        self.batch_mean
            .iter_mut()
            .for_each(|s| *s = NeumaierSum::default());
        self.batch_count = 0;
    }

    pub fn count(&self) -> u64 {
        self.seen
    }

    pub fn finish(mut self) -> Option<MomentSummary> {
        self.close_batch();
        if self.seen == 0 {
            return None;
        }
        let d = self.dim;
        let total = self.seen as f64;
        let nb = self.finished_moments.len();
        let weighted = |rows: &[Vec<f64>], k: usize| {
            let mut s = NeumaierSum::default();
            for (row, &c) in rows.iter().zip(&self.finished_counts) {
                s.add(row[k] * c as f64);
            }
            s.sum() / total
        };
        let mean: Vec<f64> = (0..d).map(|i| weighted(&self.finished_means, i)).collect();
        let mut moment = SquareMatrix::zeros(d);
        let mut stderr = SquareMatrix::zeros(d);
        let mut t = 0;
        for i in 0..d {
            for j in i..d {
                let m = weighted(&self.finished_moments, t);
                moment[(i, j)] = m;
                moment[(j, i)] = m;
                if nb >= 2 {
                    let bm = self.finished_moments.iter().map(|r| r[t]);
                    let avg = bm.clone().sum::<f64>() / nb as f64;
                    let var = bm.map(|v| (v - avg) * (v - avg)).sum::<f64>() / (nb as f64 - 1.0);
                    let se = (var / nb as f64).sqrt();
                    stderr[(i, j)] = se;
                    stderr[(j, i)] = se;
                }
                t += 1;
            }
        }
        Some(MomentSummary {
            n_samples: self.seen,
            mean,
            second_moment: CovarianceMatrix::from_matrix(moment),
            second_moment_stderr: stderr,
            n_batches: nb,
            min_abs_phase: self.min_abs,
            max_abs_phase: self.max_abs,
        })
    }
}
