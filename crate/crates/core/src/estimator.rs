//! Per-partition estimation state and its constant-time incremental updates,
//! plus the fusion step that assembles partition estimates into the full
//! shift matrix.
//!
//! The uncertainty score of a partition is `1 - sum_j mu_j^2`, where `mu` is
//! its predicted-label distribution: zero for a deterministic prediction,
//! maximal (`1 - 1/L`) for a uniform one. The unbiased sample estimate over
//! `n >= 2` draws counts label collisions across ordered pairs:
//!
//! ```text
//!   score_hat = 1 - (1 / (n(n-1))) * sum_{s != t} [label_s == label_t]
//!             = sum_j H_j (n - H_j) / (n (n - 1))
//! ```
//!
//! Recomputing that per sample would cost `O(n)` each time; keeping the
//! per-label counts `H` as sufficient statistics lets [`PartitionStats::observe`]
//! maintain it in constant time.

use crate::error::{Error, Result};
use crate::types::{
    ConfusionMatrix, Dimensions, LabelDistribution, PartitionId, PartitionWeights, ShiftMatrix,
};

/// Uncertainty score of an exact predicted-label distribution:
/// `1 - sum_j mu_j^2`, in `[0, 1 - 1/L]`.
pub fn score_from_distribution(mu: &LabelDistribution) -> f64 {
    1.0 - mu.probs().iter().map(|v| v * v).sum::<f64>()
}

/// Batch uncertainty-score estimate from a sequence of predicted labels.
/// Needs at least two labels.
pub fn batch_score(labels: &[usize]) -> Result<f64> {
    let n = labels.len() as u64;
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let max = labels.iter().copied().max().unwrap();
    let mut counts = vec![0u64; max + 1];
    for &label in labels {
        counts[label] += 1;
    }
    Ok(score_from_counts(&counts, n))
}

fn score_from_counts(h: &[u64], n: u64) -> f64 {
    let pairs: f64 = h.iter().map(|&c| (c * (n - c)) as f64).sum();
    pairs / (n as f64 * (n - 1) as f64)
}

/// Row-weighted generalization of the batch score:
/// `sum_j w_j^2 * H_j (n - H_j) / (n (n - 1))`. All-ones weights recover
/// [`batch_score`].
pub fn weighted_score_from_counts(h: &[u64], n: u64, row_weights: &[f64]) -> Result<f64> {
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    if h.len() != row_weights.len() {
        return Err(Error::Dimension(format!(
            "{} counts vs {} weights",
            h.len(),
            row_weights.len()
        )));
    }
    if h.iter().sum::<u64>() != n {
        return Err(Error::Construction(format!(
            "counts sum to {}, expected {n}",
            h.iter().sum::<u64>()
        )));
    }
    let denom = n as f64 * (n - 1) as f64;
    Ok(h.iter()
        .zip(row_weights)
        .map(|(&c, &w)| w * w * (c * (n - c)) as f64 / denom)
        .sum())
}

/// Running estimation state for one partition: sample count, incremental
/// predicted-label distribution, incremental uncertainty score, and the
/// per-label counts that make the score update constant time.
///
/// The distribution is maintained by the running-mean recurrence rather than
/// recomputed as `H/n`; the equality of the two is a test invariant.
#[derive(Debug, Clone)]
pub struct PartitionStats {
    n: u64,
    mu_hat: Vec<f64>,
    sigma2_hat: f64,
    h: Vec<u64>,
}

impl PartitionStats {
    pub fn new(labels: usize) -> Self {
        Self {
            n: 0,
            mu_hat: vec![0.0; labels],
            sigma2_hat: 0.0,
            h: vec![0; labels],
        }
    }

    /// Fold in one predicted label. Constant time and space.
    ///
    /// Update order matters: the score update reads the label count from
    /// before this observation, and the count is incremented last.
    pub fn observe(&mut self, label: usize) -> Result<()> {
        let labels = self.mu_hat.len();
        if label >= labels {
            return Err(Error::LabelOutOfRange { label, labels });
        }
        self.n += 1;
        let n = self.n as f64;
        for (j, m) in self.mu_hat.iter_mut().enumerate() {
            let indicator = if j == label { 1.0 } else { 0.0 };
            *m += (indicator - *m) / n;
        }
        if self.n < 2 {
            // A single sample carries no collision information.
            self.sigma2_hat = 0.0;
        } else {
            let prior_count = self.h[label] as f64;
            self.sigma2_hat += (2.0 / n) * (1.0 - prior_count / (n - 1.0) - self.sigma2_hat);
        }
        self.h[label] += 1;
        Ok(())
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn mu_hat(&self) -> &[f64] {
        &self.mu_hat
    }

    /// Estimated uncertainty score; zero until two samples have been seen.
    pub fn sigma2(&self) -> f64 {
        self.sigma2_hat
    }

    /// `sqrt` of the score, the quantity that enters allocation rules.
    /// Clamped at zero: incremental rounding can leave a tiny negative value.
    pub fn sigma(&self) -> f64 {
        self.sigma2_hat.max(0.0).sqrt()
    }

    pub fn label_counts(&self) -> &[u64] {
        &self.h
    }
}

/// One [`PartitionStats`] per grid cell, owned by a single sampler run.
#[derive(Debug, Clone)]
pub struct StatsGrid {
    dims: Dimensions,
    cells: Vec<PartitionStats>,
}

impl StatsGrid {
    pub fn new(dims: Dimensions) -> Self {
        let cells = (0..dims.partition_count())
            .map(|_| PartitionStats::new(dims.labels()))
            .collect();
        Self { dims, cells }
    }

    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    pub fn cell(&self, id: PartitionId) -> &PartitionStats {
        &self.cells[index_of(self.dims, id)]
    }

    pub fn cell_mut(&mut self, id: PartitionId) -> &mut PartitionStats {
        &mut self.cells[index_of(self.dims, id)]
    }

    pub fn observe(&mut self, id: PartitionId, label: usize) -> Result<()> {
        self.cell_mut(id).observe(label)
    }
}

fn index_of(dims: Dimensions, id: PartitionId) -> usize {
    id.label * dims.levels() + id.level
}

/// Fuse per-partition estimates into the estimated shift matrix:
/// `shift[i][j] = sum_k p[i,k] * mu_hat[i,k][j] - old[i][j]`.
///
/// Every positive-mass partition must have been sampled at least once;
/// otherwise the estimate would silently treat it as predicting nothing.
pub fn fuse_shift(
    stats: &StatsGrid,
    p: &PartitionWeights,
    old: &ConfusionMatrix,
) -> Result<ShiftMatrix> {
    for cell in p.active() {
        if stats.cell(cell).n() == 0 {
            return Err(Error::IncompleteEstimate(cell));
        }
    }
    Ok(fuse_with(stats, p, old, |cell| {
        stats.cell(cell).mu_hat().to_vec()
    }))
}

/// Fusion for non-adaptive baselines that may leave partitions unsampled:
/// empty cells fall back to the conditional distribution implied by the old
/// confusion matrix (its row-normalized form), the best zero-sample prior.
/// Returns the cells that used the fallback so results can be flagged.
pub fn fuse_shift_with_fallback(
    stats: &StatsGrid,
    p: &PartitionWeights,
    old: &ConfusionMatrix,
) -> (ShiftMatrix, Vec<PartitionId>) {
    let fallback: Vec<PartitionId> = p.active().filter(|&c| stats.cell(c).n() == 0).collect();
    let shift = fuse_with(stats, p, old, |cell| {
        if stats.cell(cell).n() > 0 {
            stats.cell(cell).mu_hat().to_vec()
        } else {
            old.conditional_row(cell.label)
        }
    });
    (shift, fallback)
}

fn fuse_with(
    stats: &StatsGrid,
    p: &PartitionWeights,
    old: &ConfusionMatrix,
    mu_of: impl Fn(PartitionId) -> Vec<f64>,
) -> ShiftMatrix {
    let dims = stats.dims();
    let labels = dims.labels();
    let mut entries = vec![0.0; labels * labels];
    for i in 0..labels {
        for k in 0..dims.levels() {
            let cell = PartitionId::new(i, k);
            let mass = p.mass(cell);
            if mass == 0.0 {
                continue;
            }
            let mu = mu_of(cell);
            for j in 0..labels {
                entries[i * labels + j] += mass * mu[j];
            }
        }
        for j in 0..labels {
            entries[i * labels + j] -= old.get(i, j);
        }
    }
    shift_from_entries(labels, entries)
}

fn shift_from_entries(labels: usize, entries: Vec<f64>) -> ShiftMatrix {
    // Estimates live in [-1, 1] by construction (both terms are sub-unit
    // probability masses), so this cannot fail.
    ShiftMatrix::from_rows(entries.chunks(labels).map(|c| c.to_vec()).collect())
        .expect("fused shift entries are bounded")
}
