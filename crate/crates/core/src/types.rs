//! Domain types: label/difficulty dimensions, joint-probability matrices,
//! partition weights, and sample allocations.
//!
//! Matrices are dense row-major `f64`; the label and difficulty counts stay
//! small in practice, so nothing here is sparse. Labels and difficulty levels
//! are 0-based indices everywhere in memory. File formats and display are
//! 1-based.

use std::fmt;

use crate::error::{Error, Result};

/// Tolerance for "sums to one" checks at construction time. Violations are
/// construction errors, never silent renormalizations: a bad sum almost
/// always means an ingestion bug upstream.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// Label count `L` and difficulty-level count `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dimensions {
    labels: usize,
    levels: usize,
}

impl Dimensions {
    pub fn new(labels: usize, levels: usize) -> Result<Self> {
        if labels < 2 {
            return Err(Error::Construction(format!(
                "need at least 2 labels, got {labels}"
            )));
        }
        if levels < 1 {
            return Err(Error::Construction("need at least 1 difficulty level".into()));
        }
        Ok(Self { labels, levels })
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Total partition count `L * K`.
    pub fn partition_count(&self) -> usize {
        self.labels * self.levels
    }

    /// All grid cells in lexicographic `(label, level)` order.
    pub fn cells(&self) -> impl Iterator<Item = PartitionId> + '_ {
        let levels = self.levels;
        (0..self.labels).flat_map(move |label| {
            (0..levels).map(move |level| PartitionId { label, level })
        })
    }

    pub(crate) fn cell_index(&self, cell: PartitionId) -> usize {
        debug_assert!(cell.label < self.labels && cell.level < self.levels);
        cell.label * self.levels + cell.level
    }
}

/// One stratum of the dataset: the items with a given true label and
/// difficulty level. Ordering is lexicographic, which is what every
/// deterministic tie-break in the samplers relies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PartitionId {
    pub label: usize,
    pub level: usize,
}

impl PartitionId {
    pub fn new(label: usize, level: usize) -> Self {
        Self { label, level }
    }
}

impl fmt::Display for PartitionId {
    /// 1-based, matching file formats.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.label + 1, self.level + 1)
    }
}

fn check_square(rows: &[Vec<f64>]) -> Result<usize> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Construction(format!("need at least 2 rows, got {n}")));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Dimension(format!(
                "row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
    }
    Ok(n)
}

/// Joint probability matrix of a classifier: entry `(i, j)` is the
/// probability of true label `i` and predicted label `j`. Its trace is the
/// overall accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    labels: usize,
    entries: Vec<f64>,
}

impl ConfusionMatrix {
    /// Build from rows, validating that every entry is a probability and the
    /// matrix represents a full joint distribution (sums to one).
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let labels = check_square(&rows)?;
        let mut sum = 0.0;
        for row in &rows {
            for &v in row {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Construction(format!(
                        "confusion entry {v} outside [0,1]"
                    )));
                }
                sum += v;
            }
        }
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Construction(format!(
                "confusion matrix sums to {sum}, expected 1 within {PROB_SUM_TOL:e}"
            )));
        }
        Ok(Self {
            labels,
            entries: rows.into_iter().flatten().collect(),
        })
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.labels + j]
    }

    /// Overall accuracy: sum of the diagonal.
    pub fn trace(&self) -> f64 {
        (0..self.labels).map(|i| self.get(i, i)).sum()
    }

    /// Marginal probability of true label `i`.
    pub fn row_sum(&self, i: usize) -> f64 {
        (0..self.labels).map(|j| self.get(i, j)).sum()
    }

    /// Conditional predicted-label distribution for true label `i`
    /// (row `i` normalized). Falls back to uniform when the row carries no
    /// mass, so callers always get a usable distribution.
    pub fn conditional_row(&self, i: usize) -> Vec<f64> {
        let total = self.row_sum(i);
        if total > 0.0 {
            (0..self.labels).map(|j| self.get(i, j) / total).collect()
        } else {
            vec![1.0 / self.labels as f64; self.labels]
        }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.labels).map(|c| c.to_vec()).collect()
    }
}

/// Entrywise difference of two confusion matrices measured on the same data
/// distribution. Entries are signed; the trace is the overall-accuracy change.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftMatrix {
    labels: usize,
    entries: Vec<f64>,
}

impl ShiftMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let labels = check_square(&rows)?;
        for row in &rows {
            for &v in row {
                if !(-1.0..=1.0).contains(&v) || v.is_nan() {
                    return Err(Error::Construction(format!(
                        "shift entry {v} outside [-1,1]"
                    )));
                }
            }
        }
        Ok(Self {
            labels,
            entries: rows.into_iter().flatten().collect(),
        })
    }

    pub fn zero(labels: usize) -> Self {
        Self {
            labels,
            entries: vec![0.0; labels * labels],
        }
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.labels + j]
    }

    /// Overall-accuracy change.
    pub fn trace(&self) -> f64 {
        (0..self.labels).map(|i| self.get(i, i)).sum()
    }

    /// Plain squared Frobenius norm.
    pub fn sq_frobenius(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum()
    }

    /// Entrywise difference `self - other`, used to measure estimation error.
    pub fn minus(&self, other: &ShiftMatrix) -> Result<ShiftMatrix> {
        if self.labels != other.labels {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.labels, self.labels, other.labels, other.labels
            )));
        }
        Ok(ShiftMatrix {
            labels: self.labels,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.labels).map(|c| c.to_vec()).collect()
    }

    pub(crate) fn from_flat(labels: usize, entries: Vec<f64>) -> Self {
        debug_assert_eq!(entries.len(), labels * labels);
        Self { labels, entries }
    }
}

/// The shift of `new` relative to `old`: entrywise `new - old`.
pub fn shift_between(new: &ConfusionMatrix, old: &ConfusionMatrix) -> Result<ShiftMatrix> {
    if new.labels != old.labels {
        return Err(Error::Dimension(format!(
            "{} labels vs {} labels",
            new.labels, old.labels
        )));
    }
    let entries = new
        .entries
        .iter()
        .zip(&old.entries)
        .map(|(a, b)| a - b)
        .collect();
    Ok(ShiftMatrix::from_flat(new.labels, entries))
}

/// Nonnegative entrywise weights for the loss; lets individual confusion
/// cells dominate the objective. All-ones recovers the plain Frobenius norm,
/// the identity scores only the diagonal (accuracy) cells.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    labels: usize,
    entries: Vec<f64>,
}

impl WeightMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let labels = check_square(&rows)?;
        let mut any_positive = false;
        for row in &rows {
            for &v in row {
                if v.is_nan() || v < 0.0 {
                    return Err(Error::Construction(format!("weight {v} is negative")));
                }
                any_positive |= v > 0.0;
            }
        }
        if !any_positive {
            return Err(Error::Construction("weight matrix is all zero".into()));
        }
        Ok(Self {
            labels,
            entries: rows.into_iter().flatten().collect(),
        })
    }

    pub fn ones(labels: usize) -> Self {
        Self {
            labels,
            entries: vec![1.0; labels * labels],
        }
    }

    pub fn identity(labels: usize) -> Self {
        let mut entries = vec![0.0; labels * labels];
        for i in 0..labels {
            entries[i * labels + i] = 1.0;
        }
        Self { labels, entries }
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.labels + j]
    }

    /// Row max of squared weights, an upper bound on how much row `i`
    /// contributes per unit of squared shift error.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.labels..(i + 1) * self.labels]
    }
}

/// Prior mass of every partition: `p[label][level] = Pr[x in that partition]`.
///
/// Cells with zero mass are not partitions at all (there is nothing to draw
/// from them); they are kept in the grid for shape but excluded from
/// [`PartitionWeights::active`]. The positive masses must sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionWeights {
    dims: Dimensions,
    p: Vec<f64>,
}

impl PartitionWeights {
    pub fn from_grid(dims: Dimensions, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != dims.labels() {
            return Err(Error::Dimension(format!(
                "expected {} weight rows, got {}",
                dims.labels(),
                rows.len()
            )));
        }
        let mut p = Vec::with_capacity(dims.partition_count());
        let mut sum = 0.0;
        let mut any = false;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dims.levels() {
                return Err(Error::Dimension(format!(
                    "weight row {i} has {} entries, expected {}",
                    row.len(),
                    dims.levels()
                )));
            }
            for &v in row {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Construction(format!(
                        "partition mass {v} outside [0,1]"
                    )));
                }
                any |= v > 0.0;
                sum += v;
                p.push(v);
            }
        }
        if !any {
            return Err(Error::Construction("all partition masses are zero".into()));
        }
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Construction(format!(
                "partition masses sum to {sum}, expected 1 within {PROB_SUM_TOL:e}"
            )));
        }
        Ok(Self { dims, p })
    }

    /// Single-difficulty convenience: one mass per label.
    pub fn from_labels(masses: Vec<f64>) -> Result<Self> {
        let dims = Dimensions::new(masses.len(), 1)?;
        Self::from_grid(dims, masses.into_iter().map(|m| vec![m]).collect())
    }

    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    pub fn mass(&self, cell: PartitionId) -> f64 {
        self.p[self.dims.cell_index(cell)]
    }

    /// Positive-mass cells in lexicographic order.
    pub fn active(&self) -> impl Iterator<Item = PartitionId> + '_ {
        self.dims.cells().filter(|&c| self.mass(c) > 0.0)
    }

    pub fn active_count(&self) -> usize {
        self.active().count()
    }

    /// Mass of true label `i`: sum over its difficulty levels.
    pub fn label_mass(&self, label: usize) -> f64 {
        (0..self.dims.levels())
            .map(|level| self.mass(PartitionId { label, level }))
            .sum()
    }
}

/// Integer sample counts per partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    dims: Dimensions,
    counts: Vec<u64>,
    total: u64,
}

impl Allocation {
    pub fn new(dims: Dimensions, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != dims.partition_count() {
            return Err(Error::Dimension(format!(
                "expected {} counts, got {}",
                dims.partition_count(),
                counts.len()
            )));
        }
        let total = counts.iter().sum();
        Ok(Self { dims, counts, total })
    }

    pub fn zero(dims: Dimensions) -> Self {
        Self {
            counts: vec![0; dims.partition_count()],
            total: 0,
            dims,
        }
    }

    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    pub fn count(&self, cell: PartitionId) -> u64 {
        self.counts[self.dims.cell_index(cell)]
    }

    pub(crate) fn bump(&mut self, cell: PartitionId) {
        self.counts[self.dims.cell_index(cell)] += 1;
        self.total += 1;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

/// Per-partition uncertainty scores (the paper's sigma squared), each in
/// `[0, 1 - 1/L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrid {
    dims: Dimensions,
    scores: Vec<f64>,
}

impl ScoreGrid {
    pub fn new(dims: Dimensions, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != dims.partition_count() {
            return Err(Error::Dimension(format!(
                "expected {} scores, got {}",
                dims.partition_count(),
                scores.len()
            )));
        }
        for &s in &scores {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Construction(format!(
                    "uncertainty score {s} outside [0,1]"
                )));
            }
        }
        Ok(Self { dims, scores })
    }

    pub fn uniform(dims: Dimensions, score: f64) -> Result<Self> {
        Self::new(dims, vec![score; dims.partition_count()])
    }

    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    /// The score itself, sigma squared.
    pub fn score(&self, cell: PartitionId) -> f64 {
        self.scores[self.dims.cell_index(cell)]
    }

    /// Its square root, the sigma that enters allocation formulas.
    pub fn sigma(&self, cell: PartitionId) -> f64 {
        self.score(cell).sqrt()
    }
}

/// A predicted-label distribution over the `L` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    probs: Vec<f64>,
}

impl LabelDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::Construction(format!(
                "need at least 2 labels, got {}",
                probs.len()
            )));
        }
        let mut sum = 0.0;
        for &v in &probs {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Construction(format!("probability {v} outside [0,1]")));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Construction(format!(
                "label distribution sums to {sum}, expected 1 within {PROB_SUM_TOL:e}"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(labels: usize) -> Self {
        Self {
            probs: vec![1.0 / labels as f64; labels],
        }
    }

    pub fn point_mass(labels: usize, label: usize) -> Self {
        let mut probs = vec![0.0; labels];
        probs[label] = 1.0;
        Self { probs }
    }

    pub fn labels(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, label: usize) -> f64 {
        self.probs[label]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}
