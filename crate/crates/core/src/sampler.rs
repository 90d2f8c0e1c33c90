//! Budget-allocation strategies.
//!
//! Each strategy spends the query budget against an oracle, maintains
//! per-partition statistics, and fuses them into a shift estimate together
//! with a complete decision trace. Runs are strictly sequential (each query
//! can depend on all previous outcomes); distinct runs with distinct seeds
//! are independent and may execute in parallel.
//!
//! Item draws are without replacement when a finite dataset backs the run
//! (re-querying a fixed item adds nothing and wastes budget), with
//! replacement when the oracle is simulated. Running out of items in a
//! needed partition ends the run early with a flagged partial result;
//! nothing is silently resampled.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fuse_shift_with_fallback, StatsGrid};
use crate::oracle::{PartitionedDataset, PredictionOracle};
use crate::types::{
    Allocation, ConfusionMatrix, PartitionId, PartitionWeights, ScoreGrid, ShiftMatrix,
};
use crate::util::fourth_root;

/// Pseudorandom generator used for every sampling decision, recorded in
/// trace headers so runs can be reproduced bit for bit across builds.
pub const GENERATOR: &str = "chacha12";

/// Default exploration weight in the adaptive selection rule.
pub const DEFAULT_EXPLORE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Uncertainty-aware adaptive allocation.
    Masa,
    /// Independent draws from the whole dataset.
    Uniform,
    /// Equal budget per true label, proportional across difficulty levels.
    Stratified,
    /// The unreachable optimum: allocation from the true uncertainty scores.
    OracleOptimal,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Masa => "masa",
            Strategy::Uniform => "uniform",
            Strategy::Stratified => "stratified",
            Strategy::OracleOptimal => "oracle_optimal",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SamplerConfig {
    /// Total number of oracle queries to spend.
    pub budget: u64,
    /// Exploration weight `a` in the selection rule; larger explores more.
    pub explore: f64,
    /// Seed for the run's own sampling decisions.
    pub seed: u64,
    pub strategy: Strategy,
}

impl SamplerConfig {
    pub fn new(strategy: Strategy, budget: u64, seed: u64) -> Self {
        Self {
            budget,
            explore: DEFAULT_EXPLORE,
            seed,
            strategy,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("budget must be at least 1".into()));
        }
        if self.explore.is_nan() || self.explore <= 0.0 {
            return Err(Error::Config(format!(
                "exploration weight must be positive, got {}",
                self.explore
            )));
        }
        Ok(())
    }
}

/// One sampling decision: which partition was queried, with what item, what
/// came back, and the partition's uncertainty estimate after folding it in.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    /// 1-based position in the run.
    pub iteration: u64,
    pub partition: PartitionId,
    /// Item identifier for replay/live oracles; `None` for simulated draws.
    pub item_id: Option<String>,
    /// 0-based predicted label.
    pub predicted_label: usize,
    /// Estimated uncertainty score of the chosen partition after the update.
    pub sigma2: f64,
}

/// Why a run stopped before spending its budget.
#[derive(Debug, Clone, PartialEq)]
pub enum AbortReason {
    /// A needed partition ran out of items (finite dataset, no replacement).
    Exhausted(PartitionId),
    /// The budget exceeded the whole dataset.
    DatasetExhausted,
    /// The oracle failed (missing replay item, network, protocol).
    Oracle(String),
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub strategy: Strategy,
    pub shift_estimate: ShiftMatrix,
    pub allocation: Allocation,
    pub trace: Vec<TraceEvent>,
    /// Partitions that ran dry during the run.
    pub exhausted: Vec<PartitionId>,
    /// Positive-mass partitions fused from the reference prior because they
    /// received no samples.
    pub fallback: Vec<PartitionId>,
    /// True when the run ended before spending the full budget.
    pub aborted: bool,
    pub abort_reason: Option<AbortReason>,
    /// Oracle queries consumed; equals `trace.len()`.
    pub queries: u64,
}

/// Adaptive partition selection. While any positive-mass partition has fewer
/// than two samples, the lexicographically smallest such partition is chosen
/// (two samples are the minimum for a score estimate). Afterwards the rule is
///
/// ```text
///   argmax over partitions of (p / n) * (sigma_hat + (a / n)^(1/4))
/// ```
///
/// with deterministic lexicographic tie-breaking.
pub fn select_partition(stats: &StatsGrid, p: &PartitionWeights, explore: f64) -> PartitionId {
    for cell in p.active() {
        if stats.cell(cell).n() < 2 {
            return cell;
        }
    }
    let mut best: Option<(PartitionId, f64)> = None;
    for cell in p.active() {
        let n = stats.cell(cell).n() as f64;
        let score = p.mass(cell) / n * (stats.cell(cell).sigma() + fourth_root(explore / n));
        match best {
            Some((_, top)) if score <= top => {}
            _ => best = Some((cell, score)),
        }
    }
    best.expect("partition weights always have an active cell").0
}

/// Integer allocation proportional to `p * sigma` (largest-remainder
/// rounding, at least one sample per partition with positive `p * sigma`,
/// total exactly `n`). This is the allocation whose real-valued relaxation
/// attains [`crate::loss::optimal_loss`].
pub fn optimal_allocation(p: &PartitionWeights, scores: &ScoreGrid, n: u64) -> Result<Allocation> {
    if scores.dims() != p.dims() {
        return Err(Error::Dimension("weights and scores must share dimensions".into()));
    }
    let cells: Vec<PartitionId> = p.active().filter(|&c| scores.score(c) > 0.0).collect();
    let total_weight: f64 = cells.iter().map(|&c| p.mass(c) * scores.sigma(c)).sum();
    if total_weight <= 0.0 {
        return Err(Error::Degenerate(
            "every partition has zero uncertainty; any allocation is optimal".into(),
        ));
    }
    if n < cells.len() as u64 {
        return Err(Error::Config(format!(
            "{n} samples cannot cover {} partitions with positive uncertainty",
            cells.len()
        )));
    }
    let mut counts = vec![0u64; p.dims().partition_count()];
    let mut remainders: Vec<(PartitionId, f64)> = Vec::with_capacity(cells.len());
    let mut assigned = 0u64;
    for &cell in &cells {
        let ideal = p.mass(cell) * scores.sigma(cell) / total_weight * n as f64;
        let base = ideal.floor();
        counts[cell_index(p, cell)] = base as u64;
        assigned += base as u64;
        remainders.push((cell, ideal - base));
    }
    // Stable sort: ties keep lexicographic cell order.
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let mut leftover = n - assigned;
    for (cell, _) in &remainders {
        if leftover == 0 {
            break;
        }
        counts[cell_index(p, *cell)] += 1;
        leftover -= 1;
    }
    // Floor of one: starving a positive-uncertainty partition would make the
    // closed-form loss undefined. Take from the currently largest count.
    for &cell in &cells {
        while counts[cell_index(p, cell)] == 0 {
            let donor = cells
                .iter()
                .copied()
                .filter(|&c| counts[cell_index(p, c)] > 1)
                .max_by(|&a, &b| {
                    counts[cell_index(p, a)]
                        .cmp(&counts[cell_index(p, b)])
                        .then(b.cmp(&a))
                })
                .expect("n >= cell count guarantees a donor");
            counts[cell_index(p, donor)] -= 1;
            counts[cell_index(p, cell)] += 1;
        }
    }
    Allocation::new(p.dims(), counts)
}

fn cell_index(p: &PartitionWeights, cell: PartitionId) -> usize {
    cell.label * p.dims().levels() + cell.level
}

/// Adaptive run. Needs enough budget to put two samples in every
/// positive-mass partition before the adaptive phase can start.
pub fn run_masa(
    oracle: &mut dyn PredictionOracle,
    dataset: Option<&PartitionedDataset>,
    p: &PartitionWeights,
    c_old: &ConfusionMatrix,
    config: &SamplerConfig,
) -> Result<RunResult> {
    config.validate()?;
    let min = 2 * p.active_count() as u64;
    if config.budget < min {
        return Err(Error::Config(format!(
            "adaptive sampling needs at least {min} queries (2 per partition), got {}",
            config.budget
        )));
    }
    let mut run = Run::new(Strategy::Masa, p, c_old, dataset, config.seed);
    for _ in 0..config.budget {
        let cell = select_partition(&run.stats, p, config.explore);
        if !run.step(oracle, cell)? {
            break;
        }
    }
    Ok(run.finish(oracle))
}

/// Uniform baseline: items drawn independently from the whole dataset, or
/// equivalently partitions drawn with probability `p` when simulated.
pub fn run_uniform(
    oracle: &mut dyn PredictionOracle,
    dataset: Option<&PartitionedDataset>,
    p: &PartitionWeights,
    c_old: &ConfusionMatrix,
    config: &SamplerConfig,
) -> Result<RunResult> {
    config.validate()?;
    let mut run = Run::new(Strategy::Uniform, p, c_old, dataset, config.seed);
    match dataset {
        Some(ds) => {
            // Without replacement from the full item list: a shuffled prefix.
            let mut order: Vec<usize> = (0..ds.len()).collect();
            order.shuffle(&mut run.rng);
            for i in 0..config.budget {
                let Some(&pos) = order.get(i as usize) else {
                    run.abort = Some(AbortReason::DatasetExhausted);
                    break;
                };
                let item = ds.item(pos);
                let cell = PartitionId::new(item.label, item.level);
                if !run.step_item(oracle, cell, pos)? {
                    break;
                }
            }
        }
        None => {
            let (cells, cdf) = mass_cdf(p);
            for _ in 0..config.budget {
                let u: f64 = run.rng.random();
                let idx = cdf.iter().position(|&c| u < c).unwrap_or(cells.len() - 1);
                if !run.step(oracle, cells[idx])? {
                    break;
                }
            }
        }
    }
    Ok(run.finish(oracle))
}

/// Stratified baseline: `floor(N/L)` samples per true label (remainder to
/// the lowest label indices), split across a label's difficulty levels
/// proportionally to their masses.
pub fn run_stratified(
    oracle: &mut dyn PredictionOracle,
    dataset: Option<&PartitionedDataset>,
    p: &PartitionWeights,
    c_old: &ConfusionMatrix,
    config: &SamplerConfig,
) -> Result<RunResult> {
    config.validate()?;
    let labels = p.dims().labels() as u64;
    if config.budget < labels {
        return Err(Error::Config(format!(
            "stratified sampling needs at least one query per label ({labels}), got {}",
            config.budget
        )));
    }
    let counts = stratified_allocation(p, config.budget)?;
    run_fixed_with(Strategy::Stratified, oracle, dataset, &counts, p, c_old, config)
}

/// The per-partition counts [`run_stratified`] will draw.
pub fn stratified_allocation(p: &PartitionWeights, budget: u64) -> Result<Allocation> {
    let dims = p.dims();
    let labels = dims.labels();
    let base = budget / labels as u64;
    let remainder = (budget % labels as u64) as usize;
    let mut counts = vec![0u64; dims.partition_count()];
    for label in 0..labels {
        let label_total = base + u64::from(label < remainder);
        let mass = p.label_mass(label);
        if mass == 0.0 {
            if label_total > 0 {
                return Err(Error::Config(format!(
                    "stratified sampling cannot draw from label {} (zero mass)",
                    label + 1
                )));
            }
            continue;
        }
        // Largest-remainder split across this label's levels.
        let cells: Vec<PartitionId> = (0..dims.levels())
            .map(|level| PartitionId::new(label, level))
            .filter(|&c| p.mass(c) > 0.0)
            .collect();
        let mut assigned = 0u64;
        let mut remainders: Vec<(PartitionId, f64)> = Vec::new();
        for &cell in &cells {
            let ideal = p.mass(cell) / mass * label_total as f64;
            let floor = ideal.floor();
            counts[cell.label * dims.levels() + cell.level] = floor as u64;
            assigned += floor as u64;
            remainders.push((cell, ideal - floor));
        }
        remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        for (cell, _) in remainders.into_iter().take((label_total - assigned) as usize) {
            counts[cell.label * dims.levels() + cell.level] += 1;
        }
    }
    Allocation::new(dims, counts)
}

/// Oracle-optimal baseline: draws the allocation implied by the true
/// uncertainty scores. Simulation only; no estimator could know `truth`.
pub fn run_oracle_optimal(
    oracle: &mut dyn PredictionOracle,
    dataset: Option<&PartitionedDataset>,
    truth: &ScoreGrid,
    p: &PartitionWeights,
    c_old: &ConfusionMatrix,
    config: &SamplerConfig,
) -> Result<RunResult> {
    config.validate()?;
    let counts = optimal_allocation(p, truth, config.budget)?;
    run_fixed_with(Strategy::OracleOptimal, oracle, dataset, &counts, p, c_old, config)
}

/// Spend the budget according to a fixed per-partition allocation, visiting
/// partitions in lexicographic order.
pub fn run_fixed(
    oracle: &mut dyn PredictionOracle,
    dataset: Option<&PartitionedDataset>,
    counts: &Allocation,
    p: &PartitionWeights,
    c_old: &ConfusionMatrix,
    config: &SamplerConfig,
) -> Result<RunResult> {
    config.validate()?;
    run_fixed_with(config.strategy, oracle, dataset, counts, p, c_old, config)
}

fn run_fixed_with(
    strategy: Strategy,
    oracle: &mut dyn PredictionOracle,
    dataset: Option<&PartitionedDataset>,
    counts: &Allocation,
    p: &PartitionWeights,
    c_old: &ConfusionMatrix,
    config: &SamplerConfig,
) -> Result<RunResult> {
    if counts.dims() != p.dims() {
        return Err(Error::Dimension("allocation does not match partition grid".into()));
    }
    let mut run = Run::new(strategy, p, c_old, dataset, config.seed);
    'outer: for cell in p.dims().cells() {
        for _ in 0..counts.count(cell) {
            if !run.step(oracle, cell)? {
                break 'outer;
            }
        }
    }
    Ok(run.finish(oracle))
}

fn mass_cdf(p: &PartitionWeights) -> (Vec<PartitionId>, Vec<f64>) {
    let cells: Vec<PartitionId> = p.active().collect();
    let mut acc = 0.0;
    let cdf = cells
        .iter()
        .map(|&c| {
            acc += p.mass(c);
            acc
        })
        .collect();
    (cells, cdf)
}

/// Shared run state: statistics, trace, and (for finite datasets) the
/// shuffled without-replacement pools.
struct Run<'a> {
    strategy: Strategy,
    p: &'a PartitionWeights,
    c_old: &'a ConfusionMatrix,
    stats: StatsGrid,
    alloc: Allocation,
    trace: Vec<TraceEvent>,
    pools: Option<Pools<'a>>,
    rng: ChaCha12Rng,
    exhausted: Vec<PartitionId>,
    abort: Option<AbortReason>,
    start_queries: Option<u64>,
}

struct Pools<'a> {
    ds: &'a PartitionedDataset,
    remaining: BTreeMap<PartitionId, Vec<usize>>,
}

impl<'a> Run<'a> {
    fn new(
        strategy: Strategy,
        p: &'a PartitionWeights,
        c_old: &'a ConfusionMatrix,
        dataset: Option<&'a PartitionedDataset>,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let pools = dataset.map(|ds| {
            let mut remaining = BTreeMap::new();
            for cell in p.dims().cells() {
                let mut members = ds.items_in(cell).to_vec();
                members.shuffle(&mut rng);
                remaining.insert(cell, members);
            }
            Pools { ds, remaining }
        });
        Self {
            strategy,
            p,
            c_old,
            stats: StatsGrid::new(p.dims()),
            alloc: Allocation::zero(p.dims()),
            trace: Vec::new(),
            pools,
            rng,
            exhausted: Vec::new(),
            abort: None,
            start_queries: None,
        }
    }

    /// Query one sample from `cell`. Returns `Ok(false)` when the run must
    /// stop (exhaustion or oracle failure); the partial result is flagged.
    fn step(&mut self, oracle: &mut dyn PredictionOracle, cell: PartitionId) -> Result<bool> {
        let item_pos = match &mut self.pools {
            Some(pools) => match pools.remaining.get_mut(&cell).and_then(Vec::pop) {
                Some(pos) => Some(pos),
                None => {
                    self.exhausted.push(cell);
                    self.abort = Some(AbortReason::Exhausted(cell));
                    return Ok(false);
                }
            },
            None => None,
        };
        self.query(oracle, cell, item_pos)
    }

    /// Like `step` but for a caller-chosen item (uniform global draws).
    fn step_item(
        &mut self,
        oracle: &mut dyn PredictionOracle,
        cell: PartitionId,
        pos: usize,
    ) -> Result<bool> {
        if let Some(pools) = &mut self.pools {
            if let Some(members) = pools.remaining.get_mut(&cell) {
                members.retain(|&m| m != pos);
            }
        }
        self.query(oracle, cell, Some(pos))
    }

    fn query(
        &mut self,
        oracle: &mut dyn PredictionOracle,
        cell: PartitionId,
        item_pos: Option<usize>,
    ) -> Result<bool> {
        if self.start_queries.is_none() {
            self.start_queries = Some(oracle.queries());
        }
        let item_id = item_pos.map(|pos| {
            self.pools
                .as_ref()
                .expect("item draws only happen with a dataset")
                .ds
                .item(pos)
                .id
                .clone()
        });
        let label = match oracle.predict(cell, item_id.as_deref()) {
            Ok(label) => label,
            Err(Error::MissingItem(id)) => {
                self.abort = Some(AbortReason::Oracle(format!("no recorded prediction for {id:?}")));
                return Ok(false);
            }
            Err(Error::Query(e)) => {
                self.abort = Some(AbortReason::Oracle(e));
                return Ok(false);
            }
            Err(e) => return Err(e),
        };
        self.stats.observe(cell, label)?;
        self.alloc.bump(cell);
        self.trace.push(TraceEvent {
            iteration: self.trace.len() as u64 + 1,
            partition: cell,
            item_id,
            predicted_label: label,
            sigma2: self.stats.cell(cell).sigma2(),
        });
        Ok(true)
    }

    fn finish(self, oracle: &dyn PredictionOracle) -> RunResult {
        let queries = oracle.queries() - self.start_queries.unwrap_or(oracle.queries());
        debug_assert_eq!(queries, self.trace.len() as u64);
        let (shift_estimate, fallback) =
            fuse_shift_with_fallback(&self.stats, self.p, self.c_old);
        RunResult {
            strategy: self.strategy,
            shift_estimate,
            allocation: self.alloc,
            trace: self.trace,
            exhausted: self.exhausted,
            fallback,
            aborted: self.abort.is_some(),
            abort_reason: self.abort,
            queries,
        }
    }
}

/// Dispatch on strategy. `truth` is required for [`Strategy::OracleOptimal`].
pub fn run_strategy(
    oracle: &mut dyn PredictionOracle,
    dataset: Option<&PartitionedDataset>,
    truth: Option<&ScoreGrid>,
    p: &PartitionWeights,
    c_old: &ConfusionMatrix,
    config: &SamplerConfig,
) -> Result<RunResult> {
    match config.strategy {
        Strategy::Masa => run_masa(oracle, dataset, p, c_old, config),
        Strategy::Uniform => run_uniform(oracle, dataset, p, c_old, config),
        Strategy::Stratified => run_stratified(oracle, dataset, p, c_old, config),
        Strategy::OracleOptimal => {
            let truth = truth.ok_or_else(|| {
                Error::Config("oracle_optimal needs ground-truth uncertainty scores".into())
            })?;
            run_oracle_optimal(oracle, dataset, truth, p, c_old, config)
        }
    }
}
