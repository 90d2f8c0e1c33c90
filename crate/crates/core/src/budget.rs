//! Stopping rules: how many queries are needed before the estimated shift is
//! trustworthy at a target error.
//!
//! Flat (uniform or stratified) sampling gets the distribution-free bound
//! `sqrt(c / n)` on the Frobenius error, with `c = ln(2/alpha) / 2` from a
//! two-sided Hoeffding argument on a `[0,1]`-bounded statistic. The adaptive
//! sampler instead upper-bounds each partition's uncertainty score by its
//! estimate plus a concentration half-width and sums the per-partition
//! closed-form losses, which is what makes its stopping point scenario
//! dependent and usually far earlier.

use crate::error::{Error, Result};
use crate::estimator::StatsGrid;
use crate::oracle::{PredictionOracle, Scenario, SimulatedOracle};
use crate::sampler::{select_partition, TraceEvent};
use crate::types::{Allocation, PartitionWeights, ScoreGrid};
use crate::util::fourth_root;

/// Targets for a stopping decision.
#[derive(Debug, Clone, Copy)]
pub struct ConfidenceParams {
    /// Target Frobenius-norm error.
    pub epsilon: f64,
    /// One minus the confidence level.
    pub alpha: f64,
}

impl ConfidenceParams {
    pub fn new(epsilon: f64, alpha: f64) -> Result<Self> {
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        if alpha.is_nan() || alpha <= 0.0 || alpha >= 1.0 {
            return Err(Error::Config(format!("alpha must be in (0,1), got {alpha}")));
        }
        Ok(Self { epsilon, alpha })
    }

    /// Per-event failure probability that makes the union bound over all
    /// `L*K` partitions and `n` checkpoints come out at `alpha` overall.
    pub fn per_event_delta(&self, partitions: usize, checkpoints: u64) -> f64 {
        self.alpha / (partitions as f64 * checkpoints as f64)
    }
}

/// Two-sided Hoeffding constant: `c = ln(2/alpha) / 2`.
pub fn bound_constant(alpha: f64) -> f64 {
    (2.0 / alpha).ln() / 2.0
}

/// Smallest `n` with `sqrt(c/n) <= epsilon`, i.e. `ceil(c / epsilon^2)`.
/// The flat-sampling requirement for both uniform and stratified baselines.
pub fn required_budget_flat(params: &ConfidenceParams) -> u64 {
    let c = bound_constant(params.alpha);
    ((c / (params.epsilon * params.epsilon)).ceil() as u64).max(1)
}

/// Concentration half-width for the estimated score's square root after `t`
/// samples: `(ln(2/delta) / (2t))^(1/4)`. With probability at least
/// `1 - delta`, `|sigma_hat - sigma| <= sigma_bound(t, delta)`.
pub fn sigma_bound(t: u64, delta: f64) -> Result<f64> {
    if t < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: t });
    }
    if delta.is_nan() || delta <= 0.0 || delta > 2.0 {
        return Err(Error::Config(format!("delta must be in (0,2], got {delta}")));
    }
    Ok(fourth_root((2.0 / delta).ln() / (2.0 * t as f64)))
}

/// High-probability upper bound on the expected squared Frobenius error of
/// the current estimate: each partition's sigma is bounded by
/// `min(1, sigma_hat + sigma_bound)` and the closed-form losses are summed.
/// Holds with probability at least `1 - LK * n_max * delta` under the
/// per-checkpoint union bound.
pub fn masa_loss_bound(stats: &StatsGrid, p: &PartitionWeights, delta: f64) -> Result<f64> {
    let mut total = 0.0;
    for cell in p.active() {
        let n = stats.cell(cell).n();
        let width = sigma_bound(n, delta)?;
        let sigma = (stats.cell(cell).sigma() + width).min(1.0);
        let mass = p.mass(cell);
        total += mass * mass * sigma * sigma / n as f64;
    }
    Ok(total)
}

/// Same bound evaluated at explicitly supplied scores instead of running
/// estimates; with `delta = 2` the half-width vanishes and this reduces
/// exactly to the closed-form expected loss.
pub fn loss_bound_with_scores(
    alloc: &Allocation,
    p: &PartitionWeights,
    scores: &ScoreGrid,
    delta: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for cell in p.active() {
        let n = alloc.count(cell);
        let width = sigma_bound(n, delta)?;
        let sigma = (scores.sigma(cell) + width).min(1.0);
        let mass = p.mass(cell);
        total += mass * mass * sigma * sigma / n as f64;
    }
    Ok(total)
}

/// How a simulated adaptive stopping run is driven.
#[derive(Debug, Clone, Copy)]
pub struct MasaBudgetOptions {
    /// Hard query ceiling; reaching it without satisfying the bound is
    /// reported, not an error.
    pub ceiling: u64,
    pub explore: f64,
    pub seed: u64,
    /// Record the stopping run's decisions.
    pub collect_trace: bool,
}

impl MasaBudgetOptions {
    pub fn new(ceiling: u64, explore: f64, seed: u64) -> Self {
        Self {
            ceiling,
            explore,
            seed,
            collect_trace: false,
        }
    }
}

/// Outcome of a required-sample-size computation.
#[derive(Debug, Clone)]
pub struct BudgetReport {
    /// Queries at which the adaptive bound first met the target, if it did.
    pub adaptive: Option<u64>,
    /// Flat-sampling requirement for the same target.
    pub flat: u64,
    /// `1 - adaptive/flat` when the target was met.
    pub savings: Option<f64>,
    /// Per-event delta used inside the adaptive bound.
    pub delta: f64,
    pub ceiling: u64,
    /// The stopping run's decisions, when requested.
    pub trace: Option<Vec<TraceEvent>>,
}

/// Run the adaptive sampler against a simulated scenario until its loss
/// bound drops to `epsilon^2`, and report the stopping budget next to the
/// flat requirement.
pub fn required_budget_masa(
    scenario: &Scenario,
    params: &ConfidenceParams,
    options: &MasaBudgetOptions,
) -> Result<BudgetReport> {
    let p = scenario.weights();
    let flat = required_budget_flat(params);
    let ceiling = options.ceiling;
    let delta = params.per_event_delta(p.active_count(), ceiling.max(1));
    let target = params.epsilon * params.epsilon;

    let mut oracle = SimulatedOracle::new(scenario, options.seed);
    let mut stats = StatsGrid::new(scenario.dims());
    let mut trace = options.collect_trace.then(Vec::new);
    let init = 2 * p.active_count() as u64;
    let mut adaptive = None;
    for n in 1..=ceiling {
        let cell = select_partition(&stats, p, options.explore);
        let label = oracle.predict(cell, None)?;
        stats.observe(cell, label)?;
        if let Some(events) = &mut trace {
            events.push(TraceEvent {
                iteration: n,
                partition: cell,
                item_id: None,
                predicted_label: label,
                sigma2: stats.cell(cell).sigma2(),
            });
        }
        if n >= init && masa_loss_bound(&stats, p, delta)? <= target {
            adaptive = Some(n);
            break;
        }
    }
    let savings = adaptive.map(|n| 1.0 - n as f64 / flat as f64);
    Ok(BudgetReport {
        adaptive,
        flat,
        savings,
        delta,
        ceiling,
        trace,
    })
}
