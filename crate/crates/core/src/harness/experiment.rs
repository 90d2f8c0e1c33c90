//! Seeded Monte Carlo experiment execution.
//!
//! An experiment is a grid of (strategy, budget, trial) runs. Every run gets
//! a seed derived from the master seed and its grid coordinates, so trials
//! are independent, reproducible, and embarrassingly parallel; aggregation
//! sums per-trial statistics in trial order, making the means independent of
//! execution order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::{required_budget_flat, required_budget_masa, ConfidenceParams, MasaBudgetOptions};
use crate::error::{Error, Result};
use crate::estimator::score_from_distribution;
use crate::harness::seed::{oracle_seed, trial_seed};
use crate::loss::{expected_loss_closed_form, optimal_loss, weighted_frobenius_sq};
use crate::oracle::{
    EndpointConfig, HttpOracle, PartitionedDataset, PredictionLog, PredictionOracle, ReplayOracle,
    Scenario, SimulatedOracle,
};
use crate::sampler::{
    run_strategy, stratified_allocation, RunResult, SamplerConfig, Strategy, GENERATOR,
};
use crate::types::{
    ConfusionMatrix, LabelDistribution, PartitionWeights, ScoreGrid, ShiftMatrix, WeightMatrix,
};

/// Where predictions come from.
pub enum ExperimentSource {
    Synthetic(Scenario),
    Replay {
        dataset: PartitionedDataset,
        weights: PartitionWeights,
        log: PredictionLog,
        c_old: ConfusionMatrix,
    },
    Endpoint {
        dataset: PartitionedDataset,
        weights: PartitionWeights,
        endpoint: EndpointConfig,
        c_old: ConfusionMatrix,
    },
}

impl ExperimentSource {
    pub fn weights(&self) -> &PartitionWeights {
        match self {
            ExperimentSource::Synthetic(s) => s.weights(),
            ExperimentSource::Replay { weights, .. } => weights,
            ExperimentSource::Endpoint { weights, .. } => weights,
        }
    }

    pub fn c_old(&self) -> Result<ConfusionMatrix> {
        match self {
            ExperimentSource::Synthetic(s) => Ok(s.c_old().clone()),
            ExperimentSource::Replay { c_old, .. } => Ok(c_old.clone()),
            ExperimentSource::Endpoint { c_old, .. } => Ok(c_old.clone()),
        }
    }

    fn dataset(&self) -> Option<&PartitionedDataset> {
        match self {
            ExperimentSource::Synthetic(_) => None,
            ExperimentSource::Replay { dataset, .. } => Some(dataset),
            ExperimentSource::Endpoint { dataset, .. } => Some(dataset),
        }
    }

    /// Ground truth, when it exists: the true shift and the true
    /// per-partition uncertainty scores. Synthetic scenarios always have it;
    /// replay sources have it exactly when the log covers the whole dataset.
    pub fn ground_truth(&self) -> Result<Option<GroundTruth>> {
        match self {
            ExperimentSource::Synthetic(s) => Ok(Some(GroundTruth {
                shift: s.true_shift()?,
                scores: s.true_scores(),
            })),
            ExperimentSource::Replay {
                dataset,
                weights,
                log,
                c_old,
            } => replay_truth(dataset, weights, log, c_old),
            ExperimentSource::Endpoint { .. } => Ok(None),
        }
    }
}

/// Exhaustive tally of a fully recorded dataset: per-partition empirical
/// label distributions and the implied true confusion matrix.
fn replay_truth(
    dataset: &PartitionedDataset,
    weights: &PartitionWeights,
    log: &PredictionLog,
    c_old: &ConfusionMatrix,
) -> Result<Option<GroundTruth>> {
    let dims = dataset.dims();
    let labels = dims.labels();
    let mut scores = vec![0.0; dims.partition_count()];
    let mut confusion = vec![vec![0.0; labels]; labels];
    for cell in weights.active() {
        let members = dataset.items_in(cell);
        if members.is_empty() {
            return Ok(None);
        }
        let mut counts = vec![0u64; labels];
        for &pos in members {
            let item = dataset.item(pos);
            match log.get(&item.id) {
                Some(pred) => counts[pred] += 1,
                None => return Ok(None),
            }
        }
        let total = members.len() as f64;
        let mu =
            LabelDistribution::new(counts.iter().map(|&c| c as f64 / total).collect())?;
        scores[cell.label * dims.levels() + cell.level] =
            score_from_distribution(&mu).max(0.0);
        let mass = weights.mass(cell);
        for (j, slot) in confusion[cell.label].iter_mut().enumerate() {
            *slot += mass * mu.prob(j);
        }
    }
    let true_confusion = ConfusionMatrix::from_rows(confusion)?;
    let shift = crate::types::shift_between(&true_confusion, c_old)?;
    Ok(Some(GroundTruth {
        shift,
        scores: ScoreGrid::new(dims, scores)?,
    }))
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub shift: ShiftMatrix,
    pub scores: ScoreGrid,
}

/// Stopping-rule targets to include in the savings table.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StoppingSpec {
    pub epsilon: f64,
    pub alpha: f64,
    /// Ceiling for the adaptive stopping search; defaults to the flat
    /// requirement (past that point there is nothing to save).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ceiling: Option<u64>,
}

pub struct ExperimentConfig {
    pub strategies: Vec<Strategy>,
    pub budgets: Vec<u64>,
    pub trials: u64,
    pub master_seed: u64,
    pub explore: f64,
    pub weights_matrix: Option<WeightMatrix>,
    /// 0 means one worker per core.
    pub workers: usize,
    pub collect_traces: bool,
    pub stopping: Option<StoppingSpec>,
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.budgets.is_empty() {
            return Err(Error::Config("at least one budget is required".into()));
        }
        if self.budgets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("budgets must be sorted ascending".into()));
        }
        if self.explore.is_nan() || self.explore <= 0.0 {
            return Err(Error::Config("exploration weight must be positive".into()));
        }
        Ok(())
    }
}

/// One aggregated (strategy, budget) point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub strategy: String,
    pub budget: u64,
    pub trials: u64,
    pub aborted_trials: u64,
    /// Mean squared weighted Frobenius error over completed trials, when
    /// ground truth exists.
    pub mean_sq_error: Option<f64>,
    pub std_error: Option<f64>,
    /// Closed-form expected loss of this strategy's idealized allocation.
    pub closed_form_ref: Option<f64>,
    /// Mean sample count per partition, row-major.
    pub mean_allocation: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavingsRow {
    pub strategy: String,
    pub required_n: Option<u64>,
    pub savings_vs_flat: Option<f64>,
    pub achieved: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceLosses {
    pub budget: u64,
    /// `(sum p sigma)^2 / N`.
    pub optimal: Option<f64>,
    /// `sum p sigma^2 / N`, uniform sampling's expected loss.
    pub uniform: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub master_seed: u64,
    pub generator: String,
    pub config_hash: String,
    /// Seconds since the Unix epoch; the only non-deterministic field.
    pub generated_at_unix: u64,
}

/// The shift estimate singled out for `shift_estimate.json`: first strategy,
/// largest budget, trial 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalEstimate {
    pub strategy: String,
    pub budget: u64,
    pub trial: u64,
    pub labels: usize,
    pub entries: Vec<Vec<f64>>,
    pub trace_of_shift: f64,
    pub aborted: bool,
    pub fallback_partitions: Vec<[usize; 2]>,
}

#[derive(Debug, Serialize)]
pub struct ExperimentReport {
    pub metadata: ReportMetadata,
    pub curves: Vec<CurvePoint>,
    pub references: Vec<ReferenceLosses>,
    pub savings: Vec<SavingsRow>,
    pub final_estimate: Option<FinalEstimate>,
    /// Count of runs that ended early, across the whole grid.
    pub aborted_runs: u64,
    #[serde(skip)]
    pub traces: Vec<TraceRecord>,
}

/// A retained per-run trace, written as one JSONL file by the report writer.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub strategy: Strategy,
    pub budget: u64,
    pub trial: u64,
    pub seed: u64,
    pub oracle_seed: u64,
    pub events: Vec<crate::sampler::TraceEvent>,
}

struct RunRecord {
    strategy: Strategy,
    budget: u64,
    trial: u64,
    seed: u64,
    sq_error: Option<f64>,
    aborted: bool,
    result: RunResult,
}

pub fn run_experiment(
    source: &ExperimentSource,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    config.validate()?;
    let p = source.weights();
    let c_old = source.c_old()?;
    let truth = source.ground_truth()?;
    let w = config
        .weights_matrix
        .clone()
        .unwrap_or_else(|| WeightMatrix::ones(p.dims().labels()));
    if w.labels() != p.dims().labels() {
        return Err(Error::Config("weight matrix size does not match label count".into()));
    }

    let grid: Vec<(Strategy, u64, u64)> = config
        .strategies
        .iter()
        .flat_map(|&s| {
            config
                .budgets
                .iter()
                .flat_map(move |&b| (0..config.trials).map(move |t| (s, b, t)))
        })
        .collect();

    let run_one = |&(strategy, budget, trial): &(Strategy, u64, u64)| -> Result<RunRecord> {
        let seed = trial_seed(config.master_seed, strategy, budget, trial);
        let sampler_config = SamplerConfig {
            budget,
            explore: config.explore,
            seed,
            strategy,
        };
        let mut oracle: Box<dyn PredictionOracle> = match source {
            ExperimentSource::Synthetic(s) => {
                Box::new(SimulatedOracle::new(s, oracle_seed(seed)))
            }
            ExperimentSource::Replay { log, .. } => Box::new(ReplayOracle::new(log)),
            ExperimentSource::Endpoint { endpoint, .. } => {
                Box::new(HttpOracle::new(endpoint.clone(), p.dims().labels())?)
            }
        };
        let result = run_strategy(
            oracle.as_mut(),
            source.dataset(),
            truth.as_ref().map(|t| &t.scores),
            p,
            &c_old,
            &sampler_config,
        )?;
        let sq_error = match (&truth, result.aborted) {
            (Some(t), false) => Some(weighted_frobenius_sq(
                &result.shift_estimate.minus(&t.shift)?,
                &w,
            )?),
            _ => None,
        };
        Ok(RunRecord {
            strategy,
            budget,
            trial,
            seed,
            sq_error,
            aborted: result.aborted,
            result,
        })
    };

    let records: Vec<RunRecord> = if config.workers == 1 {
        grid.iter().map(run_one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| grid.par_iter().map(run_one).collect::<Result<_>>())?
    };

    assemble_report(source, config, p, truth, records)
}

fn assemble_report(
    source: &ExperimentSource,
    config: &ExperimentConfig,
    p: &PartitionWeights,
    truth: Option<GroundTruth>,
    records: Vec<RunRecord>,
) -> Result<ExperimentReport> {
    let dims = p.dims();
    let mut curves = Vec::new();
    for &strategy in &config.strategies {
        for &budget in &config.budgets {
            let runs: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.strategy == strategy && r.budget == budget)
                .collect();
            let completed: Vec<&&RunRecord> = runs.iter().filter(|r| !r.aborted).collect();
            let errors: Vec<f64> = completed.iter().filter_map(|r| r.sq_error).collect();
            let (mean, stderr) = mean_and_stderr(&errors);
            let mut allocation = vec![vec![0.0; dims.levels()]; dims.labels()];
            if !completed.is_empty() {
                for run in &completed {
                    for cell in dims.cells() {
                        allocation[cell.label][cell.level] +=
                            run.result.allocation.count(cell) as f64 / completed.len() as f64;
                    }
                }
            }
            let closed_form_ref = truth
                .as_ref()
                .and_then(|t| closed_form_reference(strategy, budget, p, &t.scores));
            curves.push(CurvePoint {
                strategy: strategy.name().to_string(),
                budget,
                trials: runs.len() as u64,
                aborted_trials: (runs.len() - completed.len()) as u64,
                mean_sq_error: mean,
                std_error: stderr,
                closed_form_ref,
                mean_allocation: allocation,
            });
        }
    }

    let references = config
        .budgets
        .iter()
        .map(|&budget| ReferenceLosses {
            budget,
            optimal: truth
                .as_ref()
                .and_then(|t| optimal_loss(budget, p, &t.scores).ok()),
            uniform: truth
                .as_ref()
                .map(|t| p.active().map(|c| p.mass(c) * t.scores.score(c)).sum::<f64>()
                    / budget as f64),
        })
        .collect();

    let savings = savings_table(source, config, &truth)?;

    let final_estimate = config
        .strategies
        .first()
        .zip(config.budgets.last())
        .and_then(|(&strategy, &budget)| {
            records
                .iter()
                .find(|r| r.strategy == strategy && r.budget == budget && r.trial == 0)
        })
        .map(|r| FinalEstimate {
            strategy: r.strategy.name().to_string(),
            budget: r.budget,
            trial: r.trial,
            labels: dims.labels(),
            entries: r.result.shift_estimate.rows(),
            trace_of_shift: r.result.shift_estimate.trace(),
            aborted: r.aborted,
            fallback_partitions: r
                .result
                .fallback
                .iter()
                .map(|c| [c.label + 1, c.level + 1])
                .collect(),
        });

    let traces = if config.collect_traces {
        records
            .iter()
            .map(|r| TraceRecord {
                strategy: r.strategy,
                budget: r.budget,
                trial: r.trial,
                seed: r.seed,
                oracle_seed: oracle_seed(r.seed),
                events: r.result.trace.clone(),
            })
            .collect()
    } else {
        Vec::new()
    };

    let aborted_runs = records.iter().filter(|r| r.aborted).count() as u64;

    Ok(ExperimentReport {
        metadata: ReportMetadata {
            master_seed: config.master_seed,
            generator: GENERATOR.to_string(),
            config_hash: config_hash(config),
            generated_at_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        },
        curves,
        references,
        savings,
        final_estimate,
        aborted_runs,
        traces,
    })
}

fn savings_table(
    source: &ExperimentSource,
    config: &ExperimentConfig,
    truth: &Option<GroundTruth>,
) -> Result<Vec<SavingsRow>> {
    let Some(stopping) = config.stopping else {
        return Ok(Vec::new());
    };
    let params = ConfidenceParams::new(stopping.epsilon, stopping.alpha)?;
    let flat = required_budget_flat(&params);
    let mut rows = Vec::new();
    for &strategy in &config.strategies {
        let row = match strategy {
            Strategy::Uniform | Strategy::Stratified => SavingsRow {
                strategy: strategy.name().to_string(),
                required_n: Some(flat),
                savings_vs_flat: Some(0.0),
                achieved: true,
            },
            Strategy::Masa => match source {
                ExperimentSource::Synthetic(scenario) => {
                    let report = required_budget_masa(
                        scenario,
                        &params,
                        &MasaBudgetOptions::new(
                            stopping.ceiling.unwrap_or(flat),
                            config.explore,
                            config.master_seed,
                        ),
                    )?;
                    SavingsRow {
                        strategy: strategy.name().to_string(),
                        required_n: report.adaptive,
                        savings_vs_flat: report.savings,
                        achieved: report.adaptive.is_some(),
                    }
                }
                // Live or replayed sources have no resampling budget to
                // burn on a stopping search; no adaptive requirement is
                // reported for them.
                _ => SavingsRow {
                    strategy: strategy.name().to_string(),
                    required_n: None,
                    savings_vs_flat: None,
                    achieved: false,
                },
            },
            Strategy::OracleOptimal => {
                let required = truth.as_ref().and_then(|t| {
                    smallest_budget_at_target(
                        params.epsilon * params.epsilon,
                        flat,
                        |n| optimal_loss(n, source.weights(), &t.scores).ok(),
                    )
                });
                SavingsRow {
                    strategy: strategy.name().to_string(),
                    required_n: required,
                    savings_vs_flat: required.map(|n| 1.0 - n as f64 / flat as f64),
                    achieved: required.is_some(),
                }
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

fn smallest_budget_at_target(
    target: f64,
    ceiling: u64,
    loss_at: impl Fn(u64) -> Option<f64>,
) -> Option<u64> {
    let (mut lo, mut hi) = (1u64, ceiling);
    if loss_at(hi)? > target {
        return None;
    }
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if loss_at(mid)? <= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(lo)
}

/// The closed-form expected loss of this strategy's idealized deterministic
/// allocation, used as the reference column on error curves.
fn closed_form_reference(
    strategy: Strategy,
    budget: u64,
    p: &PartitionWeights,
    scores: &ScoreGrid,
) -> Option<f64> {
    match strategy {
        // Uniform draws hit partitions proportionally to mass:
        // sum p^2 s / (p N) = sum p s / N.
        Strategy::Uniform => Some(
            p.active().map(|c| p.mass(c) * scores.score(c)).sum::<f64>() / budget as f64,
        ),
        Strategy::Stratified => {
            let alloc = stratified_allocation(p, budget).ok()?;
            expected_loss_closed_form(&alloc, p, scores).ok()
        }
        Strategy::Masa | Strategy::OracleOptimal => optimal_loss(budget, p, scores).ok(),
    }
}

fn mean_and_stderr(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some((var / n).sqrt()))
}

/// Stable fingerprint of the run configuration, for the report header.
fn config_hash(config: &ExperimentConfig) -> String {
    use crate::harness::seed::splitmix64;
    let mut acc = splitmix64(config.master_seed ^ 0x5eed);
    for s in &config.strategies {
        for b in s.name().bytes() {
            acc = splitmix64(acc ^ b as u64);
        }
    }
    for &b in &config.budgets {
        acc = splitmix64(acc ^ b);
    }
    acc = splitmix64(acc ^ config.trials);
    acc = splitmix64(acc ^ config.explore.to_bits());
    format!("{acc:016x}")
}
