//! Python bindings: the core matrix operations, estimators, allocation
//! rules, stopping bounds, and single-run samplers, exposed as plain lists
//! and dicts.
//!
//! Labels and difficulty levels are 0-based here, matching list indexing;
//! only the JSONL file formats are 1-based.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use apishift_core::budget::{self, ConfidenceParams, MasaBudgetOptions};
use apishift_core::estimator;
use apishift_core::harness::seed::{oracle_seed, trial_seed};
use apishift_core::harness::ScenarioSpec;
use apishift_core::loss;
use apishift_core::oracle::{Scenario as CoreScenario, SimulatedOracle};
use apishift_core::sampler::{self, RunResult, SamplerConfig, Strategy};
use apishift_core::types::{
    Allocation, Dimensions, LabelDistribution, PartitionWeights, ScoreGrid, ShiftMatrix,
    WeightMatrix,
};
use apishift_core::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Dimension(_) | Error::Construction(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn shift_from_rows(rows: Vec<Vec<f64>>) -> PyResult<ShiftMatrix> {
    ShiftMatrix::from_rows(rows).map_err(err)
}

fn parse_strategy(name: &str) -> PyResult<Strategy> {
    match name {
        "masa" => Ok(Strategy::Masa),
        "uniform" => Ok(Strategy::Uniform),
        "stratified" => Ok(Strategy::Stratified),
        "oracle_optimal" => Ok(Strategy::OracleOptimal),
        other => Err(PyValueError::new_err(format!(
            "unknown strategy {other:?}; expected masa, uniform, stratified or oracle_optimal"
        ))),
    }
}

fn grid_from_rows(p: &PartitionWeights, rows: Vec<Vec<f64>>) -> PyResult<ScoreGrid> {
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    ScoreGrid::new(p.dims(), flat).map_err(err)
}

fn alloc_rows(alloc: &Allocation) -> Vec<Vec<u64>> {
    let dims = alloc.dims();
    (0..dims.labels())
        .map(|label| {
            (0..dims.levels())
                .map(|level| alloc.count(apishift_core::types::PartitionId::new(label, level)))
                .collect()
        })
        .collect()
}

/// Entrywise difference of two confusion matrices.
#[pyfunction]
fn shift_between(new: Vec<Vec<f64>>, old: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let new = apishift_core::types::ConfusionMatrix::from_rows(new).map_err(err)?;
    let old = apishift_core::types::ConfusionMatrix::from_rows(old).map_err(err)?;
    Ok(apishift_core::types::shift_between(&new, &old).map_err(err)?.rows())
}

/// Squared weighted Frobenius norm of a shift; all-ones weights when omitted.
#[pyfunction]
#[pyo3(signature = (delta, weights=None))]
fn weighted_frobenius_sq(delta: Vec<Vec<f64>>, weights: Option<Vec<Vec<f64>>>) -> PyResult<f64> {
    let delta = shift_from_rows(delta)?;
    let w = match weights {
        Some(rows) => WeightMatrix::from_rows(rows).map_err(err)?,
        None => WeightMatrix::ones(delta.labels()),
    };
    loss::weighted_frobenius_sq(&delta, &w).map_err(err)
}

/// Uncertainty score of an exact label distribution: 1 - sum(mu^2).
#[pyfunction]
fn score_from_distribution(mu: Vec<f64>) -> PyResult<f64> {
    let mu = LabelDistribution::new(mu).map_err(err)?;
    Ok(estimator::score_from_distribution(&mu))
}

/// Unbiased uncertainty-score estimate from observed labels (at least two).
#[pyfunction]
fn batch_score(labels: Vec<usize>) -> PyResult<f64> {
    estimator::batch_score(&labels).map_err(err)
}

/// Optimal integer allocation of `n` samples given masses and scores.
#[pyfunction]
fn optimal_allocation(
    p: Vec<Vec<f64>>,
    scores: Vec<Vec<f64>>,
    n: u64,
) -> PyResult<Vec<Vec<u64>>> {
    let weights = weights_from_rows(p)?;
    let grid = grid_from_rows(&weights, scores)?;
    let alloc = sampler::optimal_allocation(&weights, &grid, n).map_err(err)?;
    Ok(alloc_rows(&alloc))
}

fn weights_from_rows(p: Vec<Vec<f64>>) -> PyResult<PartitionWeights> {
    let labels = p.len();
    let levels = p.first().map(Vec::len).unwrap_or(0);
    let dims = Dimensions::new(labels, levels).map_err(err)?;
    PartitionWeights::from_grid(dims, p).map_err(err)
}

/// Closed-form expected squared Frobenius error of a deterministic
/// allocation.
#[pyfunction]
fn expected_loss(counts: Vec<Vec<u64>>, p: Vec<Vec<f64>>, scores: Vec<Vec<f64>>) -> PyResult<f64> {
    let weights = weights_from_rows(p)?;
    let grid = grid_from_rows(&weights, scores)?;
    let flat: Vec<u64> = counts.into_iter().flatten().collect();
    let alloc = Allocation::new(weights.dims(), flat).map_err(err)?;
    loss::expected_loss_closed_form(&alloc, &weights, &grid).map_err(err)
}

/// Loss of the best real-valued allocation: (sum p*sigma)^2 / n.
#[pyfunction]
fn optimal_loss(n: u64, p: Vec<Vec<f64>>, scores: Vec<Vec<f64>>) -> PyResult<f64> {
    let weights = weights_from_rows(p)?;
    let grid = grid_from_rows(&weights, scores)?;
    loss::optimal_loss(n, &weights, &grid).map_err(err)
}

/// Flat-sampling budget for a target error and confidence.
#[pyfunction]
fn required_budget_flat(epsilon: f64, alpha: f64) -> PyResult<u64> {
    let params = ConfidenceParams::new(epsilon, alpha).map_err(err)?;
    Ok(budget::required_budget_flat(&params))
}

/// Concentration half-width of the score estimate after `t` samples.
#[pyfunction]
fn sigma_bound(t: u64, delta: f64) -> PyResult<f64> {
    budget::sigma_bound(t, delta).map_err(err)
}

/// Running per-partition statistics with constant-time updates.
#[pyclass]
struct PartitionStats {
    inner: estimator::PartitionStats,
}

#[pymethods]
impl PartitionStats {
    #[new]
    fn new(labels: usize) -> PyResult<Self> {
        if labels < 2 {
            return Err(PyValueError::new_err("need at least 2 labels"));
        }
        Ok(Self {
            inner: estimator::PartitionStats::new(labels),
        })
    }

    fn observe(&mut self, label: usize) -> PyResult<()> {
        self.inner.observe(label).map_err(err)
    }

    #[getter]
    fn n(&self) -> u64 {
        self.inner.n()
    }

    #[getter]
    fn mu_hat(&self) -> Vec<f64> {
        self.inner.mu_hat().to_vec()
    }

    #[getter]
    fn sigma2(&self) -> f64 {
        self.inner.sigma2()
    }
}

/// A fully specified ground-truth scenario: partition masses, the current
/// model's per-partition label distributions, and the reference confusion
/// matrix (either explicit or derived from old distributions).
#[pyclass]
struct Scenario {
    inner: CoreScenario,
}

#[pymethods]
impl Scenario {
    #[new]
    #[pyo3(signature = (p, mu, c_old=None, mu_old=None))]
    fn new(
        p: Vec<Vec<f64>>,
        mu: Vec<Vec<Vec<f64>>>,
        c_old: Option<Vec<Vec<f64>>>,
        mu_old: Option<Vec<Vec<Vec<f64>>>>,
    ) -> PyResult<Self> {
        let spec = ScenarioSpec {
            labels: p.len(),
            levels: p.first().map(Vec::len).unwrap_or(0),
            p,
            mu,
            c_old,
            mu_old,
        };
        Ok(Self {
            inner: spec.build().map_err(err)?,
        })
    }

    fn true_confusion(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.true_confusion().map_err(err)?.rows())
    }

    fn true_shift(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.true_shift().map_err(err)?.rows())
    }

    fn true_scores(&self) -> Vec<Vec<f64>> {
        let dims = self.inner.dims();
        let grid = self.inner.true_scores();
        (0..dims.labels())
            .map(|label| {
                (0..dims.levels())
                    .map(|level| {
                        grid.score(apishift_core::types::PartitionId::new(label, level))
                    })
                    .collect()
            })
            .collect()
    }

    /// One simulated sampling run. Returns a dict with the shift estimate,
    /// the realized allocation, the squared Frobenius error against the true
    /// shift, and bookkeeping fields.
    #[pyo3(signature = (strategy, budget, seed=0, explore=1.0))]
    fn run<'py>(
        &self,
        py: Python<'py>,
        strategy: &str,
        budget: u64,
        seed: u64,
        explore: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let strategy = parse_strategy(strategy)?;
        let result = self.run_once(strategy, budget, seed, explore)?;
        let truth = self.inner.true_shift().map_err(err)?;
        let error = result.shift_estimate.minus(&truth).map_err(err)?;
        let sq_error = loss::weighted_frobenius_sq(
            &error,
            &WeightMatrix::ones(self.inner.dims().labels()),
        )
        .map_err(err)?;

        let out = PyDict::new(py);
        out.set_item("shift_estimate", result.shift_estimate.rows())?;
        out.set_item("allocation", alloc_rows(&result.allocation))?;
        out.set_item("sq_error", sq_error)?;
        out.set_item("queries", result.queries)?;
        out.set_item("aborted", result.aborted)?;
        out.set_item("trace_len", result.trace.len())?;
        Ok(out)
    }

    /// Monte Carlo mean and standard error of the squared Frobenius error
    /// over independent trials with derived seeds.
    #[pyo3(signature = (strategy, budget, trials, master_seed=0, explore=1.0))]
    fn mc_error(
        &self,
        strategy: &str,
        budget: u64,
        trials: u64,
        master_seed: u64,
        explore: f64,
    ) -> PyResult<(f64, f64)> {
        if trials == 0 {
            return Err(PyValueError::new_err("trials must be at least 1"));
        }
        let strategy = parse_strategy(strategy)?;
        let truth = self.inner.true_shift().map_err(err)?;
        let w = WeightMatrix::ones(self.inner.dims().labels());
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for trial in 0..trials {
            let seed = trial_seed(master_seed, strategy, budget, trial);
            let result = self.run_once(strategy, budget, seed, explore)?;
            let sq = loss::weighted_frobenius_sq(
                &result.shift_estimate.minus(&truth).map_err(err)?,
                &w,
            )
            .map_err(err)?;
            sum += sq;
            sum_sq += sq * sq;
        }
        let mean = sum / trials as f64;
        let var = (sum_sq / trials as f64 - mean * mean).max(0.0);
        Ok((mean, (var / trials as f64).sqrt()))
    }

    /// Adaptive and flat required sample sizes for a target error and
    /// confidence, as a dict.
    #[pyo3(signature = (epsilon, alpha, ceiling=None, seed=0, explore=1.0))]
    fn required_budget<'py>(
        &self,
        py: Python<'py>,
        epsilon: f64,
        alpha: f64,
        ceiling: Option<u64>,
        seed: u64,
        explore: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let params = ConfidenceParams::new(epsilon, alpha).map_err(err)?;
        let flat = budget::required_budget_flat(&params);
        let report = budget::required_budget_masa(
            &self.inner,
            &params,
            &MasaBudgetOptions::new(ceiling.unwrap_or(flat), explore, seed),
        )
        .map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("flat", report.flat)?;
        out.set_item("adaptive", report.adaptive)?;
        out.set_item("savings", report.savings)?;
        Ok(out)
    }
}

impl Scenario {
    fn run_once(
        &self,
        strategy: Strategy,
        budget: u64,
        seed: u64,
        explore: f64,
    ) -> PyResult<RunResult> {
        let mut oracle = SimulatedOracle::new(&self.inner, oracle_seed(seed));
        let config = SamplerConfig {
            budget,
            explore,
            seed,
            strategy,
        };
        let truth = self.inner.true_scores();
        sampler::run_strategy(
            &mut oracle,
            None,
            Some(&truth),
            self.inner.weights(),
            self.inner.c_old(),
            &config,
        )
        .map_err(err)
    }
}

#[pymodule]
fn apishift(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(shift_between, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_frobenius_sq, m)?)?;
    m.add_function(wrap_pyfunction!(score_from_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(batch_score, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_allocation, m)?)?;
    m.add_function(wrap_pyfunction!(expected_loss, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_loss, m)?)?;
    m.add_function(wrap_pyfunction!(required_budget_flat, m)?)?;
    m.add_function(wrap_pyfunction!(sigma_bound, m)?)?;
    m.add_class::<PartitionStats>()?;
    m.add_class::<Scenario>()?;
    Ok(())
}
