//! Sources of predicted labels.
//!
//! Every oracle honors the same contract: one successful `predict` call is
//! one query, counted exactly once. The samplers never look inside an oracle;
//! budget accounting is reconciled against the counter at the end of a run.
//!
//! Three implementations:
//! - [`SimulatedOracle`] draws from a [`Scenario`]'s ground-truth label
//!   distributions. Sampling conditions only on the partition (item identity
//!   is irrelevant in simulation).
//! - [`ReplayOracle`] returns recorded predictions by item id, for exact
//!   offline evaluation.
//! - [`HttpOracle`] posts items to a live endpoint with bounded retries.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::estimator::score_from_distribution;
use crate::types::{
    ConfusionMatrix, Dimensions, LabelDistribution, PartitionId, PartitionWeights, ScoreGrid,
    ShiftMatrix,
};

/// Ground truth for simulation: partition masses, the true predicted-label
/// distribution of the current model on every partition, and the reference
/// confusion matrix. Everything an evaluation needs (true confusion, true
/// shift, true uncertainty scores, optimal allocations) derives from this.
#[derive(Debug, Clone)]
pub struct Scenario {
    dims: Dimensions,
    p: PartitionWeights,
    mu: Vec<LabelDistribution>,
    c_old: ConfusionMatrix,
}

impl Scenario {
    /// `mu` is indexed by cell in lexicographic order; zero-mass cells still
    /// need a (never sampled) placeholder distribution.
    pub fn new(
        dims: Dimensions,
        p: PartitionWeights,
        mu: Vec<LabelDistribution>,
        c_old: ConfusionMatrix,
    ) -> Result<Self> {
        if p.dims() != dims {
            return Err(Error::Dimension("partition weights do not match dimensions".into()));
        }
        if mu.len() != dims.partition_count() {
            return Err(Error::Dimension(format!(
                "expected {} label distributions, got {}",
                dims.partition_count(),
                mu.len()
            )));
        }
        for dist in &mu {
            if dist.labels() != dims.labels() {
                return Err(Error::Dimension(format!(
                    "label distribution over {} labels, expected {}",
                    dist.labels(),
                    dims.labels()
                )));
            }
        }
        if c_old.labels() != dims.labels() {
            return Err(Error::Dimension("reference confusion matrix has wrong size".into()));
        }
        let scenario = Self { dims, p, mu, c_old };
        // Deriving the true confusion revalidates the probability algebra.
        scenario.true_confusion()?;
        Ok(scenario)
    }

    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    pub fn weights(&self) -> &PartitionWeights {
        &self.p
    }

    pub fn c_old(&self) -> &ConfusionMatrix {
        &self.c_old
    }

    pub fn mu(&self, cell: PartitionId) -> &LabelDistribution {
        &self.mu[cell.label * self.dims.levels() + cell.level]
    }

    /// True confusion matrix of the current model:
    /// `C[i][j] = sum_k p[i,k] * mu[i,k][j]`.
    pub fn true_confusion(&self) -> Result<ConfusionMatrix> {
        let labels = self.dims.labels();
        let mut rows = vec![vec![0.0; labels]; labels];
        for cell in self.p.active() {
            let mass = self.p.mass(cell);
            let mu = self.mu(cell);
            for (j, slot) in rows[cell.label].iter_mut().enumerate() {
                *slot += mass * mu.prob(j);
            }
        }
        ConfusionMatrix::from_rows(rows)
    }

    /// True shift relative to the reference matrix.
    pub fn true_shift(&self) -> Result<ShiftMatrix> {
        crate::types::shift_between(&self.true_confusion()?, &self.c_old)
    }

    /// True uncertainty score of every cell.
    pub fn true_scores(&self) -> ScoreGrid {
        let scores = self
            .dims
            .cells()
            .map(|cell| score_from_distribution(self.mu(cell)).max(0.0))
            .collect();
        ScoreGrid::new(self.dims, scores).expect("scores derived from distributions are valid")
    }
}

/// One labeled, difficulty-tagged evaluation item.
#[derive(Debug, Clone)]
pub struct ItemRecord {
    pub id: String,
    /// True label, 0-based.
    pub label: usize,
    /// Difficulty level, 0-based.
    pub level: usize,
}

/// The evaluation set split into its (true label, difficulty) partitions.
#[derive(Debug, Clone)]
pub struct PartitionedDataset {
    dims: Dimensions,
    items: Vec<ItemRecord>,
    index: BTreeMap<PartitionId, Vec<usize>>,
}

impl PartitionedDataset {
    pub fn new(dims: Dimensions, items: Vec<ItemRecord>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Data("dataset has no items".into()));
        }
        let mut index: BTreeMap<PartitionId, Vec<usize>> = BTreeMap::new();
        for (pos, item) in items.iter().enumerate() {
            if item.label >= dims.labels() {
                return Err(Error::Data(format!(
                    "item {:?} has true label {} outside 1..={}",
                    item.id,
                    item.label + 1,
                    dims.labels()
                )));
            }
            if item.level >= dims.levels() {
                return Err(Error::Data(format!(
                    "item {:?} has difficulty {} outside 1..={}",
                    item.id,
                    item.level + 1,
                    dims.levels()
                )));
            }
            index
                .entry(PartitionId::new(item.label, item.level))
                .or_default()
                .push(pos);
        }
        Ok(Self { dims, items, index })
    }

    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item(&self, pos: usize) -> &ItemRecord {
        &self.items[pos]
    }

    pub fn items_in(&self, cell: PartitionId) -> &[usize] {
        self.index.get(&cell).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Empirical partition masses: cell size over dataset size.
    pub fn empirical_weights(&self) -> Result<PartitionWeights> {
        let total = self.items.len() as f64;
        let mut rows = vec![vec![0.0; self.dims.levels()]; self.dims.labels()];
        for (cell, members) in &self.index {
            rows[cell.label][cell.level] = members.len() as f64 / total;
        }
        PartitionWeights::from_grid(self.dims, rows)
    }
}

/// A source of predicted labels. `predict` returns the 0-based predicted
/// label for an item (replay, live) or for an anonymous draw from a
/// partition (simulation); the query counter moves by exactly one per
/// successful call and not at all on failure.
pub trait PredictionOracle {
    fn predict(&mut self, cell: PartitionId, item_id: Option<&str>) -> Result<usize>;
    fn queries(&self) -> u64;
}

/// Draws labels from a scenario's true per-partition distributions by
/// inverse CDF over a dedicated deterministic stream.
pub struct SimulatedOracle {
    dims: Dimensions,
    cdf: Vec<Vec<f64>>,
    rng: ChaCha12Rng,
    queries: u64,
}

impl SimulatedOracle {
    pub fn new(scenario: &Scenario, seed: u64) -> Self {
        let dims = scenario.dims();
        let cdf = dims
            .cells()
            .map(|cell| {
                let mut acc = 0.0;
                scenario
                    .mu(cell)
                    .probs()
                    .iter()
                    .map(|&v| {
                        acc += v;
                        acc
                    })
                    .collect()
            })
            .collect();
        Self {
            dims,
            cdf,
            rng: ChaCha12Rng::seed_from_u64(seed),
            queries: 0,
        }
    }
}

impl PredictionOracle for SimulatedOracle {
    fn predict(&mut self, cell: PartitionId, _item_id: Option<&str>) -> Result<usize> {
        if cell.label >= self.dims.labels() || cell.level >= self.dims.levels() {
            return Err(Error::Data(format!("partition {cell} out of range")));
        }
        let cdf = &self.cdf[cell.label * self.dims.levels() + cell.level];
        let u: f64 = self.rng.random();
        let label = cdf
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.dims.labels() - 1);
        self.queries += 1;
        Ok(label)
    }

    fn queries(&self) -> u64 {
        self.queries
    }
}

/// Recorded predictions keyed by item id.
#[derive(Debug, Clone, Default)]
pub struct PredictionLog {
    entries: HashMap<String, usize>,
}

impl PredictionLog {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, usize)>) -> Self {
        Self {
            entries: entries.into_iter().collect(),
        }
    }

    pub fn insert(&mut self, id: String, label: usize) -> Option<usize> {
        self.entries.insert(id, label)
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.entries.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Replays recorded predictions; asking for an unrecorded item is an error
/// and does not consume budget. Borrows the log so parallel runs can share
/// one without copying it.
pub struct ReplayOracle<'a> {
    log: &'a PredictionLog,
    queries: u64,
}

impl<'a> ReplayOracle<'a> {
    pub fn new(log: &'a PredictionLog) -> Self {
        Self { log, queries: 0 }
    }
}

impl PredictionOracle for ReplayOracle<'_> {
    fn predict(&mut self, _cell: PartitionId, item_id: Option<&str>) -> Result<usize> {
        let id = item_id.ok_or_else(|| {
            Error::Config("replay oracle needs an item id; it cannot sample partitions".into())
        })?;
        let label = self.log.get(id).ok_or_else(|| Error::MissingItem(id.to_string()))?;
        self.queries += 1;
        Ok(label)
    }

    fn queries(&self) -> u64 {
        self.queries
    }
}

/// Connection settings for a live prediction endpoint.
///
/// Defaults are pinned so failure behavior is reproducible: 3 attempts,
/// backoff `0.5s * 2^attempt`, 10s request timeout.
#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub url: String,
    pub bearer_token: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
    pub backoff_base: Duration,
    /// Optional fixed pause between consecutive queries.
    pub inter_query_delay: Option<Duration>,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            bearer_token: None,
            timeout: Duration::from_secs(10),
            retries: 3,
            backoff_base: Duration::from_millis(500),
            inter_query_delay: None,
        }
    }
}

#[derive(serde::Serialize)]
struct PredictRequest<'a> {
    id: &'a str,
    payload: serde_json::Value,
}

#[derive(serde::Deserialize)]
struct PredictResponse {
    label: i64,
}

/// Queries a live endpoint: POST `{"id": ..., "payload": ...}`, expecting
/// `{"label": n}` with a 1-based label in range. Non-200 responses and
/// transport errors are retried with exponential backoff; exhausting the
/// retry budget is a query error and the call counts no budget.
pub struct HttpOracle {
    config: EndpointConfig,
    labels: usize,
    client: reqwest::blocking::Client,
    queries: u64,
}

impl HttpOracle {
    pub fn new(config: EndpointConfig, labels: usize) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Query(format!("building http client: {e}")))?;
        Ok(Self {
            config,
            labels,
            client,
            queries: 0,
        })
    }

    fn attempt(&self, id: &str) -> std::result::Result<PredictResponse, String> {
        let mut request = self.client.post(&self.config.url).json(&PredictRequest {
            id,
            payload: serde_json::Value::Null,
        });
        if let Some(token) = &self.config.bearer_token {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|e| e.to_string())?;
        if !response.status().is_success() {
            return Err(format!("status {}", response.status()));
        }
        response.json().map_err(|e| e.to_string())
    }
}

impl PredictionOracle for HttpOracle {
    fn predict(&mut self, _cell: PartitionId, item_id: Option<&str>) -> Result<usize> {
        let id = item_id
            .ok_or_else(|| Error::Config("http oracle needs an item id".into()))?;
        if let Some(delay) = self.config.inter_query_delay {
            std::thread::sleep(delay);
        }
        let mut last_err = String::new();
        for attempt in 0..self.config.retries {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff_base * 2u32.pow(attempt - 1));
            }
            match self.attempt(id) {
                Ok(resp) => {
                    let one_based = resp.label;
                    if one_based < 1 || one_based as usize > self.labels {
                        return Err(Error::Protocol(format!(
                            "label {one_based} outside 1..={}",
                            self.labels
                        )));
                    }
                    self.queries += 1;
                    return Ok(one_based as usize - 1);
                }
                Err(e) => last_err = e,
            }
        }
        Err(Error::Query(format!(
            "{} attempts to {} failed, last: {last_err}",
            self.config.retries, self.config.url
        )))
    }

    fn queries(&self) -> u64 {
        self.queries
    }
}
