//! File-level configuration for the command-line entry points. Everything is
//! JSON; paths inside a config resolve relative to the config file's parent
//! directory.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::experiment::{ExperimentConfig, ExperimentSource, StoppingSpec};
use crate::harness::manifest::{ingest_manifest, read_prediction_log};
use crate::harness::scenario_spec::ScenarioSpec;
use crate::oracle::EndpointConfig;
use crate::sampler::Strategy;
use crate::types::{ConfusionMatrix, Dimensions, WeightMatrix};

fn default_explore() -> f64 {
    crate::sampler::DEFAULT_EXPLORE
}

fn default_trials() -> u64 {
    1
}

/// `simulate` config: a synthetic scenario plus the experiment grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_path: Option<String>,
    pub strategies: Vec<Strategy>,
    pub budgets: Vec<u64>,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_explore")]
    pub explore: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopping: Option<StoppingSpec>,
}

impl SimulateConfig {
    pub fn load(path: &Path) -> Result<Self> {
        parse_config(path)
    }

    pub fn build(&self, base: &Path, trace: bool) -> Result<(ExperimentSource, ExperimentConfig)> {
        let spec = match (&self.scenario, &self.scenario_path) {
            (Some(spec), None) => spec.clone(),
            (None, Some(rel)) => ScenarioSpec::from_path(&base.join(rel))?,
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give either an inline scenario or a scenario_path, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config("a scenario or scenario_path is required".into()))
            }
        };
        let scenario = spec.build()?;
        let config = ExperimentConfig {
            strategies: self.strategies.clone(),
            budgets: self.budgets.clone(),
            trials: self.trials,
            master_seed: self.master_seed,
            explore: self.explore,
            weights_matrix: parse_weights(&self.weight_matrix)?,
            workers: self.workers,
            collect_traces: trace,
            stopping: self.stopping,
        };
        Ok((ExperimentSource::Synthetic(scenario), config))
    }
}

/// Wire settings for a live endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointSpec {
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bearer_token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_s: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retries: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backoff_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inter_query_delay_ms: Option<u64>,
}

impl EndpointSpec {
    pub fn to_endpoint(&self) -> EndpointConfig {
        let mut cfg = EndpointConfig::new(self.url.clone());
        cfg.bearer_token = self.bearer_token.clone();
        if let Some(s) = self.timeout_s {
            cfg.timeout = Duration::from_secs(s);
        }
        if let Some(r) = self.retries {
            cfg.retries = r;
        }
        if let Some(ms) = self.backoff_ms {
            cfg.backoff_base = Duration::from_millis(ms);
        }
        cfg.inter_query_delay = self.inter_query_delay_ms.map(Duration::from_millis);
        cfg
    }
}

/// `assess` config: a manifest plus recorded predictions or a live endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssessConfig {
    #[serde(rename = "L")]
    pub labels: usize,
    #[serde(rename = "K")]
    pub levels: usize,
    /// Optional sweep over difficulty-level counts: the assessment runs once
    /// per listed K (re-bucketing confidences each time), overriding `K`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub k_values: Vec<usize>,
    pub manifest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<EndpointSpec>,
    /// Reference confusion matrix; optional when the manifest carries
    /// `old_prediction` on every item.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_old: Option<Vec<Vec<f64>>>,
    pub strategies: Vec<Strategy>,
    pub budgets: Vec<u64>,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_explore")]
    pub explore: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopping: Option<StoppingSpec>,
}

impl AssessConfig {
    pub fn load(path: &Path) -> Result<Self> {
        parse_config(path)
    }

    pub fn build(&self, base: &Path, trace: bool) -> Result<(ExperimentSource, ExperimentConfig)> {
        self.build_with_levels(base, trace, self.levels)
    }

    /// Build with an explicit difficulty-level count, used by the K sweep.
    pub fn build_with_levels(
        &self,
        base: &Path,
        trace: bool,
        levels: usize,
    ) -> Result<(ExperimentSource, ExperimentConfig)> {
        let dims = Dimensions::new(self.labels, levels)?;
        let ingested = ingest_manifest(&base.join(&self.manifest), dims)?;
        let c_old = match (&self.c_old, ingested.c_old) {
            (Some(rows), _) => ConfusionMatrix::from_rows(rows.clone())?,
            (None, Some(tallied)) => tallied,
            (None, None) => {
                return Err(Error::Config(
                    "no reference matrix: provide c_old or an old_prediction column".into(),
                ))
            }
        };
        let source = match (&self.predictions, &self.endpoint) {
            (Some(log_path), None) => ExperimentSource::Replay {
                dataset: ingested.dataset,
                weights: ingested.weights,
                log: read_prediction_log(&base.join(log_path), self.labels)?,
                c_old,
            },
            (None, Some(endpoint)) => ExperimentSource::Endpoint {
                dataset: ingested.dataset,
                weights: ingested.weights,
                endpoint: endpoint.to_endpoint(),
                c_old,
            },
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give either recorded predictions or an endpoint, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "a predictions log or an endpoint is required".into(),
                ))
            }
        };
        let config = ExperimentConfig {
            strategies: self.strategies.clone(),
            budgets: self.budgets.clone(),
            trials: self.trials,
            master_seed: self.master_seed,
            explore: self.explore,
            weights_matrix: parse_weights(&self.weight_matrix)?,
            workers: self.workers,
            collect_traces: trace,
            stopping: self.stopping,
        };
        Ok((source, config))
    }
}

/// `budget` config: stopping targets plus the scenario to simulate the
/// adaptive rule on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetConfig {
    pub epsilon: f64,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ceiling: Option<u64>,
    #[serde(default = "default_explore")]
    pub explore: f64,
    #[serde(default)]
    pub seed: u64,
}

impl BudgetConfig {
    pub fn load(path: &Path) -> Result<Self> {
        parse_config(path)
    }

    pub fn scenario(&self, base: &Path) -> Result<Option<crate::oracle::Scenario>> {
        match (&self.scenario, &self.scenario_path) {
            (Some(spec), None) => Ok(Some(spec.build()?)),
            (None, Some(rel)) => Ok(Some(ScenarioSpec::from_path(&base.join(rel))?.build()?)),
            (None, None) => Ok(None),
            (Some(_), Some(_)) => Err(Error::Config(
                "give either an inline scenario or a scenario_path, not both".into(),
            )),
        }
    }
}

fn parse_weights(raw: &Option<Vec<Vec<f64>>>) -> Result<Option<WeightMatrix>> {
    raw.as_ref()
        .map(|rows| WeightMatrix::from_rows(rows.clone()))
        .transpose()
}

fn parse_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Resolve the directory that relative paths inside a config refer to.
pub fn config_base(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}
