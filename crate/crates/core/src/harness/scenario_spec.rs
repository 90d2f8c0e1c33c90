//! Synthetic scenario files.
//!
//! ```text
//! {
//!   "L": 2, "K": 1,
//!   "p":  [[0.6], [0.4]],
//!   "mu": [[[0.9, 0.1]], [[0.2, 0.8]]],
//!   "c_old": [[0.5, 0.1], [0.1, 0.3]]
//! }
//! ```
//!
//! `p[i][k]` is the partition mass, `mu[i][k][j]` the current model's
//! predicted-label distribution. `c_old` may be omitted when `mu_old` (same
//! shape as `mu`) is given; the reference matrix is then derived from it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::Scenario;
use crate::types::{ConfusionMatrix, Dimensions, LabelDistribution, PartitionWeights};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(rename = "L")]
    pub labels: usize,
    #[serde(rename = "K")]
    pub levels: usize,
    pub p: Vec<Vec<f64>>,
    pub mu: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_old: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_old: Option<Vec<Vec<Vec<f64>>>>,
}

impl ScenarioSpec {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read scenario {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("scenario {}: {e}", path.display())))
    }

    pub fn build(&self) -> Result<Scenario> {
        let dims = Dimensions::new(self.labels, self.levels)?;
        let p = PartitionWeights::from_grid(dims, self.p.clone())?;
        let mu = self.collect_mu(dims, &self.mu)?;
        let c_old = match (&self.c_old, &self.mu_old) {
            (Some(rows), _) => ConfusionMatrix::from_rows(rows.clone())?,
            (None, Some(old)) => {
                let mu_old = self.collect_mu(dims, old)?;
                derive_confusion(dims, &p, &mu_old)?
            }
            (None, None) => {
                return Err(Error::Config(
                    "scenario needs either c_old or mu_old to define the reference matrix".into(),
                ))
            }
        };
        Scenario::new(dims, p, mu, c_old)
    }

    fn collect_mu(
        &self,
        dims: Dimensions,
        table: &[Vec<Vec<f64>>],
    ) -> Result<Vec<LabelDistribution>> {
        if table.len() != dims.labels() {
            return Err(Error::Config(format!(
                "mu has {} label rows, expected {}",
                table.len(),
                dims.labels()
            )));
        }
        let mut out = Vec::with_capacity(dims.partition_count());
        for (i, per_level) in table.iter().enumerate() {
            if per_level.len() != dims.levels() {
                return Err(Error::Config(format!(
                    "mu[{i}] has {} level entries, expected {}",
                    per_level.len(),
                    dims.levels()
                )));
            }
            for dist in per_level {
                out.push(LabelDistribution::new(dist.clone())?);
            }
        }
        Ok(out)
    }
}

fn derive_confusion(
    dims: Dimensions,
    p: &PartitionWeights,
    mu: &[LabelDistribution],
) -> Result<ConfusionMatrix> {
    let labels = dims.labels();
    let mut rows = vec![vec![0.0; labels]; labels];
    for cell in p.active() {
        let mass = p.mass(cell);
        let dist = &mu[cell.label * dims.levels() + cell.level];
        for (j, slot) in rows[cell.label].iter_mut().enumerate() {
            *slot += mass * dist.prob(j);
        }
    }
    ConfusionMatrix::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_from_explicit_reference() {
        let spec: ScenarioSpec = serde_json::from_str(
            r#"{
                "L": 2, "K": 1,
                "p": [[0.6], [0.4]],
                "mu": [[[0.9, 0.1]], [[0.2, 0.8]]],
                "c_old": [[0.5, 0.1], [0.1, 0.3]]
            }"#,
        )
        .unwrap();
        let scenario = spec.build().unwrap();
        assert!((scenario.true_shift().unwrap().get(0, 0) - 0.04).abs() < 1e-12);
    }

    #[test]
    fn derives_reference_from_old_mu() {
        let spec: ScenarioSpec = serde_json::from_str(
            r#"{
                "L": 2, "K": 1,
                "p": [[0.6], [0.4]],
                "mu": [[[0.9, 0.1]], [[0.2, 0.8]]],
                "mu_old": [[[0.9, 0.1]], [[0.2, 0.8]]]
            }"#,
        )
        .unwrap();
        let scenario = spec.build().unwrap();
        // Old and new models coincide, so there is no shift.
        assert!(scenario.true_shift().unwrap().sq_frobenius() < 1e-24);
    }

    #[test]
    fn requires_some_reference() {
        let spec: ScenarioSpec = serde_json::from_str(
            r#"{"L": 2, "K": 1, "p": [[0.6], [0.4]], "mu": [[[0.9, 0.1]], [[0.2, 0.8]]]}"#,
        )
        .unwrap();
        assert!(matches!(spec.build(), Err(Error::Config(_))));
    }
}
