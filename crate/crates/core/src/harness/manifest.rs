//! JSONL dataset ingestion.
//!
//! A manifest line carries one labeled item:
//!
//! ```text
//! {"id": "x1", "true_label": 1, "difficulty": 2, "confidence": 0.83, "old_prediction": 1}
//! ```
//!
//! `difficulty` and `confidence` are optional; with `K > 1` at least one of
//! them must be present (confidences are bucketed into quantile levels).
//! `old_prediction` rows, when present on every item, tally the reference
//! confusion matrix.
//!
//! A prediction log line is `{"id": "x1", "label": 2}`. Labels on the wire
//! are 1-based.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::oracle::{ItemRecord, PartitionedDataset, PredictionLog};
use crate::types::{ConfusionMatrix, Dimensions, PartitionWeights};

#[derive(Debug, Deserialize)]
struct ManifestRow {
    id: String,
    true_label: u64,
    #[serde(default)]
    difficulty: Option<u64>,
    #[serde(default)]
    confidence: Option<f64>,
    #[serde(default)]
    old_prediction: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct LogRow {
    id: String,
    label: u64,
}

/// Everything a manifest provides: the partitioned items, their empirical
/// masses, and (when every row has `old_prediction`) the reference matrix.
#[derive(Debug)]
pub struct IngestedManifest {
    pub dataset: PartitionedDataset,
    pub weights: PartitionWeights,
    pub c_old: Option<ConfusionMatrix>,
}

pub fn ingest_manifest(path: &Path, dims: Dimensions) -> Result<IngestedManifest> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open manifest {}: {e}", path.display())))?;
    let reader = BufReader::new(file);

    let mut rows: Vec<ManifestRow> = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("manifest line {}: {e}", line_no + 1))
        })?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("manifest {} is empty", path.display())));
    }

    let mut seen = std::collections::HashSet::new();
    for row in &rows {
        if !seen.insert(row.id.as_str()) {
            return Err(Error::Data(format!("duplicate item id {:?}", row.id)));
        }
    }

    let check_label = |value: u64, what: &str, id: &str| -> Result<usize> {
        if value < 1 || value > dims.labels() as u64 {
            return Err(Error::Data(format!(
                "item {id:?}: {what} {value} outside 1..={}",
                dims.labels()
            )));
        }
        Ok(value as usize - 1)
    };

    // Difficulty: explicit column wins; otherwise bucket confidences.
    let levels: Vec<usize> = if dims.levels() == 1 {
        vec![0; rows.len()]
    } else if rows.iter().all(|r| r.difficulty.is_some()) {
        let mut levels = Vec::with_capacity(rows.len());
        for row in &rows {
            let d = row.difficulty.unwrap();
            if d < 1 || d > dims.levels() as u64 {
                return Err(Error::Data(format!(
                    "item {:?}: difficulty {d} outside 1..={}",
                    row.id,
                    dims.levels()
                )));
            }
            levels.push(d as usize - 1);
        }
        levels
    } else if rows.iter().all(|r| r.confidence.is_some()) {
        let confidences: Vec<f64> = rows.iter().map(|r| r.confidence.unwrap()).collect();
        bucket_difficulty(&confidences, dims.levels())?
            .into_iter()
            .map(|level| level - 1)
            .collect()
    } else {
        return Err(Error::Data(format!(
            "{} difficulty levels requested but some items have neither a difficulty nor a confidence",
            dims.levels()
        )));
    };

    let mut items = Vec::with_capacity(rows.len());
    let mut old_counts = vec![0u64; dims.labels() * dims.labels()];
    let mut have_old = true;
    for (row, &level) in rows.iter().zip(&levels) {
        let label = check_label(row.true_label, "true label", &row.id)?;
        items.push(ItemRecord {
            id: row.id.clone(),
            label,
            level,
        });
        match row.old_prediction {
            Some(pred) => {
                let predicted = check_label(pred, "old prediction", &row.id)?;
                old_counts[label * dims.labels() + predicted] += 1;
            }
            None => have_old = false,
        }
    }

    let c_old = if have_old {
        let total = rows.len() as f64;
        let rows_matrix: Vec<Vec<f64>> = (0..dims.labels())
            .map(|i| {
                (0..dims.labels())
                    .map(|j| old_counts[i * dims.labels() + j] as f64 / total)
                    .collect()
            })
            .collect();
        Some(ConfusionMatrix::from_rows(rows_matrix)?)
    } else {
        None
    };

    let dataset = PartitionedDataset::new(dims, items)?;
    let weights = dataset.empirical_weights()?;
    Ok(IngestedManifest {
        dataset,
        weights,
        c_old,
    })
}

/// Quantile bucketing of confidences into `1..=k` difficulty levels: the
/// item at sorted rank `r` of `n` gets level `floor(r*k/n) + 1`. Ties keep
/// input order (stable sort), and every level is nonempty once `n >= k`.
pub fn bucket_difficulty(confidences: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Config("need at least one difficulty level".into()));
    }
    let n = confidences.len();
    if n < k {
        return Err(Error::Data(format!(
            "cannot split {n} items into {k} difficulty levels"
        )));
    }
    for &c in confidences {
        if !c.is_finite() {
            return Err(Error::Data(format!("non-finite confidence {c}")));
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| confidences[a].partial_cmp(&confidences[b]).unwrap());
    let mut levels = vec![0usize; n];
    for (rank, &item) in order.iter().enumerate() {
        levels[item] = rank * k / n + 1;
    }
    Ok(levels)
}

/// Read a prediction log, validating the 1-based labels against `labels`.
pub fn read_prediction_log(path: &Path, labels: usize) -> Result<PredictionLog> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("cannot open log {}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut log = PredictionLog::default();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: LogRow = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("log line {}: {e}", line_no + 1)))?;
        if row.label < 1 || row.label > labels as u64 {
            return Err(Error::Data(format!(
                "log item {:?}: label {} outside 1..={labels}",
                row.id, row.label
            )));
        }
        if log.insert(row.id.clone(), row.label as usize - 1).is_some() {
            return Err(Error::Data(format!("duplicate log entry for {:?}", row.id)));
        }
    }
    if log.is_empty() {
        return Err(Error::Data(format!("prediction log {} is empty", path.display())));
    }
    Ok(log)
}
