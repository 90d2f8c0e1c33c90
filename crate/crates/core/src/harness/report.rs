//! Report files.
//!
//! - `curves.csv`: one row per (strategy, budget) with the Monte Carlo error
//!   and its closed-form reference.
//! - `savings.csv`: required sample sizes and savings against flat sampling.
//! - `summary.json`: the full report.
//! - `shift_estimate.json`: the representative estimated shift matrix.
//! - `traces/<strategy>_b<budget>_t<trial>.jsonl`: per-run decision traces,
//!   one header line then one line per query.
//!
//! Numbers are written with Rust's shortest round-trip float formatting, so
//! identical runs produce byte-identical files; the only timestamp lives in
//! `summary.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::experiment::{ExperimentReport, FinalEstimate, TraceRecord};
use crate::types::ShiftMatrix;

/// Paths written by [`emit_reports`].
#[derive(Debug, Clone)]
pub struct EmittedFiles {
    pub curves: Option<PathBuf>,
    pub savings: Option<PathBuf>,
    pub summary: PathBuf,
    pub shift_estimate: Option<PathBuf>,
    pub traces: Vec<PathBuf>,
}

pub fn emit_reports(report: &ExperimentReport, outdir: &Path) -> Result<EmittedFiles> {
    fs::create_dir_all(outdir)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", outdir.display())))?;

    let mut emitted = EmittedFiles {
        curves: None,
        savings: None,
        summary: outdir.join("summary.json"),
        shift_estimate: None,
        traces: Vec::new(),
    };

    if !report.curves.is_empty() {
        let path = outdir.join("curves.csv");
        let mut out = String::from("strategy,budget,mean_sq_error,stderr,closed_form_ref\n");
        for point in &report.curves {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                point.strategy,
                point.budget,
                opt(point.mean_sq_error),
                opt(point.std_error),
                opt(point.closed_form_ref),
            ));
        }
        write_file(&path, out.as_bytes())?;
        emitted.curves = Some(path);
    }

    if !report.savings.is_empty() {
        let path = outdir.join("savings.csv");
        let mut out = String::from("strategy,required_n,savings_vs_flat\n");
        for row in &report.savings {
            out.push_str(&format!(
                "{},{},{}\n",
                row.strategy,
                row.required_n.map(|v| v.to_string()).unwrap_or_default(),
                opt(row.savings_vs_flat),
            ));
        }
        write_file(&path, out.as_bytes())?;
        emitted.savings = Some(path);
    }

    let summary = serde_json::to_string_pretty(report)?;
    write_file(&emitted.summary, summary.as_bytes())?;

    if let Some(estimate) = &report.final_estimate {
        let path = outdir.join("shift_estimate.json");
        write_file(&path, serde_json::to_string_pretty(estimate)?.as_bytes())?;
        emitted.shift_estimate = Some(path);
    }

    if !report.traces.is_empty() {
        let dir = outdir.join("traces");
        fs::create_dir_all(&dir)
            .map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))?;
        for trace in &report.traces {
            let path = dir.join(format!(
                "{}_b{}_t{}.jsonl",
                trace.strategy.name(),
                trace.budget,
                trace.trial
            ));
            write_file(&path, render_trace(trace)?.as_bytes())?;
            emitted.traces.push(path);
        }
    }

    Ok(emitted)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    f.write_all(bytes)?;
    Ok(())
}

#[derive(Serialize)]
struct TraceHeader<'a> {
    kind: &'static str,
    generator: &'a str,
    strategy: &'a str,
    budget: u64,
    trial: u64,
    seed: u64,
    oracle_seed: u64,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    kind: &'static str,
    iteration: u64,
    /// 1-based (label, level).
    partition: [usize; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    item_id: Option<&'a str>,
    /// 1-based label.
    predicted_label: usize,
    sigma2: f64,
}

/// Write one run's trace as a standalone JSONL file.
pub fn write_trace(trace: &TraceRecord, path: &Path) -> Result<()> {
    write_file(path, render_trace(trace)?.as_bytes())
}

fn render_trace(trace: &TraceRecord) -> Result<String> {
    let mut out = String::new();
    out.push_str(&serde_json::to_string(&TraceHeader {
        kind: "header",
        generator: crate::sampler::GENERATOR,
        strategy: trace.strategy.name(),
        budget: trace.budget,
        trial: trace.trial,
        seed: trace.seed,
        oracle_seed: trace.oracle_seed,
    })?);
    out.push('\n');
    for event in &trace.events {
        out.push_str(&serde_json::to_string(&TraceLine {
            kind: "event",
            iteration: event.iteration,
            partition: [event.partition.label + 1, event.partition.level + 1],
            item_id: event.item_id.as_deref(),
            predicted_label: event.predicted_label + 1,
            sigma2: event.sigma2,
        })?);
        out.push('\n');
    }
    Ok(out)
}

/// Read back a `shift_estimate.json`; the estimate parses to the bit because
/// floats are serialized in shortest round-trip form.
pub fn read_shift_estimate(path: &Path) -> Result<(FinalEstimate, ShiftMatrix)> {
    #[derive(Deserialize)]
    struct Raw(FinalEstimate);
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let Raw(parsed) = Raw(serde_json::from_str(&text)?);
    let matrix = ShiftMatrix::from_rows(parsed.entries.clone())?;
    Ok((parsed, matrix))
}
