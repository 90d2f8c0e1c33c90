//! `apishift`: estimate how a classifier's confusion matrix has drifted from
//! a reference measurement, under a strict query budget.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 oracle or
//! network error, 4 success with aborted (partial) runs present.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use apishift_core::budget::{
    required_budget_flat, required_budget_masa, ConfidenceParams, MasaBudgetOptions,
};
use apishift_core::harness::{
    config_base, emit_reports, run_experiment, AssessConfig, BudgetConfig, ExperimentReport,
    SimulateConfig,
};
use apishift_core::Error;

#[derive(Parser)]
#[command(name = "apishift", version, about = "Confusion-matrix shift assessment under a query budget")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo experiment on a synthetic scenario.
    Simulate(RunArgs),
    /// Assess a real dataset against recorded predictions or a live endpoint.
    Assess(RunArgs),
    /// Required-sample-size table for a target error and confidence.
    Budget(BudgetArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report files.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write one decision-trace file per run.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct BudgetArgs {
    #[arg(long)]
    config: PathBuf,
    /// Optional output directory for budget.json and savings.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's simulation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the adaptive stopping run's decision trace.
    #[arg(long)]
    trace: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => run_simulate(&args),
        Command::Assess(args) => run_assess(&args),
        Command::Budget(args) => run_budget(&args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Degenerate(_) => 1,
        Error::Query(_) | Error::Protocol(_) | Error::MissingItem(_) => 3,
        _ => 2,
    }
}

fn run_simulate(args: &RunArgs) -> Result<u8, Error> {
    let mut config = SimulateConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    let (source, experiment) = config.build(&config_base(&args.config), args.trace)?;
    let report = run_experiment(&source, &experiment)?;
    finish_run(&report, &args.out)
}

fn run_assess(args: &RunArgs) -> Result<u8, Error> {
    let mut config = AssessConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    let base = config_base(&args.config);
    if config.k_values.is_empty() {
        let (source, experiment) = config.build(&base, args.trace)?;
        let report = run_experiment(&source, &experiment)?;
        return finish_run(&report, &args.out);
    }
    // K sweep: one full assessment per difficulty-level count, each in its
    // own subdirectory.
    let mut code = 0u8;
    for &levels in &config.k_values {
        println!("== K = {levels} ==");
        let (source, experiment) = config.build_with_levels(&base, args.trace, levels)?;
        let report = run_experiment(&source, &experiment)?;
        code = code.max(finish_run(&report, &args.out.join(format!("K{levels}")))?);
    }
    Ok(code)
}

fn finish_run(report: &ExperimentReport, out: &Path) -> Result<u8, Error> {
    let files = emit_reports(report, out)?;
    for point in &report.curves {
        match (point.mean_sq_error, point.closed_form_ref) {
            (Some(err), Some(reference)) => println!(
                "{:>14} N={:<6} mean_sq_error={err:.6e} (closed-form ref {reference:.6e})",
                point.strategy, point.budget
            ),
            (Some(err), None) => println!(
                "{:>14} N={:<6} mean_sq_error={err:.6e}",
                point.strategy, point.budget
            ),
            _ => println!(
                "{:>14} N={:<6} completed={} aborted={}",
                point.strategy,
                point.budget,
                point.trials - point.aborted_trials,
                point.aborted_trials
            ),
        }
    }
    if let Some(estimate) = &report.final_estimate {
        println!(
            "shift estimate ({} at N={}): accuracy change {:+.4}",
            estimate.strategy, estimate.budget, estimate.trace_of_shift
        );
    }
    println!("reports written to {}", files.summary.parent().unwrap().display());
    if report.aborted_runs > 0 {
        eprintln!("warning: {} run(s) ended early with partial results", report.aborted_runs);
        return Ok(4);
    }
    Ok(0)
}

fn run_budget(args: &BudgetArgs) -> Result<u8, Error> {
    let mut config = BudgetConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let params = ConfidenceParams::new(config.epsilon, config.alpha)?;
    let flat = required_budget_flat(&params);
    println!(
        "target: frobenius error <= {} with confidence {:.1}%",
        config.epsilon,
        (1.0 - config.alpha) * 100.0
    );
    println!("uniform/stratified (flat bound): {flat} queries");

    let mut adaptive_line = serde_json::json!(null);
    let mut stopping_trace = None;
    if let Some(scenario) = config.scenario(&config_base(&args.config))? {
        let mut options =
            MasaBudgetOptions::new(config.ceiling.unwrap_or(flat), config.explore, config.seed);
        options.collect_trace = args.trace;
        let report = required_budget_masa(&scenario, &params, &options)?;
        stopping_trace = report.trace.clone();
        match (report.adaptive, report.savings) {
            (Some(n), Some(saved)) => {
                println!("adaptive: {n} queries ({:.1}% saved)", saved * 100.0);
                adaptive_line = serde_json::json!({
                    "required_n": n,
                    "savings_vs_flat": saved,
                });
            }
            _ => {
                println!(
                    "adaptive: bound not met within ceiling {} queries",
                    report.ceiling
                );
                adaptive_line = serde_json::json!({"required_n": null, "ceiling": report.ceiling});
            }
        }
    } else {
        println!("adaptive: no scenario given, flat bound only");
    }

    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        let body = serde_json::json!({
            "epsilon": config.epsilon,
            "alpha": config.alpha,
            "flat_required_n": flat,
            "adaptive": adaptive_line,
        });
        std::fs::write(out.join("budget.json"), serde_json::to_string_pretty(&body)?)?;
        let mut csv = String::from("strategy,required_n,savings_vs_flat\n");
        csv.push_str(&format!("uniform,{flat},0\n"));
        csv.push_str(&format!("stratified,{flat},0\n"));
        match (&adaptive_line["required_n"].as_u64(), &adaptive_line["savings_vs_flat"].as_f64()) {
            (Some(n), Some(s)) => csv.push_str(&format!("masa,{n},{s}\n")),
            _ => csv.push_str("masa,,\n"),
        }
        std::fs::write(out.join("savings.csv"), csv)?;
        if let Some(events) = stopping_trace {
            let record = apishift_core::harness::experiment::TraceRecord {
                strategy: apishift_core::sampler::Strategy::Masa,
                budget: config.ceiling.unwrap_or(flat),
                trial: 0,
                seed: config.seed,
                oracle_seed: config.seed,
                events,
            };
            apishift_core::harness::write_trace(&record, &out.join("budget_trace.jsonl"))?;
        }
        println!("budget table written to {}", out.display());
    }
    Ok(0)
}
