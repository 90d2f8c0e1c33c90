//! Operational shell: dataset ingestion, synthetic scenarios, seeded Monte
//! Carlo experiments, and report files.

pub mod config;
pub mod experiment;
pub mod manifest;
pub mod report;
pub mod scenario_spec;
pub mod seed;

pub use config::{config_base, AssessConfig, BudgetConfig, EndpointSpec, SimulateConfig};
pub use experiment::{
    run_experiment, CurvePoint, ExperimentConfig, ExperimentReport, ExperimentSource,
    GroundTruth, SavingsRow, StoppingSpec,
};
pub use manifest::{bucket_difficulty, ingest_manifest, read_prediction_log, IngestedManifest};
pub use report::{emit_reports, read_shift_estimate, write_trace, EmittedFiles};
pub use scenario_spec::ScenarioSpec;
