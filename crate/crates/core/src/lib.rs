//! Estimation of confusion-matrix shifts in classification services under a
//! strict query budget.
//!
//! A service's confusion matrix `C` (joint probability of true and predicted
//! label) drifts as the provider retrains; the shift relative to a reference
//! matrix `C_old` is `C - C_old`. Re-measuring it naively costs one paid
//! query per sample. This crate estimates the shift from far fewer queries by
//! stratifying the evaluation set into (true label, difficulty) partitions
//! and steering the budget toward the partitions whose predictions are most
//! uncertain:
//!
//! - [`types`]: matrices, partition grids, allocations.
//! - [`loss`]: closed-form error of any deterministic allocation, and the
//!   continuous optimum it is measured against.
//! - [`estimator`]: constant-time running statistics per partition and the
//!   fusion step producing the shift estimate.
//! - [`sampler`]: the adaptive allocation loop plus uniform, stratified, and
//!   oracle-optimal baselines, each emitting a full decision trace.
//! - [`oracle`]: prediction sources (simulated scenarios, recorded replay,
//!   HTTP endpoints).
//! - [`budget`]: stopping rules and required-sample-size bounds.
//! - [`harness`]: dataset ingestion, seeded Monte Carlo experiments, and
//!   report emission.

pub mod budget;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod loss;
pub mod oracle;
pub mod sampler;
pub mod types;

pub use error::{Error, Result};

pub(crate) mod util {
    /// Fourth root via two square roots: exact IEEE semantics on every
    /// platform, unlike `powf(0.25)`.
    pub fn fourth_root(x: f64) -> f64 {
        x.sqrt().sqrt()
    }
}
