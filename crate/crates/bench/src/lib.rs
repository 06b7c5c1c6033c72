//! Closed-loop (fixed-load) and open-loop (fixed-rate) benchmark driver with
//! report aggregation and table output.

mod config;
mod metrics;
mod report;
mod runner;
mod target;

pub use config::{load_workloads, Mode, Operation, WorkloadConfig};
pub use metrics::{aggregate, Metrics, Outcome, TxObservation};
pub use report::{render_table, BenchmarkReport};
pub use runner::{run, run_fixed_load, run_fixed_rate};
pub use target::{Completion, NetworkTarget, StubTarget, Target};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid workload: {0}")]
    InvalidConfig(String),
    #[error("target unreachable: {0}")]
    TargetUnreachable(String),
    #[error("no observations to aggregate")]
    EmptyObservations,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("encoding: {0}")]
    Encoding(String),
}
