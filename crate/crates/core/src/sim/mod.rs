//! Scenario driver: builds a mesh, runs timesteps through the task runtime,
//! aggregator and parcel layer, and reports metrics.

pub mod config;
mod engine;
pub mod metrics;
pub mod scenario;

pub use config::{ConfigError, Parcelport, Profile, RunConfig, Scenario};
pub use engine::{run, run_locality, run_with, Hooks, RunOutcome};
pub use metrics::{median, parallel_efficiency, FlopModel, Metrics, StepCounters, StepRecord, CSV_COLUMNS};
pub use scenario::init_scenario;

use crate::aggregator::AggregationError;
use crate::amr::{AmrError, MortonKey};
use crate::dist::DistError;

#[derive(Debug, Clone, thiserror::Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("mesh: {0}")]
    Amr(#[from] AmrError),
    #[error("{0}")]
    Dist(#[from] DistError),
    #[error("aggregation: {0}")]
    Aggregation(#[from] AggregationError),
    #[error("step {step}: non-physical state in sub-grid {key} at interior cell {cell:?} ({bad} bad cells)")]
    Solver {
        step: u64,
        key: MortonKey,
        cell: [usize; 3],
        bad: u64,
    },
    #[error("step {step}: every signal speed is zero; no stable timestep")]
    NoSignal { step: u64 },
    #[error("step {step}: {cause}")]
    Step { step: u64, cause: String },
    #[error("I/O: {0}")]
    Io(String),
    #[error("locality {rank}: {cause}")]
    Locality { rank: usize, cause: String },
}
