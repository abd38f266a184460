//! Core measurement and analysis layer for token-streaming inference benchmarks.
//!
//! Everything here is pure computation over immutable inputs: per-request
//! latency metrics, the M/G/1 model of the measuring client, arrival
//! schedules, workload generation and latency-profile analysis. The load
//! engine and mock server live in the `tokenprof` crate.

pub mod fidelity;
pub mod metrics;
pub mod profile;
pub mod queue_model;
pub mod schedule;
pub mod seed;
pub mod stats;
pub mod workload;

pub use fidelity::{FidelityReport, FidelityThresholds};
pub use metrics::{RequestRecord, RequestStatus, StageSummary};
pub use profile::{LatencyProfile, ProfileVerdict};
pub use queue_model::{ClientModel, QueueModelParams, ServiceDistribution};
pub use schedule::{ArrivalKind, ArrivalSchedule, SweepPlan};
pub use workload::{PromptInstance, WorkloadSpec};

/// Nanoseconds per second, for ns <-> s conversions.
pub const NANOS_PER_SEC: f64 = 1e9;

/// Converts integer nanoseconds into fractional seconds.
pub fn ns_to_secs(ns: u64) -> f64 {
    ns as f64 / NANOS_PER_SEC
}
