//! Load-fidelity accounting: how precisely the client honoured its schedule.
//!
//! Dispatch rate is measured over a window anchored at the first intended
//! dispatch. For `n` requests at nominal rate `r`:
//!
//! ```text
//! scheduled window  Ws = (last intended - first intended) + 1/r
//! dispatched window Wd = (last actual send - first intended) + 1/r
//! scheduled_qps = n / Ws, dispatched_qps = n / Wd, fidelity = Ws / Wd
//! ```
//!
//! A client that keeps up exactly yields `dispatched_qps = r` for a
//! constant schedule and `fidelity = 1`; a client that can only sustain a
//! third of the rate yields `fidelity ~ 1/3`. Comparing against the realised
//! schedule window keeps Poisson sampling noise out of the ratio.

use serde::{Deserialize, Serialize};

use crate::metrics::RequestRecord;
use crate::stats::DelayPercentiles;
use crate::NANOS_PER_SEC;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelityThresholds {
    /// Every scheduling-delay percentile must be strictly below this.
    pub max_sched_delay_s: f64,
    pub min_fidelity_ratio: f64,
}

impl Default for FidelityThresholds {
    fn default() -> Self {
        Self { max_sched_delay_s: 1e-3, min_fidelity_ratio: 0.99 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadMode {
    OpenLoop,
    /// Concurrency-bounded comparison mode; offered rate is undefined.
    ClosedLoop { concurrency: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub load_mode: LoadMode,
    pub dispatched: usize,
    pub sched_delay: Option<DelayPercentiles>,
    pub offered_qps: Option<f64>,
    pub scheduled_qps: Option<f64>,
    pub dispatched_qps: f64,
    pub fidelity_ratio: Option<f64>,
    pub thresholds: FidelityThresholds,
    pub valid: bool,
}

impl FidelityReport {
    pub fn compute(
        records: &[RequestRecord],
        load_mode: LoadMode,
        offered_qps: Option<f64>,
        wall_time_ns: u64,
        thresholds: FidelityThresholds,
    ) -> Self {
        // Delay percentiles skip warm-up dispatches when any steady-state
        // dispatch exists; the rate window always spans every record.
        let steady = records.iter().any(|r| !r.warmup);
        let delays: Vec<u64> =
            records.iter().filter(|r| !steady || !r.warmup).map(RequestRecord::sched_delay_ns).collect();
        let sched_delay = DelayPercentiles::from_nanos(&delays);
        let dispatched_qps = Self::dispatch_rate(records, offered_qps, wall_time_ns);
        let (scheduled_qps, fidelity_ratio) = match (load_mode, windows(records, offered_qps)) {
            (LoadMode::OpenLoop, Some((ws, wd))) => (Some(records.len() as f64 / ws), Some(ws / wd)),
            _ => (None, None),
        };
        let delays_ok = sched_delay.map_or(false, |d| d.max() < thresholds.max_sched_delay_s);
        let rate_ok = match load_mode {
            LoadMode::OpenLoop => fidelity_ratio.map_or(false, |f| f >= thresholds.min_fidelity_ratio),
            LoadMode::ClosedLoop { .. } => true,
        };
        Self {
            load_mode,
            dispatched: records.len(),
            sched_delay,
            offered_qps,
            scheduled_qps,
            dispatched_qps,
            fidelity_ratio,
            thresholds,
            valid: delays_ok && rate_ok,
        }
    }

    /// Requests actually dispatched per second. Falls back to
    /// `n / wall_time` when there is no nominal rate (closed loop).
    pub fn dispatch_rate(records: &[RequestRecord], offered_qps: Option<f64>, wall_time_ns: u64) -> f64 {
        match windows(records, offered_qps) {
            Some((_, wd)) => records.len() as f64 / wd,
            None if wall_time_ns > 0 => records.len() as f64 / (wall_time_ns as f64 / NANOS_PER_SEC),
            None => 0.0,
        }
    }
}

/// (scheduled window, dispatched window) in seconds.
fn windows(records: &[RequestRecord], offered_qps: Option<f64>) -> Option<(f64, f64)> {
    let rate = offered_qps.filter(|r| *r > 0.0 && r.is_finite())?;
    let first = records.iter().map(|r| r.intended_dispatch_ns).min()?;
    let last_intended = records.iter().map(|r| r.intended_dispatch_ns).max()?;
    let last_send = records.iter().map(|r| r.actual_send_ns).max()?;
    let tail = 1.0 / rate;
    let ws = (last_intended - first) as f64 / NANOS_PER_SEC + tail;
    let wd = (last_send.max(last_intended) - first) as f64 / NANOS_PER_SEC + tail;
    Some((ws, wd))
}
