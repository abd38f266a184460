//! Measures the client's single-worker service model against a co-located
//! zero-delay mock.
//!
//! One worker runs closed-loop at a concurrency high enough to keep it busy,
//! so the token event rate it sustains is its service rate `mu`. The shape
//! of the service-time distribution comes from per-request client
//! processing time per event, rescaled so its mean is exactly `1 / mu`;
//! `E[S^2]` is the second moment of those rescaled samples.

use std::sync::Arc;

use thiserror::Error;
use tokenprof_core::queue_model::{ClientModel, DEFAULT_RHO_MAX};
use tokenprof_core::workload::{build_workload, WorkloadSpec};

use crate::clock::Clock;
use crate::engine::{host_cores, run_closed_loop, EngineConfig, EngineError};
use crate::mockserver::{MockBehavior, MockError, MockServer};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("cannot start the calibration mock server: {0}")]
    MockStartFailure(#[from] MockError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("calibration produced no usable samples")]
    NoSamples,
}

#[derive(Debug, Clone, Copy)]
pub struct CalibrationOptions {
    pub output_tokens: u32,
    pub input_tokens: u32,
    pub concurrency: usize,
    pub requests: usize,
    pub rho_max: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self { output_tokens: 200, input_tokens: 320, concurrency: 16, requests: 400, rho_max: DEFAULT_RHO_MAX }
    }
}

/// Per-event service samples (seconds), rescaled to mean `1 / mu`.
pub fn service_moments(mu: f64, per_event: &[f64]) -> Option<(f64, Vec<f64>)> {
    let mean = per_event.iter().sum::<f64>() / per_event.len() as f64;
    if per_event.is_empty() || !(mean > 0.0) || !(mu > 0.0) {
        return None;
    }
    let scale = 1.0 / (mu * mean);
    let scaled: Vec<f64> = per_event.iter().map(|s| s * scale).collect();
    let s2 = scaled.iter().map(|s| s * s).sum::<f64>() / scaled.len() as f64;
    Some((s2, scaled))
}

pub fn calibrate(opts: CalibrationOptions, clock: Clock) -> Result<ClientModel, CalibrationError> {
    let server = MockServer::start(
        MockBehavior { log: false, ..MockBehavior::zero_delay(opts.output_tokens) },
        "127.0.0.1:0",
        clock,
        None,
    )?;
    let mut cfg = EngineConfig::for_target(server.base_url());
    cfg.max_workers = Some(1);
    let spec = WorkloadSpec::synthetic(opts.input_tokens, opts.output_tokens, 0);
    let prompts = build_workload(&spec, opts.requests).map_err(|e| EngineError::InvalidParam(e.to_string()))?;
    let warmup = opts.requests / 10;
    let run = run_closed_loop(&cfg, clock, opts.concurrency, &prompts, warmup, &cfg.template(&spec), Arc::default())?;
    server.shutdown();

    let steady: Vec<_> = run.records.iter().filter(|r| r.is_success() && !r.warmup && r.output_tokens > 0).collect();
    let start = steady.iter().map(|r| r.actual_send_ns).min().ok_or(CalibrationError::NoSamples)?;
    let end = steady.iter().map(|r| r.completion_ns).max().ok_or(CalibrationError::NoSamples)?;
    let events: u64 = steady.iter().map(|r| r.output_tokens as u64).sum();
    let span = (end - start) as f64 / 1e9;
    if !(span > 0.0) {
        return Err(CalibrationError::NoSamples);
    }
    let mu = events as f64 / span;
    let per_event: Vec<f64> =
        steady.iter().map(|r| r.client_processing_ns as f64 / 1e9 / r.output_tokens as f64).collect();
    let (s2, _) = service_moments(mu, &per_event).ok_or(CalibrationError::NoSamples)?;
    Ok(ClientModel {
        mu,
        s2,
        rho_max: opts.rho_max,
        events_per_request: opts.output_tokens as f64,
        samples: steady.len(),
        host_cores: host_cores(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rescaled_moments() {
        let (s2, scaled) = service_moments(100.0, &[1.0, 3.0]).unwrap();
        assert_eq!(scaled, vec![0.005, 0.015]);
        assert!((s2 - 1.25e-4).abs() < 1e-15);
        assert!(s2 >= 1.0 / (100.0 * 100.0));
        let (s2, _) = service_moments(10.0, &[2.0, 2.0, 2.0]).unwrap();
        assert!((s2 - 0.01).abs() < 1e-15);
        assert!(service_moments(10.0, &[]).is_none());
        assert!(service_moments(10.0, &[0.0]).is_none());
    }
}
