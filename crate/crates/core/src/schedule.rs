//! Open-loop arrival schedules and multi-stage sweep plans.
//!
//! Schedules are materialised up front as absolute offsets from the stage
//! start, so the dispatcher never touches a random number generator while
//! it is sending. A schedule is fully determined by `{kind, rate, count,
//! seed}`; Poisson gaps come from `ChaCha8Rng::seed_from_u64(seed)` through
//! `rand_distr::Exp`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::NANOS_PER_SEC;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

type Result<T> = std::result::Result<T, ScheduleError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalKind {
    Constant,
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSchedule {
    pub kind: ArrivalKind,
    pub rate: f64,
    pub seed: u64,
    /// Nondecreasing offsets from the stage start, in nanoseconds.
    pub offsets_ns: Vec<u64>,
}

fn check_rate(rate: f64) -> Result<()> {
    if rate.is_finite() && rate > 0.0 {
        Ok(())
    } else {
        Err(ScheduleError::InvalidParam(format!("rate must be finite and > 0, got {rate}")))
    }
}

fn check_count(count: usize) -> Result<()> {
    if count == 0 {
        Err(ScheduleError::InvalidParam("count must be >= 1".into()))
    } else {
        Ok(())
    }
}

impl ArrivalSchedule {
    pub fn generate(kind: ArrivalKind, rate: f64, count: usize, seed: u64) -> Result<Self> {
        match kind {
            ArrivalKind::Constant => constant_schedule(rate, count),
            ArrivalKind::Poisson => poisson_schedule(rate, count, seed),
        }
    }

    pub fn len(&self) -> usize {
        self.offsets_ns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets_ns.is_empty()
    }

    pub fn last_offset_ns(&self) -> u64 {
        self.offsets_ns.last().copied().unwrap_or(0)
    }

    /// Hex SHA-256 over the little-endian offsets; equal digests mean
    /// byte-identical schedules.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for o in &self.offsets_ns {
            h.update(o.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// `offsets[i] = round(i / rate)` in nanoseconds.
pub fn constant_schedule(rate: f64, count: usize) -> Result<ArrivalSchedule> {
    check_rate(rate)?;
    check_count(count)?;
    let period = NANOS_PER_SEC / rate;
    let offsets_ns = (0..count).map(|i| (i as f64 * period).round() as u64).collect();
    Ok(ArrivalSchedule { kind: ArrivalKind::Constant, rate, seed: 0, offsets_ns })
}

/// Cumulative sums of i.i.d. Exponential(`rate`) gaps, quantised to
/// nanoseconds after summation so rounding does not accumulate.
pub fn poisson_schedule(rate: f64, count: usize, seed: u64) -> Result<ArrivalSchedule> {
    check_rate(rate)?;
    check_count(count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaps = Exp::new(rate).map_err(|e| ScheduleError::InvalidParam(e.to_string()))?;
    let mut t = 0.0f64;
    let offsets_ns = (0..count)
        .map(|_| {
            t += gaps.sample(&mut rng);
            (t * NANOS_PER_SEC).round() as u64
        })
        .collect();
    Ok(ArrivalSchedule { kind: ArrivalKind::Poisson, rate, seed, offsets_ns })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Progression {
    Linear { step: f64 },
    Geometric { factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageLength {
    DurationNs(u64),
    Requests(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub rate: f64,
    pub length: StageLength,
}

impl StagePlan {
    pub fn request_count(&self) -> usize {
        match self.length {
            StageLength::Requests(n) => n.max(1),
            StageLength::DurationNs(ns) => ((self.rate * ns as f64 / NANOS_PER_SEC).round() as usize).max(1),
        }
    }

    /// Warm-up window length: `fraction` of the stage duration. For
    /// count-based stages the nominal duration is `count / rate`.
    pub fn warmup_ns(&self, fraction: f64) -> u64 {
        let duration_ns = match self.length {
            StageLength::DurationNs(ns) => ns as f64,
            StageLength::Requests(n) => n as f64 / self.rate * NANOS_PER_SEC,
        };
        (duration_ns * fraction.clamp(0.0, 1.0)).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub base_rate: f64,
    pub max_rate: f64,
    pub progression: Progression,
    pub stages: Vec<StagePlan>,
}

/// Relative tolerance for deciding a progression has reached `max_rate`.
const RATE_EPS: f64 = 1e-9;

/// Builds the stage rates `base, next(base), ...`, clipping the final stage
/// to exactly `max_rate`.
pub fn build_sweep(base_rate: f64, max_rate: f64, progression: Progression, length: StageLength) -> Result<SweepPlan> {
    check_rate(base_rate)?;
    check_rate(max_rate)?;
    if base_rate >= max_rate {
        return Err(ScheduleError::InvalidParam(format!(
            "base_rate ({base_rate}) must be below max_rate ({max_rate})"
        )));
    }
    match progression {
        Progression::Linear { step } if !(step.is_finite() && step > 0.0) => {
            return Err(ScheduleError::InvalidParam(format!("linear step must be > 0, got {step}")))
        }
        Progression::Geometric { factor } if !(factor.is_finite() && factor > 1.0) => {
            return Err(ScheduleError::InvalidParam(format!("geometric factor must be > 1, got {factor}")))
        }
        _ => {}
    }
    match length {
        StageLength::DurationNs(0) | StageLength::Requests(0) => {
            return Err(ScheduleError::InvalidParam("stage length must be positive".into()))
        }
        _ => {}
    }

    let mut rates = Vec::new();
    let mut i = 0u32;
    loop {
        let rate = match progression {
            Progression::Linear { step } => base_rate + i as f64 * step,
            Progression::Geometric { factor } => base_rate * factor.powi(i as i32),
        };
        if rate >= max_rate * (1.0 - RATE_EPS) {
            rates.push(max_rate);
            break;
        }
        rates.push(rate);
        i += 1;
    }
    let stages = rates.into_iter().map(|rate| StagePlan { rate, length }).collect();
    Ok(SweepPlan { base_rate, max_rate, progression, stages })
}

impl SweepPlan {
    /// A single-stage plan, used for plain `run` configurations.
    pub fn single(rate: f64, length: StageLength) -> Result<Self> {
        check_rate(rate)?;
        Ok(Self {
            base_rate: rate,
            max_rate: rate,
            progression: Progression::Linear { step: rate },
            stages: vec![StagePlan { rate, length }],
        })
    }

    pub fn rates(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.rate).collect()
    }
}
