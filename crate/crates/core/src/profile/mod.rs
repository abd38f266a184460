//! Latency profiles: per-stage points along a load sweep, the saturation
//! knee, and the ideal operating point just below it.
//!
//! Saturation is the first valid point where either
//!
//! * (a) `completed / offered` drops below `min_fidelity` (the server stops
//!   absorbing the offered load), or
//! * (b) p99 NTPOT exceeds `ntpot_factor` times the median p99 NTPOT of the
//!   first quartile of points *and* the throughput gained since the previous
//!   point is below `marginal_gain_fraction` of the per-stage gain seen in
//!   the first quartile.
//!
//! The first quartile is the first `max(2, ceil(n / 4))` valid points. Only
//! valid points take part: a stage whose fidelity check failed measured the
//! client, not the server, and is flagged `client_limited` instead.

pub mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fidelity::FidelityReport;
use crate::metrics::StageSummary;
use crate::stats::LatencyStats;

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Thresholds for [`detect_saturation`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaturationConfig {
    pub min_fidelity: f64,
    pub ntpot_factor: f64,
    pub marginal_gain_fraction: f64,
}

impl Default for SaturationConfig {
    fn default() -> Self {
        Self { min_fidelity: 0.95, ntpot_factor: 2.0, marginal_gain_fraction: 0.10 }
    }
}

/// Minimum number of valid points for knee detection.
pub const MIN_DETECTION_POINTS: usize = 4;

/// Everything measured for one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub summary: StageSummary,
    pub fidelity: FidelityReport,
    #[serde(default)]
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub stage: usize,
    pub offered_qps: f64,
    pub achieved_qps: f64,
    pub completed_qps: f64,
    pub token_throughput: f64,
    pub ntpot_stats: Option<LatencyStats>,
    pub ttft_stats: Option<LatencyStats>,
    pub fidelity: FidelityReport,
    pub client_limited: bool,
    pub aborted: bool,
}

impl ProfilePoint {
    fn usable(&self) -> bool {
        !self.client_limited && !self.aborted
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaturationReason {
    /// Rule (a): the completed rate fell below the offered rate.
    AchievedBelowOffered,
    /// Rule (b): p99 NTPOT spiked while throughput stopped growing.
    NtpotSpike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Saturation {
    pub index: usize,
    pub reason: SaturationReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileVerdict {
    Saturated,
    NotReached,
    /// The client hit its own limits before the server saturated; add
    /// hardware or workers and rerun.
    ClientBound,
}

impl ProfileVerdict {
    /// Process exit status for sweep commands.
    pub fn exit_code(self) -> i32 {
        match self {
            ProfileVerdict::Saturated => 0,
            ProfileVerdict::NotReached => 2,
            ProfileVerdict::ClientBound => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyProfile {
    pub points: Vec<ProfilePoint>,
    pub saturation: Option<Saturation>,
    /// Last valid point before the saturation point.
    pub ideal_zone: Option<usize>,
    pub verdict: ProfileVerdict,
    pub config: SaturationConfig,
}

/// Orders stages into a profile and runs knee detection when at least
/// [`MIN_DETECTION_POINTS`] points are valid.
pub fn build_profile(stages: &[StageResult], config: SaturationConfig) -> Result<LatencyProfile, ProfileError> {
    if stages.len() < 2 {
        return Err(ProfileError::InsufficientData(format!(
            "a profile needs at least 2 stages, got {}",
            stages.len()
        )));
    }
    let mut points = Vec::with_capacity(stages.len());
    for (stage, s) in stages.iter().enumerate() {
        let offered_qps = s.summary.offered_qps.ok_or_else(|| {
            ProfileError::InvalidInput(format!("stage {stage} has no offered rate (closed loop?)"))
        })?;
        points.push(ProfilePoint {
            stage,
            offered_qps,
            achieved_qps: s.summary.achieved_qps,
            completed_qps: s.summary.completed_qps,
            token_throughput: s.summary.token_throughput,
            ntpot_stats: s.summary.ntpot_stats.clone(),
            ttft_stats: s.summary.ttft_stats.clone(),
            fidelity: s.fidelity.clone(),
            client_limited: !s.fidelity.valid,
            aborted: s.aborted.is_some(),
        });
    }
    points.sort_by(|a, b| a.offered_qps.total_cmp(&b.offered_qps));
    if points.windows(2).any(|w| w[0].offered_qps >= w[1].offered_qps) {
        return Err(ProfileError::InvalidInput("offered rates must be distinct".into()));
    }

    let mut profile = LatencyProfile {
        points,
        saturation: None,
        ideal_zone: None,
        verdict: ProfileVerdict::NotReached,
        config,
    };
    if profile.points.iter().filter(|p| p.usable()).count() >= MIN_DETECTION_POINTS {
        profile.saturation = detect_saturation(&profile)?;
    }
    if let Some(sat) = profile.saturation {
        profile.ideal_zone = profile.points[..sat.index].iter().rposition(ProfilePoint::usable);
    }
    let horizon = profile.saturation.map_or(profile.points.len(), |s| s.index);
    profile.verdict = if profile.points[..horizon].iter().any(|p| p.client_limited) {
        ProfileVerdict::ClientBound
    } else if profile.saturation.is_some() {
        ProfileVerdict::Saturated
    } else {
        ProfileVerdict::NotReached
    };
    Ok(profile)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Returns the first point index (into `profile.points`) where a saturation
/// rule fires, using `profile.config` thresholds.
pub fn detect_saturation(profile: &LatencyProfile) -> Result<Option<Saturation>, ProfileError> {
    let cfg = profile.config;
    let valid: Vec<usize> = (0..profile.points.len()).filter(|&i| profile.points[i].usable()).collect();
    let n = valid.len();
    if n < MIN_DETECTION_POINTS {
        return Err(ProfileError::InsufficientData(format!(
            "saturation detection needs {MIN_DETECTION_POINTS} valid points, got {n}"
        )));
    }
    let pt = |j: usize| &profile.points[valid[j]];
    let p99 = |j: usize| pt(j).ntpot_stats.as_ref().map(|s| s.p99);

    let q = ((n + 3) / 4).max(2);
    let baseline: Vec<f64> = (0..q).filter_map(p99).collect();
    let baseline_p99 = (!baseline.is_empty()).then(|| median(baseline));
    let baseline_gain = (pt(q - 1).token_throughput - pt(0).token_throughput) / (q - 1) as f64;

    for j in 0..n {
        let p = pt(j);
        if p.offered_qps > 0.0 && p.completed_qps / p.offered_qps < cfg.min_fidelity {
            return Ok(Some(Saturation { index: valid[j], reason: SaturationReason::AchievedBelowOffered }));
        }
        if j == 0 {
            continue;
        }
        if let (Some(cur), Some(base)) = (p99(j), baseline_p99) {
            let gain = p.token_throughput - pt(j - 1).token_throughput;
            if cur > cfg.ntpot_factor * base && gain < cfg.marginal_gain_fraction * baseline_gain {
                return Ok(Some(Saturation { index: valid[j], reason: SaturationReason::NtpotSpike }));
            }
        }
    }
    Ok(None)
}

/// Synthetic stage sequences with known knees, for tests and demos.
pub mod fixtures {
    use super::*;
    use crate::fidelity::{FidelityThresholds, LoadMode};

    pub fn stats(p99: f64) -> LatencyStats {
        LatencyStats {
            count: 100,
            mean: p99 * 0.8,
            sample_variance: 0.0,
            min: p99 * 0.5,
            max: p99 * 1.1,
            p50: p99 * 0.8,
            p90: p99 * 0.9,
            p99,
            single_sample: false,
        }
    }

    pub fn stage(offered: f64, achieved: f64, throughput: f64, ntpot_p99: f64, valid: bool) -> StageResult {
        StageResult {
            summary: StageSummary {
                offered_qps: Some(offered),
                achieved_qps: offered,
                completed_qps: achieved,
                request_count: 100,
                success_count: 100,
                error_count: 0,
                timeout_count: 0,
                warmup_count: 0,
                ttft_stats: Some(stats(ntpot_p99 * 10.0)),
                tpot_stats: None,
                itl_stats: None,
                ntpot_stats: Some(stats(ntpot_p99)),
                e2e_stats: None,
                total_input_tokens: 0,
                total_output_tokens: 0,
                total_requested_output_tokens: 0,
                token_throughput: throughput,
                output_token_throughput: throughput,
                sched_delay_stats: None,
                wall_time_s: 1.0,
            },
            fidelity: FidelityReport {
                load_mode: LoadMode::OpenLoop,
                dispatched: 100,
                sched_delay: None,
                offered_qps: Some(offered),
                scheduled_qps: Some(offered),
                dispatched_qps: offered,
                fidelity_ratio: Some(if valid { 1.0 } else { 0.5 }),
                thresholds: FidelityThresholds::default(),
                valid,
            },
            aborted: None,
        }
    }

    /// Achieved rate tracks offered through stage 5, then flatlines.
    pub fn knee_a() -> Vec<StageResult> {
        let achieved = [10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 60.0, 60.0];
        (0..8)
            .map(|i| {
                let offered = 10.0 * (i + 1) as f64;
                stage(offered, achieved[i], achieved[i] * 520.0, 0.006, true)
            })
            .collect()
    }

    /// p99 NTPOT jumps 5x at stage 5 while throughput stops growing.
    pub fn knee_b() -> Vec<StageResult> {
        let throughput = [1000.0, 2000.0, 3000.0, 4000.0, 5000.0, 5050.0, 5060.0, 5070.0];
        let p99 = [0.010, 0.010, 0.011, 0.010, 0.010, 0.050, 0.060, 0.070];
        (0..8).map(|i| stage(10.0 * (i + 1) as f64, 10.0 * (i + 1) as f64, throughput[i], p99[i], true)).collect()
    }

    /// Linear throughput, constant NTPOT.
    pub fn linear() -> Vec<StageResult> {
        (0..8)
            .map(|i| {
                let r = 10.0 * (i + 1) as f64;
                stage(r, r, r * 520.0, 0.006, true)
            })
            .collect()
    }
}
