//! Run orchestration: one stage or a whole sweep, from configuration to
//! report directory.
//!
//! Layout of a report directory:
//!
//! ```text
//! report.json          effective config, host, per-stage results, profile
//! profile.csv          one row per stage
//! traces/stage-NNN.jsonl, traces/stage-NNN.meta.json
//! mock_log.jsonl       co-located mock emission log, when enabled
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use thiserror::Error;
use tokenprof_core::fidelity::LoadMode;
use tokenprof_core::profile::report::{
    emit_report, profile_for, trace_file_name, write_trace, HostInfo, Report, ReportError, ScheduleInfo, StageEntry,
    StageMeta, REPORT_SCHEMA_VERSION,
};
use tokenprof_core::profile::{ProfileVerdict, SaturationReason, StageResult};
use tokenprof_core::queue_model::ClientModel;
use tokenprof_core::schedule::{ArrivalSchedule, StagePlan};
use tokenprof_core::workload::{build_workload, PromptInstance, WorkloadManifest};

use crate::calibrate::{calibrate, CalibrationError, CalibrationOptions};
use crate::clock::Clock;
use crate::config::{ConfigError, RunConfig};
use crate::engine::{auto_size, describe_fidelity, host_cores, run_closed_loop, run_stage, EngineError, StageRun};
use crate::mockserver::{MockBehavior, MockError, MockServer};

/// Process exit statuses. Sweep verdicts use
/// [`ProfileVerdict::exit_code`]: 0 saturated, 2 not reached, 3 client-bound.
pub mod exit {
    pub const OK: i32 = 0;
    pub const ERROR: i32 = 1;
    pub const STAGE_ABORTED: i32 = 4;
    pub const INTERRUPTED: i32 = 130;
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("mock server: {0}")]
    Mock(#[from] MockError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("workload: {0}")]
    Workload(String),
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub struct RunOptions {
    /// Overrides the configured report directory.
    pub report_dir: Option<PathBuf>,
    /// Set to stop the run; the current stage's trace is kept, marked
    /// incomplete.
    pub cancel: Arc<AtomicBool>,
    /// Per-stage progress lines go here.
    pub progress: Box<dyn Write + Send>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { report_dir: None, cancel: Arc::default(), progress: Box::new(std::io::sink()) }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: Report,
    pub report_dir: PathBuf,
    pub exit_code: i32,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

/// Removes trace files left by an earlier run in the same directory.
fn clear_traces(dir: &Path) -> Result<(), RunError> {
    let traces = dir.join("traces");
    let Ok(entries) = std::fs::read_dir(&traces) else { return Ok(()) };
    for entry in entries {
        let entry = entry.map_err(io_err(&traces))?;
        if entry.file_name().to_string_lossy().starts_with("stage-") {
            std::fs::remove_file(entry.path()).map_err(io_err(&entry.path()))?;
        }
    }
    Ok(())
}

/// Server-side duration of one request under `m`, used to size per-worker
/// concurrency. Unknown (0) for external targets.
fn expected_duration_s(mock: Option<&MockBehavior>, output_tokens: f64) -> f64 {
    mock.map_or(0.0, |m| {
        (m.prefill_delay_ns as f64 + (output_tokens - 1.0).max(0.0) * m.per_token_delay_ns as f64) / 1e9
    })
}

fn mean_output_tokens(prompts: &[PromptInstance]) -> f64 {
    prompts.iter().map(|p| p.max_tokens as f64).sum::<f64>() / prompts.len().max(1) as f64
}

struct Stage {
    index: usize,
    plan: Option<StagePlan>,
    schedule: Option<ArrivalSchedule>,
    prompts: Vec<PromptInstance>,
}

fn stage_line(total: usize, entry: &StageEntry, run: &StageRun) -> String {
    let label = match entry.meta.offered_qps {
        Some(q) => format!("offered {q:.2} QPS"),
        None => match entry.meta.load_mode {
            LoadMode::ClosedLoop { concurrency } => format!("closed loop, concurrency {concurrency}"),
            LoadMode::OpenLoop => String::new(),
        },
    };
    let verdict = if let Some(reason) = run.aborted() {
        format!("ABORTED ({reason})")
    } else if run.fidelity.fidelity_ratio.is_none() {
        "fidelity n/a".into()
    } else if run.fidelity.valid {
        "fidelity OK".into()
    } else {
        "FIDELITY INVALID (client could not hold the offered load)".into()
    };
    let latency = entry.result.as_ref().map_or_else(String::new, |r| {
        let s = &r.summary;
        let ttft = s.ttft_stats.as_ref().map_or_else(|| "-".into(), |t| format!("{:.2}", t.p99 * 1e3));
        let ntpot = s.ntpot_stats.as_ref().map_or_else(|| "-".into(), |t| format!("{:.3}", t.p99 * 1e3));
        format!(", TTFT p99 {ttft} ms, NTPOT p99 {ntpot} ms, {:.1} output tok/s", s.output_token_throughput)
    });
    let incomplete = if run.incomplete { " [incomplete]" } else { "" };
    format!(
        "stage {}/{total}: {label}, {} workers: {}{latency}; {verdict}{incomplete}",
        entry.meta.index + 1,
        run.workers,
        describe_fidelity(&run.fidelity)
    )
}

/// Runs every stage the configuration describes and writes the report.
pub fn execute_run(cfg: RunConfig, mut opts: RunOptions) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let cfg = cfg.effective();
    let report_dir = opts.report_dir.clone().unwrap_or_else(|| cfg.resolved_report_dir());
    std::fs::create_dir_all(&report_dir).map_err(io_err(&report_dir))?;
    clear_traces(&report_dir)?;
    let clock = Clock::new();

    let server = match &cfg.mock {
        Some(b) => Some(MockServer::start(b.clone(), "127.0.0.1:0", clock, None)?),
        None => None,
    };
    let mut engine = cfg.engine.clone();
    if let Some(s) = &server {
        engine.target = s.base_url();
    }

    let client_model: Option<ClientModel> = match (&cfg.client_model, engine.auto_size) {
        (Some(m), _) => Some(m.clone()),
        (None, true) => {
            let _ = writeln!(opts.progress, "calibrating client model...");
            let m = calibrate(CalibrationOptions::default(), clock)?;
            let _ = writeln!(opts.progress, "calibrated: mu = {:.0} events/s, E[S^2] = {:.3e} s^2", m.mu, m.s2);
            Some(m)
        }
        (None, false) => None,
    };

    let stages: Vec<Stage> = match engine.mode {
        LoadMode::OpenLoop => {
            let plan = cfg.plan()?;
            let mut out = Vec::with_capacity(plan.stages.len());
            for (i, p) in plan.stages.iter().enumerate() {
                let n = p.request_count();
                let schedule = ArrivalSchedule::generate(cfg.load.arrival, p.rate, n, cfg.schedule_seed(i))
                    .map_err(|e| RunError::Schedule(e.to_string()))?;
                let prompts = build_workload(&cfg.workload, n).map_err(|e| RunError::Workload(e.to_string()))?;
                out.push(Stage { index: i, plan: Some(*p), schedule: Some(schedule), prompts });
            }
            out
        }
        LoadMode::ClosedLoop { .. } => {
            let n = cfg.load.requests.unwrap_or(1);
            let prompts = build_workload(&cfg.workload, n).map_err(|e| RunError::Workload(e.to_string()))?;
            vec![Stage { index: 0, plan: None, schedule: None, prompts }]
        }
    };

    let total = stages.len();
    let mut entries = Vec::with_capacity(total);
    let mut results: Vec<StageResult> = Vec::with_capacity(total);
    let mut any_aborted = false;
    let mut interrupted = false;
    for stage in &stages {
        if opts.cancel.load(Ordering::Relaxed) {
            interrupted = true;
            break;
        }
        let mut stage_engine = engine.clone();
        let template = stage_engine.template(&cfg.workload);
        let (run, schedule_info) = match (&stage.schedule, stage.plan) {
            (Some(schedule), Some(plan)) => {
                if let Some(model) = &client_model {
                    let tokens = mean_output_tokens(&stage.prompts);
                    let sizing = auto_size(
                        plan.rate,
                        model,
                        tokens,
                        expected_duration_s(cfg.mock.as_ref(), tokens),
                        host_cores(),
                    )?;
                    stage_engine.max_workers = Some(sizing.max_workers);
                    stage_engine.worker_max_concurrency =
                        stage_engine.worker_max_concurrency.max(sizing.worker_max_concurrency);
                }
                let warmup_ns = plan.warmup_ns(cfg.load.warmup_fraction);
                let run = run_stage(
                    &stage_engine,
                    clock,
                    schedule,
                    &stage.prompts,
                    warmup_ns,
                    &template,
                    opts.cancel.clone(),
                )?;
                let info = ScheduleInfo {
                    kind: cfg.load.arrival,
                    rate: plan.rate,
                    count: schedule.len(),
                    seed: cfg.schedule_seed(stage.index),
                    warmup_ns,
                    digest: schedule.digest(),
                };
                (run, Some(info))
            }
            _ => {
                let LoadMode::ClosedLoop { concurrency } = engine.mode else { unreachable!("closed-loop stage") };
                let warmup = (stage.prompts.len() as f64 * cfg.load.warmup_fraction).round() as usize;
                let run = run_closed_loop(
                    &stage_engine,
                    clock,
                    concurrency,
                    &stage.prompts,
                    warmup,
                    &template,
                    opts.cancel.clone(),
                )?;
                (run, None)
            }
        };

        let meta = StageMeta {
            index: stage.index,
            load_mode: run.fidelity.load_mode,
            offered_qps: run.fidelity.offered_qps,
            wall_time_ns: run.wall_time_ns,
            thresholds: run.fidelity.thresholds,
            aborted: run.aborted().map(str::to_string),
            incomplete: run.incomplete,
        };
        write_trace(&report_dir, &meta, &run.records)?;
        let result = if run.records.is_empty() { None } else { Some(StageResult::from_records(&run.records, &meta)?) };
        let entry = StageEntry {
            meta,
            schedule: schedule_info,
            workload: WorkloadManifest::describe(&cfg.workload, &stage.prompts),
            result: result.clone(),
            trace_file: format!("traces/{}", trace_file_name(stage.index)),
            workers: Some(run.workers),
        };
        let _ = writeln!(opts.progress, "{}", stage_line(total, &entry, &run));
        any_aborted |= run.aborted().is_some();
        interrupted |= run.incomplete;
        results.extend(result);
        entries.push(entry);
    }

    let profile = if interrupted { None } else { profile_for(&results, cfg.saturation)? };
    let verdict = profile.as_ref().map(|p| p.verdict);
    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        host: HostInfo::current(),
        mock_placement: Some(if server.is_some() { "colocated" } else { "external" }.to_string()),
        config: cfg.to_json(),
        client_model,
        stages: entries,
        profile,
        verdict,
    };
    emit_report(&report, &report_dir)?;
    if let Some(s) = server {
        if s.behavior().log {
            let path = report_dir.join("mock_log.jsonl");
            s.log().write_jsonl(&path).map_err(io_err(&path))?;
        }
        s.shutdown();
    }

    let exit_code = if interrupted {
        exit::INTERRUPTED
    } else if let Some(v) = verdict {
        let _ = writeln!(opts.progress, "verdict: {}", describe_verdict(v, &report));
        v.exit_code()
    } else if any_aborted {
        exit::STAGE_ABORTED
    } else {
        exit::OK
    };
    Ok(RunOutcome { report, report_dir, exit_code })
}

pub fn describe_verdict(v: ProfileVerdict, report: &Report) -> String {
    let at = |i: usize| {
        report.profile.as_ref().and_then(|p| p.points.get(i)).map_or_else(String::new, |pt| format!(" at {:.2} QPS", pt.offered_qps))
    };
    let profile = report.profile.as_ref();
    match v {
        ProfileVerdict::Saturated => {
            let sat = profile.and_then(|p| p.saturation).map_or_else(String::new, |s| {
                let why = match s.reason {
                    SaturationReason::AchievedBelowOffered => "completed rate fell below offered",
                    SaturationReason::NtpotSpike => "p99 NTPOT spiked without throughput gain",
                };
                format!("{why}{}", at(s.index))
            });
            let ideal = profile.and_then(|p| p.ideal_zone).map_or_else(String::new, |i| format!("; ideal zone{}", at(i)));
            format!("saturated ({sat}){ideal}")
        }
        ProfileVerdict::NotReached => "saturation not reached; extend max_rate".into(),
        ProfileVerdict::ClientBound => "client-bound: the client hit its limits first; add hardware or workers".into(),
    }
}
