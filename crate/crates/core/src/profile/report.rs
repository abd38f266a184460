//! Report directory layout and (re)analysis of archived traces.
//!
//! ```text
//! <out_dir>/report.json                 versioned run report
//! <out_dir>/profile.csv                 one row per stage, fixed column order
//! <out_dir>/traces/stage-NNN.jsonl      one RequestRecord per line
//! <out_dir>/traces/stage-NNN.meta.json  what is needed to recompute the stage
//! ```
//!
//! Stage results are always derived from the records by
//! [`StageResult::from_records`], both at run time and when re-analysing a
//! trace directory, so the two agree exactly.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{build_profile, LatencyProfile, ProfileError, ProfileVerdict, SaturationConfig, StageResult};
use crate::fidelity::{FidelityReport, FidelityThresholds, LoadMode};
use crate::metrics::{aggregate, MetricError, RequestRecord};
use crate::queue_model::ClientModel;
use crate::schedule::ArrivalKind;
use crate::stats::LatencyStats;
use crate::workload::WorkloadManifest;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

type Result<T> = std::result::Result<T, ReportError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

/// Per-stage inputs needed to recompute its summary from the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMeta {
    pub index: usize,
    pub load_mode: LoadMode,
    pub offered_qps: Option<f64>,
    pub wall_time_ns: u64,
    pub thresholds: FidelityThresholds,
    #[serde(default)]
    pub aborted: Option<String>,
    /// The stage was cut short (interrupt); the trace is partial.
    #[serde(default)]
    pub incomplete: bool,
}

impl StageResult {
    pub fn from_records(records: &[RequestRecord], meta: &StageMeta) -> Result<Self> {
        let summary = aggregate(records, meta.offered_qps, meta.wall_time_ns)?;
        let fidelity =
            FidelityReport::compute(records, meta.load_mode, meta.offered_qps, meta.wall_time_ns, meta.thresholds);
        Ok(Self { summary, fidelity, aborted: meta.aborted.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostInfo {
    pub cores: usize,
    pub os: String,
    pub arch: String,
}

impl HostInfo {
    pub fn current() -> Self {
        Self {
            cores: std::thread::available_parallelism().map_or(1, |n| n.get()),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
        }
    }
}

/// Reproduction key of one stage's schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleInfo {
    pub kind: ArrivalKind,
    pub rate: f64,
    pub count: usize,
    pub seed: u64,
    pub warmup_ns: u64,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub meta: StageMeta,
    pub schedule: Option<ScheduleInfo>,
    pub workload: WorkloadManifest,
    pub result: Option<StageResult>,
    pub trace_file: String,
    /// Workers that ran the stage.
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    pub host: HostInfo,
    /// `colocated` or `remote`, when known.
    pub mock_placement: Option<String>,
    /// The effective run configuration, every default filled in.
    pub config: serde_json::Value,
    pub client_model: Option<ClientModel>,
    pub stages: Vec<StageEntry>,
    pub profile: Option<LatencyProfile>,
    pub verdict: Option<ProfileVerdict>,
}

impl Report {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let report: Report = serde_json::from_str(&text)
            .map_err(|e| ReportError::Format { path: path.to_path_buf(), message: e.to_string() })?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(ReportError::Format {
                path: path.to_path_buf(),
                message: format!("unsupported schema version {}", report.schema_version),
            });
        }
        Ok(report)
    }
}

pub fn trace_file_name(index: usize) -> String {
    format!("stage-{index:03}.jsonl")
}

fn meta_file_name(index: usize) -> String {
    format!("stage-{index:03}.meta.json")
}

/// Writes one stage's records and metadata under `<dir>/traces/`.
pub fn write_trace(dir: &Path, meta: &StageMeta, records: &[RequestRecord]) -> Result<()> {
    let traces = dir.join("traces");
    fs::create_dir_all(&traces).map_err(io_err(&traces))?;
    let path = traces.join(trace_file_name(meta.index));
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    for r in records {
        serde_json::to_writer(&mut w, r)
            .map_err(|e| ReportError::Format { path: path.clone(), message: e.to_string() })?;
        w.write_all(b"\n").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    let meta_path = traces.join(meta_file_name(meta.index));
    write_json(&meta_path, meta)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| ReportError::Format { path: path.to_path_buf(), message: e.to_string() })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_trace(path: &Path) -> Result<Vec<RequestRecord>> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RequestRecord = serde_json::from_str(&line).map_err(|e| ReportError::Format {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Reads every stage trace under `<dir>/traces` (or `dir` itself when it
/// holds the trace files directly), ordered by stage index.
pub fn read_traces(dir: &Path) -> Result<Vec<(StageMeta, Vec<RequestRecord>)>> {
    let traces = if dir.join("traces").is_dir() { dir.join("traces") } else { dir.to_path_buf() };
    let entries = fs::read_dir(&traces).map_err(io_err(&traces))?;
    let mut metas = Vec::new();
    for entry in entries {
        let path = entry.map_err(io_err(&traces))?.path();
        if path.file_name().and_then(|n| n.to_str()).map_or(false, |n| n.ends_with(".meta.json")) {
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let meta: StageMeta = serde_json::from_str(&text)
                .map_err(|e| ReportError::Format { path: path.clone(), message: e.to_string() })?;
            metas.push(meta);
        }
    }
    if metas.is_empty() {
        return Err(ReportError::InsufficientData(format!("no stage traces in {}", traces.display())));
    }
    metas.sort_by_key(|m| m.index);
    metas
        .into_iter()
        .map(|meta| {
            let records = read_trace(&traces.join(trace_file_name(meta.index)))?;
            Ok((meta, records))
        })
        .collect()
}

/// Output of re-analysing archived traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub stages: Vec<StageResult>,
    pub profile: Option<LatencyProfile>,
}

/// Recomputes stage results and, for multi-stage open-loop runs, the
/// latency profile.
pub fn analyze_traces(dir: &Path, saturation: SaturationConfig) -> Result<Analysis> {
    let traces = read_traces(dir)?;
    let mut stages = Vec::with_capacity(traces.len());
    for (meta, records) in &traces {
        if records.is_empty() {
            continue;
        }
        stages.push(StageResult::from_records(records, meta)?);
    }
    if stages.is_empty() {
        return Err(ReportError::InsufficientData("all stage traces are empty".into()));
    }
    let profile = profile_for(&stages, saturation)?;
    Ok(Analysis { stages, profile })
}

/// A profile when there are at least two open-loop stages, else `None`.
pub fn profile_for(stages: &[StageResult], saturation: SaturationConfig) -> Result<Option<LatencyProfile>> {
    if stages.len() >= 2 && stages.iter().all(|s| s.summary.offered_qps.is_some()) {
        Ok(Some(build_profile(stages, saturation)?))
    } else {
        Ok(None)
    }
}

/// Fixed `profile.csv` column order.
pub const CSV_COLUMNS: &[&str] = &[
    "stage",
    "offered_qps",
    "achieved_qps",
    "completed_qps",
    "fidelity_ratio",
    "fidelity_valid",
    "client_limited",
    "aborted",
    "sched_delay_p50_s",
    "sched_delay_p90_s",
    "sched_delay_p99_s",
    "requests",
    "errors",
    "timeouts",
    "token_throughput",
    "output_token_throughput",
    "ttft_mean_s",
    "ttft_p50_s",
    "ttft_p90_s",
    "ttft_p99_s",
    "tpot_mean_s",
    "tpot_p50_s",
    "tpot_p90_s",
    "tpot_p99_s",
    "itl_mean_s",
    "itl_p50_s",
    "itl_p90_s",
    "itl_p99_s",
    "ntpot_mean_s",
    "ntpot_variance_s2",
    "ntpot_p50_s",
    "ntpot_p90_s",
    "ntpot_p99_s",
    "e2e_mean_s",
    "e2e_p50_s",
    "e2e_p90_s",
    "e2e_p99_s",
    "zone",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn stat_cols(s: &Option<LatencyStats>, out: &mut Vec<String>) {
    match s {
        Some(s) => out.extend([s.mean, s.p50, s.p90, s.p99].iter().map(f64::to_string)),
        None => out.extend(std::iter::repeat(String::new()).take(4)),
    }
}

/// Writes `profile.csv`: one row per stage, ordered by offered rate when a
/// profile exists. `zone` is `ideal`, `saturation` or `post_saturation`.
pub fn write_profile_csv(path: &Path, stages: &[StageResult], profile: Option<&LatencyProfile>) -> Result<()> {
    let mut order: Vec<usize> = match profile {
        Some(p) => p.points.iter().map(|pt| pt.stage).collect(),
        None => (0..stages.len()).collect(),
    };
    order.retain(|&i| i < stages.len());
    let sat = profile.and_then(|p| p.saturation.map(|s| p.points[s.index].stage));
    let ideal = profile.and_then(|p| p.ideal_zone.map(|i| p.points[i].stage));

    let csv_err = |e: csv::Error| ReportError::Format { path: path.to_path_buf(), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    let mut past_saturation = false;
    for i in order {
        let s = &stages[i].summary;
        let f = &stages[i].fidelity;
        let zone = if Some(i) == sat {
            past_saturation = true;
            "saturation"
        } else if past_saturation {
            "post_saturation"
        } else if Some(i) == ideal {
            "ideal"
        } else {
            ""
        };
        let mut row = vec![
            i.to_string(),
            opt(s.offered_qps),
            s.achieved_qps.to_string(),
            s.completed_qps.to_string(),
            opt(f.fidelity_ratio),
            f.valid.to_string(),
            (!f.valid).to_string(),
            stages[i].aborted.is_some().to_string(),
            opt(f.sched_delay.map(|d| d.p50)),
            opt(f.sched_delay.map(|d| d.p90)),
            opt(f.sched_delay.map(|d| d.p99)),
            s.request_count.to_string(),
            s.error_count.to_string(),
            s.timeout_count.to_string(),
            s.token_throughput.to_string(),
            s.output_token_throughput.to_string(),
        ];
        stat_cols(&s.ttft_stats, &mut row);
        stat_cols(&s.tpot_stats, &mut row);
        stat_cols(&s.itl_stats, &mut row);
        match &s.ntpot_stats {
            Some(n) => row.extend([n.mean, n.sample_variance, n.p50, n.p90, n.p99].iter().map(f64::to_string)),
            None => row.extend(std::iter::repeat(String::new()).take(5)),
        }
        stat_cols(&s.e2e_stats, &mut row);
        row.push(zone.to_string());
        debug_assert_eq!(row.len(), CSV_COLUMNS.len());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes `report.json` and `profile.csv` into `out_dir`. Traces are written
/// separately, stage by stage, with [`write_trace`].
pub fn emit_report(report: &Report, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_json(&out_dir.join("report.json"), report)?;
    let stages: Vec<StageResult> = report.stages.iter().filter_map(|s| s.result.clone()).collect();
    write_profile_csv(&out_dir.join("profile.csv"), &stages, report.profile.as_ref())
}

/// Writes an [`Analysis`] as `analysis.json` plus `profile.csv` into `out_dir`.
pub fn emit_analysis(analysis: &Analysis, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_json(&out_dir.join("analysis.json"), analysis)?;
    write_profile_csv(&out_dir.join("profile.csv"), &analysis.stages, analysis.profile.as_ref())
}
