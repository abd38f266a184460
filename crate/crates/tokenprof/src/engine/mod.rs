//! Open-loop partitioned load engine.
//!
//! The orchestrator materialises every request body, assigns schedule
//! offsets round-robin to `k` workers (worker `w` gets offsets
//! `w, w + k, w + 2k, ...`, so each sees rate `lambda / k` with the same
//! inter-arrival character), and collects records when every worker has
//! finished. Workers share nothing mutable during measurement except the
//! stop flags.

pub mod request;
pub mod sse;
mod worker;

use std::collections::BTreeMap;
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use hyper::header::{HeaderName, HeaderValue};
use hyper::Uri;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokenprof_core::fidelity::{FidelityReport, FidelityThresholds, LoadMode};
use tokenprof_core::metrics::RequestRecord;
use tokenprof_core::queue_model::{ClientModel, QueueModelError};
use tokenprof_core::schedule::ArrivalSchedule;
use tokenprof_core::workload::{PromptInstance, WorkloadSpec};

use crate::clock::Clock;
use crate::units::duration_ns;
pub use request::{Api, RequestTemplate};
use worker::{Job, StageCtx};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine parameter: {0}")]
    InvalidParam(String),
    #[error("target unreachable: {0}")]
    TargetUnreachable(String),
    #[error(
        "insufficient hardware: {required} workers needed (lambda = {lambda:.1} events/s, mu = {mu:.1} events/s, \
         rho_max = {rho_max}: ceil(lambda / (mu * rho_max)) = {required}) but the host has {cores} cores"
    )]
    InsufficientHardware { required: u32, cores: usize, lambda: f64, mu: f64, rho_max: f64 },
    #[error("stage aborted: {0}")]
    StageAborted(String),
    #[error("stage throttled: {0}")]
    Throttled(String),
    #[error("engine runtime: {0}")]
    Runtime(#[from] std::io::Error),
}

impl From<QueueModelError> for EngineError {
    fn from(e: QueueModelError) -> Self {
        EngineError::InvalidParam(e.to_string())
    }
}

type Result<T> = std::result::Result<T, EngineError>;

pub fn host_cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidelityConfig {
    /// Every scheduling-delay percentile must stay strictly below this.
    #[serde(rename = "max_sched_delay", with = "duration_ns", default = "default_max_delay")]
    pub max_sched_delay_ns: u64,
    #[serde(default = "default_min_ratio")]
    pub min_fidelity_ratio: f64,
}

fn default_max_delay() -> u64 {
    1_000_000
}

fn default_min_ratio() -> f64 {
    0.99
}

impl Default for FidelityConfig {
    fn default() -> Self {
        Self { max_sched_delay_ns: default_max_delay(), min_fidelity_ratio: default_min_ratio() }
    }
}

impl FidelityConfig {
    pub fn thresholds(&self) -> FidelityThresholds {
        FidelityThresholds {
            max_sched_delay_s: self.max_sched_delay_ns as f64 / 1e9,
            min_fidelity_ratio: self.min_fidelity_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    /// Base URL, e.g. `http://127.0.0.1:8000`. Filled in automatically when
    /// the run starts its own mock server.
    #[serde(default)]
    pub target: String,
    #[serde(default)]
    pub api: Api,
    #[serde(default = "default_true")]
    pub stream: bool,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    /// Worker count; host cores when unset.
    #[serde(default)]
    pub max_workers: Option<usize>,
    #[serde(default = "default_worker_concurrency")]
    pub worker_max_concurrency: usize,
    /// Size workers from the calibrated client model instead.
    #[serde(default)]
    pub auto_size: bool,
    #[serde(rename = "timeout", with = "duration_ns", default = "default_timeout")]
    pub timeout_ns: u64,
    #[serde(default = "default_mode")]
    pub mode: LoadMode,
    #[serde(default = "default_abort_rate")]
    pub error_abort_rate: f64,
    /// Gap between preparing a stage and its first scheduled dispatch.
    #[serde(rename = "lead_time", with = "duration_ns", default = "default_lead")]
    pub lead_time_ns: u64,
    #[serde(default)]
    pub fidelity: FidelityConfig,
}

fn default_true() -> bool {
    true
}

fn default_model() -> String {
    "mock".into()
}

fn default_worker_concurrency() -> usize {
    256
}

fn default_timeout() -> u64 {
    60_000_000_000
}

fn default_mode() -> LoadMode {
    LoadMode::OpenLoop
}

fn default_abort_rate() -> f64 {
    0.05
}

fn default_lead() -> u64 {
    100_000_000
}

impl EngineConfig {
    pub fn for_target(target: impl Into<String>) -> Self {
        Self {
            target: target.into(),
            api: Api::Chat,
            stream: true,
            model: default_model(),
            headers: BTreeMap::new(),
            max_workers: None,
            worker_max_concurrency: default_worker_concurrency(),
            auto_size: false,
            timeout_ns: default_timeout(),
            mode: default_mode(),
            error_abort_rate: default_abort_rate(),
            lead_time_ns: default_lead(),
            fidelity: FidelityConfig::default(),
        }
    }

    pub fn workers(&self) -> usize {
        self.max_workers.unwrap_or_else(host_cores)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_workers == Some(0) {
            return Err(EngineError::InvalidParam("engine.max_workers must be >= 1".into()));
        }
        if self.worker_max_concurrency == 0 {
            return Err(EngineError::InvalidParam("engine.worker_max_concurrency must be >= 1".into()));
        }
        if self.timeout_ns == 0 {
            return Err(EngineError::InvalidParam("engine.timeout must be > 0".into()));
        }
        if let LoadMode::ClosedLoop { concurrency: 0 } = self.mode {
            return Err(EngineError::InvalidParam("engine.mode.closed_loop.concurrency must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.error_abort_rate) {
            return Err(EngineError::InvalidParam("engine.error_abort_rate must lie in [0, 1]".into()));
        }
        if !(self.fidelity.min_fidelity_ratio > 0.0) {
            return Err(EngineError::InvalidParam("engine.fidelity.min_fidelity_ratio must be > 0".into()));
        }
        self.endpoint()?;
        self.header_pairs()?;
        Ok(())
    }

    pub fn endpoint(&self) -> Result<Uri> {
        let base = self.target.trim_end_matches('/');
        let uri: Uri = format!("{base}{}", self.api.path())
            .parse()
            .map_err(|e| EngineError::InvalidParam(format!("engine.target {:?}: {e}", self.target)))?;
        if uri.scheme_str() != Some("http") || uri.host().is_none() {
            return Err(EngineError::InvalidParam(format!(
                "engine.target must be an http:// URL with a host, got {:?}",
                self.target
            )));
        }
        Ok(uri)
    }

    fn header_pairs(&self) -> Result<Vec<(HeaderName, HeaderValue)>> {
        self.headers
            .iter()
            .map(|(k, v)| {
                let name = HeaderName::try_from(k.as_str())
                    .map_err(|e| EngineError::InvalidParam(format!("engine.headers.{k}: {e}")))?;
                let value = HeaderValue::try_from(v.as_str())
                    .map_err(|e| EngineError::InvalidParam(format!("engine.headers.{k}: {e}")))?;
                Ok((name, value))
            })
            .collect()
    }

    pub fn template(&self, workload: &WorkloadSpec) -> RequestTemplate {
        RequestTemplate {
            api: self.api,
            stream: self.stream,
            model: self.model.clone(),
            sampling: workload.sampling.clone(),
            payload: workload.payload,
        }
    }
}

/// Opens and closes one TCP connection to the target.
pub fn preflight(cfg: &EngineConfig) -> Result<()> {
    let uri = cfg.endpoint()?;
    let host = uri.host().expect("validated host").trim_matches(|c| c == '[' || c == ']');
    let port = uri.port_u16().unwrap_or(80);
    let addrs: Vec<_> = (host, port)
        .to_socket_addrs()
        .map_err(|e| EngineError::TargetUnreachable(format!("{}: {e}", cfg.target)))?
        .collect();
    let mut last = None;
    for addr in addrs {
        match TcpStream::connect_timeout(&addr, Duration::from_secs(2)) {
            Ok(_) => return Ok(()),
            Err(e) => last = Some(e),
        }
    }
    Err(EngineError::TargetUnreachable(format!(
        "{}: {}",
        cfg.target,
        last.map_or_else(|| "no addresses".to_string(), |e| e.to_string())
    )))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageVerdict {
    Ok,
    /// Fidelity thresholds missed; results are kept but flagged.
    Throttled,
    Aborted(String),
}

#[derive(Debug, Clone)]
pub struct StageRun {
    /// Ordered by request id.
    pub records: Vec<RequestRecord>,
    pub fidelity: FidelityReport,
    pub stage_start_ns: u64,
    pub wall_time_ns: u64,
    pub workers: usize,
    pub verdict: StageVerdict,
    /// Cancelled before every request was dispatched.
    pub incomplete: bool,
}

impl StageRun {
    pub fn aborted(&self) -> Option<&str> {
        match &self.verdict {
            StageVerdict::Aborted(reason) => Some(reason),
            _ => None,
        }
    }

    /// Turns a flagged stage into an error.
    pub fn check(&self) -> Result<()> {
        match &self.verdict {
            StageVerdict::Ok => Ok(()),
            StageVerdict::Aborted(reason) => Err(EngineError::StageAborted(reason.clone())),
            StageVerdict::Throttled => Err(EngineError::Throttled(describe_fidelity(&self.fidelity))),
        }
    }
}

pub fn describe_fidelity(f: &FidelityReport) -> String {
    let delay = f.sched_delay.map_or_else(
        || "no dispatches".to_string(),
        |d| format!("sched delay p50/p90/p99 = {:.3}/{:.3}/{:.3} ms", d.p50 * 1e3, d.p90 * 1e3, d.p99 * 1e3),
    );
    let ratio = f.fidelity_ratio.map_or_else(String::new, |r| format!(", fidelity ratio {r:.4}"));
    format!("dispatched {:.2} QPS{ratio}, {delay}", f.dispatched_qps)
}

fn stage_ctx(cfg: &EngineConfig, clock: Clock, cancel: Arc<AtomicBool>) -> Result<Arc<StageCtx>> {
    Ok(Arc::new(StageCtx {
        clock,
        uri: cfg.endpoint()?,
        headers: cfg.header_pairs()?,
        stream: cfg.stream,
        timeout: Duration::from_nanos(cfg.timeout_ns),
        cancel,
        abort: AtomicBool::new(false),
        abort_reason: Mutex::new(None),
        error_abort_rate: cfg.error_abort_rate,
    }))
}

fn finish(
    cfg: &EngineConfig,
    ctx: &StageCtx,
    mut records: Vec<RequestRecord>,
    expected: usize,
    stage_start_ns: u64,
    mode: LoadMode,
    offered: Option<f64>,
    workers: usize,
) -> StageRun {
    records.sort_by_key(|r| r.request_id);
    let end = records.iter().map(|r| r.completion_ns).max().unwrap_or_else(|| ctx.clock.now_ns());
    let wall_time_ns = end.saturating_sub(stage_start_ns).max(1);
    let fidelity = FidelityReport::compute(&records, mode, offered, wall_time_ns, cfg.fidelity.thresholds());
    let failed = records.iter().filter(|r| !r.is_success()).count();
    let verdict = if let Some(reason) = ctx.abort_reason.lock().expect("abort lock").clone() {
        StageVerdict::Aborted(reason)
    } else if !records.is_empty() && failed as f64 > cfg.error_abort_rate * records.len() as f64 {
        StageVerdict::Aborted(format!(
            "{failed} of {} requests failed (threshold {:.1}%)",
            records.len(),
            cfg.error_abort_rate * 100.0
        ))
    } else if !fidelity.valid {
        StageVerdict::Throttled
    } else {
        StageVerdict::Ok
    };
    let incomplete = ctx.cancel.load(Ordering::Relaxed) && records.len() < expected;
    StageRun { records, fidelity, stage_start_ns, wall_time_ns, workers, verdict, incomplete }
}

fn join_workers(handles: Vec<std::thread::JoinHandle<std::io::Result<Vec<RequestRecord>>>>) -> Result<Vec<RequestRecord>> {
    let mut records = Vec::new();
    for h in handles {
        let mut part = h.join().map_err(|_| EngineError::Runtime(std::io::Error::other("worker panicked")))??;
        records.append(&mut part);
    }
    Ok(records)
}

/// Dispatches every offset of `schedule` once, at `stage_start + offset`,
/// across `cfg.workers()` isolated workers. Requests whose offset falls in
/// `[0, warmup_ns)` are marked warm-up.
pub fn run_stage(
    cfg: &EngineConfig,
    clock: Clock,
    schedule: &ArrivalSchedule,
    prompts: &[PromptInstance],
    warmup_ns: u64,
    template: &RequestTemplate,
    cancel: Arc<AtomicBool>,
) -> Result<StageRun> {
    cfg.validate()?;
    let n = schedule.len();
    if n == 0 {
        return Err(EngineError::InvalidParam("schedule is empty".into()));
    }
    if prompts.len() < n {
        return Err(EngineError::InvalidParam(format!("workload has {} prompts for {n} requests", prompts.len())));
    }
    preflight(cfg)?;
    let ctx = stage_ctx(cfg, clock, cancel)?;
    let k = cfg.workers().min(n).max(1);

    let bodies: Vec<_> = prompts[..n].iter().map(|p| template.body(p)).collect();
    let stage_start_ns = clock.now_ns() + cfg.lead_time_ns;
    let mut partitions: Vec<Vec<Job>> = (0..k).map(|_| Vec::with_capacity(n / k + 1)).collect();
    for (i, (offset, body)) in schedule.offsets_ns.iter().zip(bodies).enumerate() {
        partitions[i % k].push(Job {
            request_id: i as u64,
            intended_ns: stage_start_ns + offset,
            body,
            input_tokens: prompts[i].input_token_count,
            requested_output_tokens: prompts[i].max_tokens,
            warmup: *offset < warmup_ns,
        });
    }

    let mut handles = Vec::with_capacity(k);
    for (w, jobs) in partitions.into_iter().enumerate() {
        let ctx = ctx.clone();
        let conc = cfg.worker_max_concurrency;
        handles.push(
            std::thread::Builder::new()
                .name(format!("worker-{w}"))
                .spawn(move || worker::run_open_loop(ctx, w as u32, jobs, conc))?,
        );
    }
    let records = join_workers(handles)?;
    Ok(finish(cfg, &ctx, records, n, stage_start_ns, LoadMode::OpenLoop, Some(schedule.rate), k))
}

/// Comparison mode: keeps exactly `concurrency` requests in flight until
/// every prompt has been sent. The first `warmup_requests` are warm-up.
pub fn run_closed_loop(
    cfg: &EngineConfig,
    clock: Clock,
    concurrency: usize,
    prompts: &[PromptInstance],
    warmup_requests: usize,
    template: &RequestTemplate,
    cancel: Arc<AtomicBool>,
) -> Result<StageRun> {
    cfg.validate()?;
    if concurrency == 0 {
        return Err(EngineError::InvalidParam("closed-loop concurrency must be >= 1".into()));
    }
    if prompts.is_empty() {
        return Err(EngineError::InvalidParam("workload is empty".into()));
    }
    preflight(cfg)?;
    let ctx = stage_ctx(cfg, clock, cancel)?;
    let k = cfg.workers().min(concurrency).max(1);
    let n = prompts.len();
    let jobs: Arc<Vec<Job>> = Arc::new(
        prompts
            .iter()
            .enumerate()
            .map(|(i, p)| Job {
                request_id: i as u64,
                intended_ns: 0,
                body: template.body(p),
                input_tokens: p.input_token_count,
                requested_output_tokens: p.max_tokens,
                warmup: i < warmup_requests,
            })
            .collect(),
    );
    let next = Arc::new(AtomicUsize::new(0));
    let stage_start_ns = clock.now_ns();
    let mut handles = Vec::with_capacity(k);
    for w in 0..k {
        let slots = concurrency / k + usize::from(w < concurrency % k);
        let assigned = (n * slots).div_ceil(concurrency);
        let (ctx, jobs, next) = (ctx.clone(), jobs.clone(), next.clone());
        handles.push(
            std::thread::Builder::new()
                .name(format!("worker-{w}"))
                .spawn(move || worker::run_closed_loop(ctx, w as u32, jobs, next, slots, assigned))?,
        );
    }
    let records = join_workers(handles)?;
    Ok(finish(cfg, &ctx, records, n, stage_start_ns, LoadMode::ClosedLoop { concurrency }, None, k))
}

/// Worker layout chosen by [`auto_size`], with the arithmetic behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sizing {
    pub max_workers: usize,
    pub worker_max_concurrency: usize,
    /// Token events per second the stage will deliver.
    pub event_rate: f64,
    /// Per-worker utilisation at that rate.
    pub worker_rho: f64,
}

/// Smallest worker count keeping every worker at or below the model's
/// `rho_max`, and a per-worker concurrency cap of twice the expected
/// in-flight requests per worker.
pub fn auto_size(
    target_rate: f64,
    model: &ClientModel,
    events_per_request: f64,
    mean_request_duration_s: f64,
    host_cores: usize,
) -> Result<Sizing> {
    if !(target_rate.is_finite() && target_rate > 0.0) {
        return Err(EngineError::InvalidParam(format!("target rate must be > 0, got {target_rate}")));
    }
    if !(events_per_request.is_finite() && events_per_request > 0.0) {
        return Err(EngineError::InvalidParam("events per request must be > 0".into()));
    }
    let lambda = target_rate * events_per_request;
    let k = tokenprof_core::queue_model::min_workers(lambda, model.mu, model.rho_max)?;
    if k as usize > host_cores {
        return Err(EngineError::InsufficientHardware {
            required: k,
            cores: host_cores,
            lambda,
            mu: model.mu,
            rho_max: model.rho_max,
        });
    }
    let in_flight = target_rate * mean_request_duration_s.max(0.0) / k as f64;
    Ok(Sizing {
        max_workers: k as usize,
        worker_max_concurrency: ((in_flight * 2.0).ceil() as usize).max(4),
        event_rate: lambda,
        worker_rho: lambda / (k as f64 * model.mu),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(mu: f64) -> ClientModel {
        ClientModel { mu, s2: 2.0 / (mu * mu), rho_max: 0.5, events_per_request: 1.0, samples: 1, host_cores: 16 }
    }

    #[test]
    fn auto_size_examples() {
        let m = model(1000.0);
        assert_eq!(auto_size(1.0, &m, 1.0, 0.1, 16).unwrap().max_workers, 1);
        // lambda = 6_500 events/s at mu * rho_max = 500 -> 13 workers
        let s = auto_size(6_500.0, &m, 1.0, 0.01, 16).unwrap();
        assert_eq!(s.max_workers, 13);
        assert!(s.worker_rho <= 0.5);
        match auto_size(100_000.0, &m, 1.0, 0.01, 16) {
            Err(EngineError::InsufficientHardware { required: 200, cores: 16, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(auto_size(0.0, &m, 1.0, 0.01, 16).is_err());
    }

    #[test]
    fn auto_size_concurrency_covers_in_flight() {
        let s = auto_size(100.0, &model(1e6), 200.0, 0.5, 8).unwrap();
        assert_eq!(s.max_workers, 1);
        assert_eq!(s.worker_max_concurrency, 100);
    }

    #[test]
    fn config_validation_names_fields() {
        let mut c = EngineConfig::for_target("http://127.0.0.1:1");
        c.validate().unwrap();
        c.worker_max_concurrency = 0;
        assert!(c.validate().unwrap_err().to_string().contains("worker_max_concurrency"));
        let mut c = EngineConfig::for_target("https://x");
        assert!(c.validate().unwrap_err().to_string().contains("engine.target"));
        c.target = "http://h:9/prefix/".into();
        assert_eq!(c.endpoint().unwrap().to_string(), "http://h:9/prefix/v1/chat/completions");
        c.mode = LoadMode::ClosedLoop { concurrency: 0 };
        assert!(c.validate().is_err());
    }

    #[test]
    fn engine_config_yaml_defaults() {
        let c: EngineConfig = serde_yaml::from_str("target: http://127.0.0.1:8000\ntimeout: 5s\n").unwrap();
        assert_eq!(c.timeout_ns, 5_000_000_000);
        assert_eq!(c.mode, LoadMode::OpenLoop);
        assert_eq!(c.fidelity.thresholds(), FidelityThresholds::default());
        let closed: EngineConfig =
            serde_yaml::from_str("target: http://h:1\nmode: !closed_loop\n  concurrency: 4\n").unwrap();
        assert_eq!(closed.mode, LoadMode::ClosedLoop { concurrency: 4 });
        assert!(serde_yaml::from_str::<EngineConfig>("target: http://h:1\nworkers: 3\n").is_err());
    }

    #[test]
    fn unreachable_target() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        drop(listener);
        let c = EngineConfig::for_target(format!("http://127.0.0.1:{port}"));
        assert!(matches!(preflight(&c), Err(EngineError::TargetUnreachable(_))));
    }
}
