//! Command-line front end.
//!
//! Exit statuses: 0 success (sweep: saturation found), 1 error, 2 sweep
//! did not reach saturation, 3 sweep was client-bound, 4 a stage aborted
//! on its error budget, 130 interrupted.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use tokenprof_core::profile::report::{analyze_traces, emit_analysis, Report, REPORT_SCHEMA_VERSION};
use tokenprof_core::profile::SaturationConfig;
use tokenprof_core::queue_model::DEFAULT_RHO_MAX;
use tokenprof_core::workload::{build_workload, WorkloadSpec};

use crate::calibrate::{calibrate, CalibrationOptions};
use crate::clock::Clock;
use crate::config::{RunConfig, CONFIG_VERSION, REPORT_DIR_ENV};
use crate::engine::{host_cores, run_closed_loop, EngineConfig};
use crate::mockserver::{MockBehavior, MockServer, OutputLength};
use crate::run::{execute_run, exit, RunOptions};
use crate::units::{format_duration_ns, parse_duration_ns};

/// Log filter variable, in `tracing` env-filter syntax.
pub const LOG_ENV: &str = "TOKENPROF_LOG";

#[derive(Debug, Parser)]
#[command(name = "tokenprof", version, about = "Open-loop latency profiler for token-streaming inference servers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the stage or sweep a config file describes.
    Run(RunArgs),
    /// Run a rate sweep; the config must contain `load.sweep`.
    Sweep(RunArgs),
    /// Measure this host's single-worker client capacity.
    Calibrate(CalibrateArgs),
    /// Serve the mock inference endpoint until interrupted.
    Mock(MockArgs),
    /// Recompute summaries and the profile from stored traces.
    Analyze(AnalyzeArgs),
    /// Print tool and schema versions.
    Version,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// YAML run configuration.
    #[arg(short, long)]
    pub config: PathBuf,
    /// Output directory; overrides the config and the environment.
    #[arg(long, env = REPORT_DIR_ENV)]
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Request rate to size workers for.
    #[arg(long)]
    pub target_rate: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_RHO_MAX)]
    pub rho_max: f64,
    #[arg(long, default_value_t = 200)]
    pub output_tokens: u32,
    #[arg(long, default_value_t = 400)]
    pub requests: usize,
    #[arg(long, default_value_t = 16)]
    pub concurrency: usize,
    /// Print the client model as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct MockArgs {
    #[arg(long, default_value = "127.0.0.1:8000")]
    pub bind: String,
    /// YAML behavior file; flags given on the command line override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_duration_ns)]
    pub prefill_delay: Option<u64>,
    #[arg(long, value_parser = parse_duration_ns)]
    pub per_token_delay: Option<u64>,
    #[arg(long, value_parser = parse_duration_ns)]
    pub jitter: Option<u64>,
    /// Token count, or `echo` to honour each request's max_tokens.
    #[arg(long)]
    pub output_tokens: Option<OutputLength>,
    #[arg(long)]
    pub failure_rate: Option<f64>,
    #[arg(long)]
    pub max_connections: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Runtime threads; all cores when unset.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Write the emission log here (JSON lines) on shutdown.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Skip the startup capacity self-test.
    #[arg(long)]
    pub no_self_test: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Report directory or its `traces/` subdirectory.
    pub dir: PathBuf,
    /// Where to write analysis.json and profile.csv; defaults to `dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env(LOG_ENV)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

/// Sets `flag` on the first interrupt; a second interrupt exits at once.
fn on_interrupt(flag: Arc<AtomicBool>, notice: &'static str) {
    let spawned = std::thread::Builder::new().name("signals".into()).spawn(move || {
        let Ok(rt) = tokio::runtime::Builder::new_current_thread().enable_all().build() else { return };
        rt.block_on(async move {
            while tokio::signal::ctrl_c().await.is_ok() {
                if flag.swap(true, Ordering::SeqCst) {
                    std::process::exit(exit::INTERRUPTED);
                }
                eprintln!("{notice}");
            }
        });
    });
    if let Err(e) = spawned {
        tracing::warn!("no interrupt handling: {e}");
    }
}

fn fail(e: impl std::fmt::Display) -> i32 {
    eprintln!("error: {e}");
    exit::ERROR
}

pub fn main_with(cli: Cli) -> i32 {
    match cli.command {
        Command::Run(a) => cmd_run(&a, false),
        Command::Sweep(a) => cmd_run(&a, true),
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Mock(a) => cmd_mock(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Version => {
            println!(
                "tokenprof {} (config schema {CONFIG_VERSION}, report schema {REPORT_SCHEMA_VERSION})",
                env!("CARGO_PKG_VERSION")
            );
            exit::OK
        }
    }
}

fn cmd_run(args: &RunArgs, sweep: bool) -> i32 {
    let cfg = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if sweep && cfg.load.sweep.is_none() {
        return fail("load.sweep: the sweep command needs a `load.sweep` section");
    }
    let cancel = Arc::new(AtomicBool::new(false));
    on_interrupt(cancel.clone(), "interrupted; flushing the current stage's trace (interrupt again to quit)");
    let opts = RunOptions { report_dir: args.report_dir.clone(), cancel, progress: Box::new(std::io::stderr()) };
    match execute_run(cfg, opts) {
        Ok(out) => {
            println!("report: {}", out.report_dir.join("report.json").display());
            out.exit_code
        }
        Err(e) => fail(e),
    }
}

fn cmd_calibrate(args: &CalibrateArgs) -> i32 {
    if !(args.rho_max > 0.0 && args.rho_max <= 1.0) {
        return fail(format!("--rho-max must lie in (0, 1], got {}", args.rho_max));
    }
    let opts = CalibrationOptions {
        output_tokens: args.output_tokens,
        concurrency: args.concurrency,
        requests: args.requests,
        rho_max: args.rho_max,
        ..CalibrationOptions::default()
    };
    let model = match calibrate(opts, Clock::new()) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&model).expect("model serialises"));
    } else {
        println!("mu        {:.1} events/s per worker", model.mu);
        println!("E[S^2]    {:.6e} s^2 (1/mu^2 = {:.6e})", model.s2, 1.0 / (model.mu * model.mu));
        println!(
            "capacity  {:.1} QPS per worker at {} events/request (rho = 1)",
            model.single_worker_capacity_qps(),
            model.events_per_request
        );
    }
    if let Some(rate) = args.target_rate {
        match model.workers_for(rate) {
            Ok(k) => {
                let cores = host_cores();
                println!("min_workers {k} for {rate} QPS at rho_max {}", model.rho_max);
                if k as usize > cores {
                    eprintln!(
                        "warning: {k} workers needed but the host has {cores} cores; capped at {cores}, \
                         the client will limit this rate"
                    );
                }
            }
            Err(e) => return fail(e),
        }
    }
    exit::OK
}

fn mock_behavior(args: &MockArgs) -> Result<MockBehavior, String> {
    let mut b = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            serde_yaml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => MockBehavior::default(),
    };
    if let Some(v) = args.prefill_delay {
        b.prefill_delay_ns = v;
    }
    if let Some(v) = args.per_token_delay {
        b.per_token_delay_ns = v;
    }
    if let Some(v) = args.jitter {
        b.jitter_ns = v;
    }
    if let Some(v) = args.output_tokens {
        b.output_tokens = v;
    }
    if let Some(v) = args.failure_rate {
        b.failure_rate = v;
    }
    if let Some(v) = args.max_connections {
        b.max_connections = v;
    }
    if let Some(v) = args.seed {
        b.seed = v;
    }
    b.log = args.log.is_some();
    b.validate().map_err(|e| e.to_string())?;
    Ok(b)
}

/// One-line description of a mock behavior.
pub fn describe_behavior(b: &MockBehavior) -> String {
    format!(
        "prefill_delay={} per_token_delay={} jitter={} output_tokens={} failure_rate={} max_connections={}",
        format_duration_ns(b.prefill_delay_ns),
        format_duration_ns(b.per_token_delay_ns),
        format_duration_ns(b.jitter_ns),
        b.output_tokens,
        b.failure_rate,
        b.max_connections
    )
}

/// Short closed-loop burst against the running server; returns completed
/// requests and tokens per second.
fn self_test(server: &MockServer, clock: Clock) -> Result<(f64, f64), String> {
    let mut cfg = EngineConfig::for_target(server.base_url());
    cfg.max_workers = Some(1);
    let spec = WorkloadSpec::synthetic(32, 64, 0);
    let prompts = build_workload(&spec, 128).map_err(|e| e.to_string())?;
    let run = run_closed_loop(&cfg, clock, 16, &prompts, 0, &cfg.template(&spec), Arc::default())
        .map_err(|e| e.to_string())?;
    let secs = run.wall_time_ns as f64 / 1e9;
    let ok: Vec<_> = run.records.iter().filter(|r| r.is_success()).collect();
    let tokens: u64 = ok.iter().map(|r| r.output_tokens as u64).sum();
    Ok((ok.len() as f64 / secs, tokens as f64 / secs))
}

fn cmd_mock(args: &MockArgs) -> i32 {
    let behavior = match mock_behavior(args) {
        Ok(b) => b,
        Err(e) => return fail(e),
    };
    let clock = Clock::new();
    let server = match MockServer::start(behavior, &args.bind, clock, args.threads) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    println!("serving {} ({})", server.base_url(), describe_behavior(server.behavior()));
    if !args.no_self_test {
        match self_test(&server, clock) {
            Ok((qps, tps)) => println!("self-test capacity: {qps:.0} requests/s, {tps:.0} tokens/s (in-process client)"),
            Err(e) => println!("self-test failed: {e}"),
        }
        server.log().take();
    }
    let _ = std::io::stdout().flush();

    let stop = Arc::new(AtomicBool::new(false));
    on_interrupt(stop.clone(), "shutting down");
    while !stop.load(Ordering::SeqCst) {
        std::thread::sleep(std::time::Duration::from_millis(100));
    }
    let log = server.log();
    server.shutdown();
    if let Some(path) = &args.log {
        if let Err(e) = log.write_jsonl(path) {
            return fail(format!("{}: {e}", path.display()));
        }
        println!("log: {} ({} requests)", path.display(), log.len());
    }
    exit::OK
}

/// Saturation thresholds archived alongside the traces, if any.
fn archived_saturation(dir: &Path) -> SaturationConfig {
    [dir.join("report.json"), dir.join("../report.json")]
        .iter()
        .find_map(|p| Report::read(p).ok())
        .and_then(|r| r.config.get("saturation").cloned())
        .and_then(|v| serde_json::from_value(v).ok())
        .unwrap_or_default()
}

fn cmd_analyze(args: &AnalyzeArgs) -> i32 {
    let analysis = match analyze_traces(&args.dir, archived_saturation(&args.dir)) {
        Ok(a) => a,
        Err(e) => return fail(e),
    };
    let out = args.out.clone().unwrap_or_else(|| args.dir.clone());
    if let Err(e) = std::fs::create_dir_all(&out).map_err(|e| e.to_string()).and_then(|_| {
        emit_analysis(&analysis, &out).map_err(|e| e.to_string())
    }) {
        return fail(e);
    }
    for s in &analysis.stages {
        let q = s.summary.offered_qps.map_or_else(|| "closed loop".into(), |q| format!("{q:.2} QPS"));
        let p99 = s.summary.ntpot_stats.as_ref().map_or(f64::NAN, |t| t.p99 * 1e3);
        println!("{q}: NTPOT p99 {p99:.3} ms, fidelity {}", if s.fidelity.valid { "ok" } else { "INVALID" });
    }
    if let Some(p) = &analysis.profile {
        println!("verdict: {}", serde_json::to_value(p.verdict).expect("verdict serialises").as_str().unwrap_or_default());
    }
    println!("wrote {}", out.join("analysis.json").display());
    match analysis.profile.map(|p| p.verdict) {
        Some(v) => v.exit_code(),
        None => exit::OK,
    }
}
