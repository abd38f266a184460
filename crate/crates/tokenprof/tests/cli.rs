use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::{Mutex, MutexGuard};
use std::time::Duration;

use tokenprof::clock::Clock;
use tokenprof::config::RunConfig;
use tokenprof::run::{execute_run, RunOptions};
use tokenprof_core::fidelity::LoadMode;
use tokenprof_core::profile::report::{read_traces, Report};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tokenprof"));
    c.env_remove("TOKENPROF_REPORT_DIR");
    c
}

fn run_bin(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const MINIMAL: &str = "
seed: 3
workload:
  source: synthetic
  input_tokens: 32
  output_tokens: 8
  truncation_limit: 32
load:
  rate: 20
  requests: 20
mock:
  output_tokens: echo
";

const SWEEP: &str = "
seed: 5
workload:
  source: synthetic
  input_tokens: 16
  output_tokens: 4
  truncation_limit: 16
load:
  sweep:
    base_rate: 10
    max_rate: 80
    progression:
      geometric:
        factor: 2
  requests: 12
mock: {}
";

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn trace_names(dir: &Path) -> Vec<String> {
    let mut v: Vec<_> = std::fs::read_dir(dir.join("traces"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn minimal_config_writes_a_report_directory() {
    let _g = serial();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.yaml", MINIMAL);
    let out = tmp.path().join("out");
    let o = run_bin(&["run", "-c", cfg.to_str().unwrap(), "--report-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("stage 1/1"));
    assert!(out.join("report.json").is_file() && out.join("profile.csv").is_file());
    assert_eq!(trace_names(&out), vec!["stage-000.jsonl", "stage-000.meta.json"]);

    let report = Report::read(&out.join("report.json")).unwrap();
    assert_eq!(report.tool_version, env!("CARGO_PKG_VERSION"));
    assert!(report.host.cores >= 1);
    assert_eq!(report.mock_placement.as_deref(), Some("colocated"));
    // Effective values are archived even when the file never set them.
    assert_eq!(report.config["workload"]["sampling"]["temperature"], 1.0);
    assert_eq!(report.config["engine"]["worker_max_concurrency"], 256);
    assert!(report.config["engine"]["max_workers"].is_u64());
    let stage = &report.stages[0];
    assert_eq!(stage.result.as_ref().unwrap().summary.request_count, 20);
    assert_eq!(stage.workload.count, 20);
    assert!(report.profile.is_none() && report.verdict.is_none());
    let csv = std::fs::read_to_string(out.join("profile.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn report_dir_comes_from_the_environment() {
    let _g = serial();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.yaml", MINIMAL);
    let out = tmp.path().join("env-out");
    let o = bin().args(["run", "-c", cfg.to_str().unwrap()]).env("TOKENPROF_REPORT_DIR", &out).output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("report.json").is_file());
}

#[test]
fn invalid_values_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        (MINIMAL.replace("rate: 20", "rate: 0"), "load.rate"),
        (MINIMAL.replace("requests: 20", "requests: 20\n  burstiness: 2"), "burstiness"),
        (MINIMAL.replace("mock:\n  output_tokens: echo\n", ""), "engine.target"),
        (format!("{MINIMAL}engine:\n  worker_max_concurrency: 0\n"), "engine.worker_max_concurrency"),
        (MINIMAL.replace("truncation_limit: 32", "truncation_limit: 32\n  sampling: { temprature: 0.5 }"), "temprature"),
    ];
    for (text, field) in cases {
        let cfg = write_config(tmp.path(), "bad.yaml", &text);
        let o = run_bin(&["run", "-c", cfg.to_str().unwrap(), "--report-dir", tmp.path().to_str().unwrap()]);
        assert_eq!(code(&o), 1);
        assert!(stderr(&o).contains(field), "expected {field:?} in {:?}", stderr(&o));
    }
    let o = run_bin(&["run", "-c", "/nonexistent/run.yaml"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn sweep_runs_every_stage_in_order_and_analyze_reproduces_it() {
    let _g = serial();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sweep.yaml", SWEEP);
    let out = tmp.path().join("sweep");
    let o = run_bin(&["sweep", "-c", cfg.to_str().unwrap(), "--report-dir", out.to_str().unwrap()]);
    let exit = code(&o);
    assert!([0, 2, 3].contains(&exit), "{exit}: {}", stderr(&o));
    let report = Report::read(&out.join("report.json")).unwrap();
    let rates: Vec<f64> = report.stages.iter().map(|s| s.meta.offered_qps.unwrap()).collect();
    assert_eq!(rates, vec![10.0, 20.0, 40.0, 80.0]);
    assert_eq!(report.stages.iter().map(|s| s.meta.index).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    let lines: Vec<_> = stderr(&o).lines().filter(|l| l.starts_with("stage ")).map(str::to_string).collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("stage 1/4: offered 10.00 QPS") && lines[3].starts_with("stage 4/4: offered 80.00 QPS"));
    let profile = report.profile.clone().unwrap();
    assert_eq!(profile.points.len(), 4);
    assert_eq!(report.verdict.unwrap().exit_code(), exit);
    let csv = std::fs::read_to_string(out.join("profile.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + profile.points.len());

    let again = tmp.path().join("analysis");
    let o = run_bin(&["analyze", out.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(code(&o), exit, "{}", stderr(&o));
    let analysis: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(again.join("analysis.json")).unwrap()).unwrap();
    assert_eq!(analysis["profile"], serde_json::to_value(&profile).unwrap());
    for (i, s) in report.stages.iter().enumerate() {
        assert_eq!(analysis["stages"][i], serde_json::to_value(s.result.as_ref().unwrap()).unwrap());
    }
    assert_eq!(std::fs::read_to_string(again.join("profile.csv")).unwrap(), csv);

    // A later single-stage run in the same directory leaves no stale traces.
    let single = write_config(tmp.path(), "single.yaml", MINIMAL);
    let o = run_bin(&["run", "-c", single.to_str().unwrap(), "--report-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(trace_names(&out).len(), 2);
    assert_eq!(read_traces(&out).unwrap().len(), 1);
}

#[test]
fn sweep_command_requires_a_sweep_section() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.yaml", MINIMAL);
    let o = run_bin(&["sweep", "-c", cfg.to_str().unwrap(), "--report-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("load.sweep"));
}

#[test]
fn analyze_of_an_empty_directory_is_insufficient_data() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_bin(&["analyze", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("insufficient data"), "{}", stderr(&o));
}

#[test]
fn effective_config_round_trips_through_yaml_and_report() {
    let _g = serial();
    let cfg = RunConfig::from_yaml(SWEEP).unwrap();
    assert_eq!(RunConfig::from_yaml(&cfg.to_yaml()).unwrap(), cfg);
    let tmp = tempfile::tempdir().unwrap();
    let opts = RunOptions { report_dir: Some(tmp.path().to_path_buf()), ..RunOptions::default() };
    let out = execute_run(cfg.clone(), opts).unwrap();
    let archived = RunConfig::from_report(&out.report_dir.join("report.json")).unwrap();
    assert_eq!(archived, cfg);
    assert_eq!(archived.plan().unwrap(), cfg.plan().unwrap());
}

#[test]
fn closed_loop_config_runs_one_stage() {
    let _g = serial();
    let text = format!("{MINIMAL}engine:\n  mode: !closed_loop {{ concurrency: 2 }}\n");
    let cfg = RunConfig::from_yaml(&text).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let out = execute_run(cfg, RunOptions { report_dir: Some(tmp.path().into()), ..RunOptions::default() }).unwrap();
    assert_eq!(out.exit_code, 0);
    let stage = &out.report.stages[0];
    assert_eq!(stage.meta.load_mode, LoadMode::ClosedLoop { concurrency: 2 });
    assert!(stage.schedule.is_none());
    assert_eq!(stage.result.as_ref().unwrap().summary.success_count, 20);
}

#[test]
fn failing_target_exits_with_stage_aborted() {
    let _g = serial();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "fail.yaml", &MINIMAL.replace("output_tokens: echo", "failure_rate: 1.0"));
    let o = run_bin(&["run", "-c", cfg.to_str().unwrap(), "--report-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("ABORTED"));
    let report = Report::read(&tmp.path().join("report.json")).unwrap();
    assert!(report.stages[0].meta.aborted.is_some());
}

fn interrupt(pid: u32) {
    let ok = Command::new("kill").args(["-INT", &pid.to_string()]).status().unwrap().success();
    assert!(ok);
}

#[test]
fn interrupt_keeps_a_partial_trace() {
    let _g = serial();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "long.yaml", &MINIMAL.replace("requests: 20", "duration: 60s"));
    let mut child = bin()
        .args(["run", "-c", cfg.to_str().unwrap(), "--report-dir", tmp.path().to_str().unwrap()])
        .stderr(Stdio::null())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    std::thread::sleep(Duration::from_millis(1500));
    interrupt(child.id());
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(130));
    let traces = read_traces(tmp.path()).unwrap();
    assert_eq!(traces.len(), 1);
    let (meta, records) = &traces[0];
    assert!(meta.incomplete);
    assert!(!records.is_empty() && records.len() < 1200);
    let report = Report::read(&tmp.path().join("report.json")).unwrap();
    assert!(report.stages[0].meta.incomplete);
}

#[test]
fn mock_command_prints_a_banner_and_stops_on_interrupt() {
    let _g = serial();
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let bind = format!("127.0.0.1:{port}");
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("log.jsonl");
    let mut child = bin()
        .args(["mock", "--bind", &bind, "--per-token-delay", "2ms", "--output-tokens", "3"])
        .args(["--log", log.to_str().unwrap()])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let banner = lines.next().unwrap().unwrap();
    assert!(banner.contains(&bind) && banner.contains("per_token_delay=2ms") && banner.contains("output_tokens=3"));
    let capacity = lines.next().unwrap().unwrap();
    assert!(capacity.starts_with("self-test capacity:"), "{capacity}");

    let busy = run_bin(&["mock", "--bind", &bind, "--no-self-test"]);
    assert_ne!(code(&busy), 0);
    assert!(stderr(&busy).contains("cannot bind"));

    interrupt(child.id());
    assert_eq!(child.wait().unwrap().code(), Some(0));
    // The self-test traffic is not part of the log.
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 0);
}

#[test]
fn calibrate_reports_moments_and_caps_workers() {
    let _g = serial();
    let model = tokenprof::calibrate::calibrate(
        tokenprof::calibrate::CalibrationOptions { requests: 120, ..Default::default() },
        Clock::new(),
    )
    .unwrap();
    assert!(model.mu > 0.0);
    assert!(model.s2 >= 1.0 / (model.mu * model.mu) * (1.0 - 1e-12));
    assert_eq!(model.workers_for(model.single_worker_capacity_qps() * 0.5 * 0.5).unwrap(), 1);
    // ten times the single-worker capacity at rho_max = 0.5
    assert_eq!(model.workers_for(10.0 * model.single_worker_capacity_qps()).unwrap(), 20);

    let o = run_bin(&["calibrate", "--requests", "120", "--target-rate", "1e9"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("mu ") && stdout(&o).contains("E[S^2]") && stdout(&o).contains("min_workers"));
    assert!(stderr(&o).contains("warning") && stderr(&o).contains("cores"));
}

#[test]
fn version_names_the_schemas() {
    let o = run_bin(&["version"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("config schema 1") && stdout(&o).contains("report schema 1"));
}
