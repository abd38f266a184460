use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex, MutexGuard};

use tokenprof::clock::Clock;
use tokenprof::engine::{host_cores, run_closed_loop, run_stage, EngineConfig, EngineError, StageRun, StageVerdict};
use tokenprof::mockserver::{MockBehavior, MockServer};
use tokenprof_core::metrics::{aggregate, RequestStatus};
use tokenprof_core::schedule::{constant_schedule, poisson_schedule, ArrivalSchedule};
use tokenprof_core::workload::{build_workload, WorkloadSpec};

// Timing-sensitive tests share one machine; run them one at a time.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn mock(behavior: MockBehavior, clock: Clock) -> MockServer {
    MockServer::start(behavior, "127.0.0.1:0", clock, None).unwrap()
}

fn config(server: &MockServer, workers: usize) -> EngineConfig {
    let mut c = EngineConfig::for_target(server.base_url());
    c.max_workers = Some(workers);
    c
}

fn open_loop(server: &MockServer, clock: Clock, workers: usize, schedule: &ArrivalSchedule, output: u32) -> StageRun {
    let spec = WorkloadSpec::synthetic(32, output, 1);
    let prompts = build_workload(&spec, schedule.len()).unwrap();
    let cfg = config(server, workers);
    run_stage(&cfg, clock, schedule, &prompts, 0, &cfg.template(&spec), Arc::new(AtomicBool::new(false))).unwrap()
}

#[test]
fn low_rate_zero_delay_is_high_fidelity() {
    let _g = serial();
    let clock = Clock::new();
    let server = mock(MockBehavior::zero_delay(200), clock);
    let schedule = constant_schedule(10.0, 100).unwrap();
    let run = open_loop(&server, clock, 2, &schedule, 200);
    let f = &run.fidelity;
    let d = f.sched_delay.unwrap();
    assert!(f.fidelity_ratio.unwrap() >= 0.99, "{f:?}");
    assert!(d.p99 < 1e-3, "{d:?}");
    assert!(f.valid);
    assert_eq!(run.verdict, StageVerdict::Ok);
    assert!(run.records.iter().all(|r| r.output_tokens == 200 && r.server_output_tokens == Some(200)));
}

#[test]
fn every_offset_dispatched_once_at_its_intended_instant() {
    let _g = serial();
    let clock = Clock::new();
    let server = mock(MockBehavior::zero_delay(8), clock);
    let schedule = poisson_schedule(200.0, 300, 5).unwrap();
    let run = open_loop(&server, clock, 3, &schedule, 8);
    assert_eq!(run.records.len(), schedule.len());
    for (i, r) in run.records.iter().enumerate() {
        assert_eq!(r.request_id, i as u64);
        assert_eq!(r.intended_dispatch_ns, run.stage_start_ns + schedule.offsets_ns[i]);
        assert!(r.actual_send_ns >= r.intended_dispatch_ns);
        assert_eq!(r.worker as usize, i % 3);
        r.validate().unwrap();
    }
    assert_eq!(server.log().len(), schedule.len());
}

#[test]
fn single_request_stage() {
    let _g = serial();
    let clock = Clock::new();
    let server = mock(MockBehavior::zero_delay(4), clock);
    let schedule = constant_schedule(5.0, 1).unwrap();
    let run = open_loop(&server, clock, 4, &schedule, 4);
    assert_eq!(run.records.len(), 1);
    assert_eq!(run.workers, 1);
    // one request: window = sched delay + 1/r
    let expected = 1.0 / (run.records[0].sched_delay_ns() as f64 / 1e9 + 0.2);
    assert!((run.fidelity.dispatched_qps - expected).abs() < 1e-9);
}

#[test]
fn failing_server_aborts_the_stage() {
    let _g = serial();
    let clock = Clock::new();
    let server = mock(MockBehavior { failure_rate: 1.0, ..MockBehavior::zero_delay(4) }, clock);
    let schedule = constant_schedule(100.0, 100).unwrap();
    let run = open_loop(&server, clock, 1, &schedule, 4);
    assert!(matches!(run.verdict, StageVerdict::Aborted(_)));
    assert!(matches!(run.check(), Err(EngineError::StageAborted(_))));
    assert!(run.records.len() < schedule.len());
    assert!(run.records.iter().all(|r| matches!(r.status, RequestStatus::Error(_))));
}

#[test]
fn non_streaming_mode_counts_usage_tokens() {
    let _g = serial();
    let clock = Clock::new();
    let server = mock(MockBehavior::default(), clock);
    let spec = WorkloadSpec::synthetic(16, 12, 3);
    let prompts = build_workload(&spec, 20).unwrap();
    let mut cfg = config(&server, 1);
    cfg.stream = false;
    let schedule = constant_schedule(100.0, 20).unwrap();
    let run = run_stage(&cfg, clock, &schedule, &prompts, 0, &cfg.template(&spec), Arc::new(AtomicBool::new(false)))
        .unwrap();
    assert!(run.records.iter().all(|r| r.is_success() && r.output_tokens == 12));
    let log = server.log().snapshot();
    assert!(log.iter().all(|e| !e.stream && e.emission_ns.len() == 1));
}

#[test]
fn unreachable_target_is_reported() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    drop(listener);
    let cfg = EngineConfig::for_target(format!("http://127.0.0.1:{port}"));
    let spec = WorkloadSpec::synthetic(4, 4, 0);
    let prompts = build_workload(&spec, 1).unwrap();
    let schedule = constant_schedule(1.0, 1).unwrap();
    let r = run_stage(&cfg, Clock::new(), &schedule, &prompts, 0, &cfg.template(&spec), Arc::default());
    assert!(matches!(r, Err(EngineError::TargetUnreachable(_))));
}

fn closed(server: &MockServer, clock: Clock, concurrency: usize, n: usize) -> StageRun {
    let spec = WorkloadSpec::synthetic(8, 10, 2);
    let prompts = build_workload(&spec, n).unwrap();
    let cfg = config(server, 2);
    run_closed_loop(&cfg, clock, concurrency, &prompts, 0, &cfg.template(&spec), Arc::default()).unwrap()
}

#[test]
fn closed_loop_follows_littles_law() {
    let _g = serial();
    let clock = Clock::new();
    // T = 10 ms prefill + 9 * 2 ms decode = 28 ms
    let behavior = MockBehavior { prefill_delay_ns: 10_000_000, per_token_delay_ns: 2_000_000, ..MockBehavior::zero_delay(10) };
    let t = 0.028;
    let server = mock(behavior, clock);
    for (c, n) in [(1usize, 40usize), (4, 160)] {
        let run = closed(&server, clock, c, n);
        assert_eq!(run.records.len(), n);
        assert!(run.fidelity.fidelity_ratio.is_none());
        let predicted = c as f64 / t;
        let qps = run.fidelity.dispatched_qps;
        assert!((qps / predicted - 1.0).abs() < 0.1, "c={c}: {qps} vs {predicted}");
    }
    let spec = WorkloadSpec::synthetic(8, 10, 2);
    let prompts = build_workload(&spec, 1).unwrap();
    let cfg = config(&server, 1);
    let r = run_closed_loop(&cfg, clock, 0, &prompts, 0, &cfg.template(&spec), Arc::default());
    assert!(matches!(r, Err(EngineError::InvalidParam(_))));
}

#[test]
fn partitioning_does_not_change_client_metrics() {
    let _g = serial();
    let clock = Clock::new();
    let server = mock(MockBehavior::zero_delay(50), clock);
    let schedule = poisson_schedule(50.0, 250, 9).unwrap();
    let one = open_loop(&server, clock, 1, &schedule, 50);
    let four = open_loop(&server, clock, 4, &schedule, 50);
    let wall = |r: &StageRun| r.wall_time_ns;
    let s1 = aggregate(&one.records, Some(50.0), wall(&one)).unwrap();
    let s4 = aggregate(&four.records, Some(50.0), wall(&four)).unwrap();
    let (t1, t4) = (s1.ttft_stats.unwrap().p50, s4.ttft_stats.unwrap().p50);
    let (n1, n4) = (s1.ntpot_stats.unwrap().p50, s4.ntpot_stats.unwrap().p50);
    eprintln!("k=1: ttft p50 {t1:.6} ntpot p50 {n1:.9}; k=4: ttft p50 {t4:.6} ntpot p50 {n4:.9}");
    // Both are pure client + loopback overhead; they must agree to well
    // under a millisecond.
    assert!((t1 - t4).abs() < 5e-4, "{t1} vs {t4}");
    assert!((n1 - n4).abs() < 5e-5, "{n1} vs {n4}");
    for f in [&one.fidelity, &four.fidelity] {
        assert!(f.fidelity_ratio.unwrap() >= 0.99, "{f:?}");
    }
    assert!(one.fidelity.valid, "{:?}", one.fidelity);
    // Scheduling-delay bounds hold only while workers do not share cores.
    if host_cores() >= 4 {
        assert!(four.fidelity.valid, "{:?}", four.fidelity);
    }
}
