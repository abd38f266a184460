//! One isolated worker: an OS thread driving its own single-threaded tokio
//! runtime and HTTP client, plus a dispatch thread that sleeps to each
//! intended send instant and hands the request to the runtime.
//!
//! `actual_send` is stamped after the concurrency permit is acquired, right
//! before the request is handed to the connection. Token arrivals are
//! stamped when a body frame is yielded by the transport, before it is
//! parsed.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use bytes::Bytes;
use http_body_util::{BodyExt, Full};
use hyper::header::{HeaderName, HeaderValue, CONTENT_TYPE};
use hyper::{Request, Uri};
use hyper_util::client::legacy::connect::HttpConnector;
use hyper_util::client::legacy::Client;
use hyper_util::rt::TokioExecutor;
use tokenprof_core::metrics::{RequestRecord, RequestStatus};
use tokio::sync::Semaphore;

use super::sse::{parse_full_response, SseEvent, SseParser};
use crate::clock::{sleep_until, tighten_timer_slack, Clock};

pub(crate) type HttpClient = Client<HttpConnector, Full<Bytes>>;

/// Longest uninterrupted sleep of a dispatch thread, so cancellation is
/// noticed promptly at low rates.
const CANCEL_POLL: Duration = Duration::from_millis(50);

/// Request with everything precomputed; `intended_ns` is absolute on the
/// run clock, or 0 in closed loop.
#[derive(Debug, Clone)]
pub(crate) struct Job {
    pub request_id: u64,
    pub intended_ns: u64,
    pub body: Bytes,
    pub input_tokens: u32,
    pub requested_output_tokens: u32,
    pub warmup: bool,
}

/// State shared read-only by all workers of one stage, plus the stop flags.
pub(crate) struct StageCtx {
    pub clock: Clock,
    pub uri: Uri,
    pub headers: Vec<(HeaderName, HeaderValue)>,
    pub stream: bool,
    pub timeout: Duration,
    pub cancel: Arc<AtomicBool>,
    pub abort: AtomicBool,
    pub abort_reason: Mutex<Option<String>>,
    pub error_abort_rate: f64,
}

impl StageCtx {
    pub fn stopped(&self) -> bool {
        self.cancel.load(Ordering::Relaxed) || self.abort.load(Ordering::Relaxed)
    }
}

fn client(max_idle: usize) -> HttpClient {
    let mut connector = HttpConnector::new();
    connector.set_nodelay(true);
    Client::builder(TokioExecutor::new()).pool_max_idle_per_host(max_idle).build(connector)
}

fn runtime() -> std::io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_current_thread().enable_all().build()
}

struct Outcome {
    arrivals: Vec<u64>,
    completion_ns: u64,
    server_output_tokens: Option<u32>,
    processing_ns: u64,
}

async fn exchange(ctx: &StageCtx, client: &HttpClient, job: &Job) -> Result<Outcome, String> {
    let mut builder = Request::post(ctx.uri.clone())
        .header(CONTENT_TYPE, "application/json")
        .header("x-request-id", job.request_id.to_string());
    for (k, v) in &ctx.headers {
        builder = builder.header(k, v);
    }
    let req = builder.body(Full::new(job.body.clone())).map_err(|e| e.to_string())?;
    let resp = client.request(req).await.map_err(|e| format!("request failed: {e}"))?;
    let status = resp.status();
    let mut body = resp.into_body();
    if !status.is_success() {
        let detail = body.collect().await.map(|b| b.to_bytes()).unwrap_or_default();
        return Err(format!("http {}: {}", status.as_u16(), String::from_utf8_lossy(&detail).trim()));
    }

    let clock = ctx.clock;
    if !ctx.stream {
        let bytes = body.collect().await.map_err(|e| format!("body: {e}"))?.to_bytes();
        let ts = clock.now_ns();
        let (n, server) = parse_full_response(&bytes)?;
        return Ok(Outcome {
            arrivals: vec![ts; n as usize],
            completion_ns: ts,
            server_output_tokens: server,
            processing_ns: clock.now_ns() - ts,
        });
    }

    let mut parser = SseParser::new();
    let mut events = Vec::with_capacity(4);
    let mut out = Outcome { arrivals: Vec::new(), completion_ns: 0, server_output_tokens: None, processing_ns: 0 };
    while let Some(frame) = body.frame().await {
        let ts = clock.now_ns();
        let frame = frame.map_err(|e| format!("stream: {e}"))?;
        let Ok(data) = frame.into_data() else { continue };
        events.clear();
        parser.push(&data, &mut events);
        for ev in events.drain(..) {
            match ev {
                SseEvent::Tokens(n) => out.arrivals.extend(std::iter::repeat(ts).take(n as usize)),
                SseEvent::Usage { completion_tokens, .. } => out.server_output_tokens = Some(completion_tokens),
                SseEvent::Error(m) => return Err(m),
                SseEvent::Done => {}
            }
        }
        out.completion_ns = ts;
        out.processing_ns += clock.now_ns() - ts;
        if parser.is_done() {
            break;
        }
    }
    if !parser.is_done() {
        return Err("stream closed before [DONE]".into());
    }
    Ok(out)
}

/// Sends one request and returns its record. `intended_ns == 0` means
/// "now" (closed loop).
pub(crate) async fn execute(
    ctx: &StageCtx,
    client: &HttpClient,
    slots: Option<&Semaphore>,
    job: &Job,
    worker: u32,
) -> RequestRecord {
    let _permit = match slots {
        Some(s) => Some(s.acquire().await.expect("semaphore open")),
        None => None,
    };
    let send_ns = ctx.clock.now_ns();
    let intended = if job.intended_ns == 0 { send_ns } else { job.intended_ns };
    let result = tokio::time::timeout(ctx.timeout, exchange(ctx, client, job)).await;
    let mut record = RequestRecord {
        request_id: job.request_id,
        intended_dispatch_ns: intended,
        actual_send_ns: send_ns,
        token_arrivals_ns: Vec::new(),
        completion_ns: 0,
        input_tokens: job.input_tokens,
        output_tokens: 0,
        requested_output_tokens: job.requested_output_tokens,
        server_output_tokens: None,
        status: RequestStatus::Success,
        warmup: job.warmup,
        worker,
        client_processing_ns: 0,
    };
    match result {
        Ok(Ok(o)) => {
            record.output_tokens = o.arrivals.len() as u32;
            record.token_arrivals_ns = o.arrivals;
            record.completion_ns = o.completion_ns.max(send_ns);
            record.server_output_tokens = o.server_output_tokens;
            record.client_processing_ns = o.processing_ns;
        }
        Ok(Err(e)) => {
            record.status = RequestStatus::Error(e);
            record.completion_ns = ctx.clock.now_ns();
        }
        Err(_) => {
            record.status = RequestStatus::Timeout;
            record.completion_ns = ctx.clock.now_ns();
        }
    }
    record
}

/// Error bookkeeping for the per-worker abort rule.
struct ErrorBudget {
    errors: AtomicUsize,
    limit: f64,
}

impl ErrorBudget {
    fn new(assigned: usize, rate: f64) -> Self {
        Self { errors: AtomicUsize::new(0), limit: assigned as f64 * rate }
    }

    fn note(&self, ctx: &StageCtx, r: &RequestRecord, worker: u32) {
        if r.is_success() {
            return;
        }
        let errors = self.errors.fetch_add(1, Ordering::Relaxed) + 1;
        if errors as f64 > self.limit && !ctx.abort.swap(true, Ordering::Relaxed) {
            let reason = format!("worker {worker}: {errors} failed requests exceed the error budget; last: {:?}", r.status);
            *ctx.abort_reason.lock().expect("abort lock") = Some(reason);
        }
    }
}

/// Runs an open-loop partition: `jobs` sorted by intended time.
pub(crate) fn run_open_loop(
    ctx: Arc<StageCtx>,
    worker: u32,
    jobs: Vec<Job>,
    max_concurrency: usize,
) -> std::io::Result<Vec<RequestRecord>> {
    let rt = runtime()?;
    let handle = rt.handle().clone();
    let client = Arc::new(client(max_concurrency));
    let slots = Arc::new(Semaphore::new(max_concurrency));
    let budget = Arc::new(ErrorBudget::new(jobs.len(), ctx.error_abort_rate));
    let (tx, mut rx) = tokio::sync::mpsc::unbounded_channel();

    let dctx = ctx.clone();
    let dispatcher = std::thread::Builder::new().name(format!("dispatch-{worker}")).spawn(move || {
        tighten_timer_slack();
        for job in jobs {
            let deadline = dctx.clock.instant_at(job.intended_ns);
            loop {
                if dctx.stopped() {
                    return;
                }
                let now = std::time::Instant::now();
                if deadline <= now {
                    break;
                }
                sleep_until(deadline.min(now + CANCEL_POLL));
            }
            let (ctx, client, slots, budget) = (dctx.clone(), client.clone(), slots.clone(), budget.clone());
            let task = handle.spawn(async move {
                let r = execute(&ctx, &client, Some(&slots), &job, worker).await;
                budget.note(&ctx, &r, worker);
                r
            });
            if tx.send(task).is_err() {
                return;
            }
        }
    })?;

    let records = rt.block_on(async move {
        let mut tasks = Vec::new();
        while let Some(t) = rx.recv().await {
            tasks.push(t);
        }
        let mut records = Vec::with_capacity(tasks.len());
        for t in tasks {
            if let Ok(r) = t.await {
                records.push(r);
            }
        }
        records
    });
    dispatcher.join().expect("dispatch thread panicked");
    Ok(records)
}

/// Runs `slots` closed-loop lanes that pull job indices from `next`; each
/// lane sends its next request as soon as the previous one completes.
pub(crate) fn run_closed_loop(
    ctx: Arc<StageCtx>,
    worker: u32,
    jobs: Arc<Vec<Job>>,
    next: Arc<AtomicUsize>,
    slots: usize,
    assigned: usize,
) -> std::io::Result<Vec<RequestRecord>> {
    let rt = runtime()?;
    let client = Arc::new(client(slots));
    let budget = Arc::new(ErrorBudget::new(assigned, ctx.error_abort_rate));
    let records = rt.block_on(async move {
        let lanes: Vec<_> = (0..slots)
            .map(|_| {
                let (ctx, client, jobs, next, budget) =
                    (ctx.clone(), client.clone(), jobs.clone(), next.clone(), budget.clone());
                tokio::spawn(async move {
                    let mut out = Vec::new();
                    loop {
                        if ctx.stopped() {
                            break;
                        }
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(job) = jobs.get(i) else { break };
                        let r = execute(&ctx, &client, None, job, worker).await;
                        budget.note(&ctx, &r, worker);
                        out.push(r);
                    }
                    out
                })
            })
            .collect();
        let mut records = Vec::new();
        for lane in lanes {
            if let Ok(mut r) = lane.await {
                records.append(&mut r);
            }
        }
        records
    });
    Ok(records)
}
