//! OpenAI-compatible streaming inference simulator.
//!
//! Token `j` (0-based) of a response is emitted at
//! `receipt + prefill_delay + j * per_token_delay` (plus optional Gaussian
//! jitter per gap), with deadlines computed from the receipt instant so
//! timer overshoot never accumulates. Deadlines are served by one
//! dedicated timer thread; with every delay at zero the response path
//! never touches it.
//!
//! Streaming wire format (the compatibility contract):
//!
//! ```text
//! data: {"id":"chatcmpl-<rid>","object":"chat.completion.chunk","created":0,"model":<model>,
//!        "choices":[{"index":0,"delta":{"content":"<tok> "},"finish_reason":null}],"token_count":1}\n\n
//! ... one event per token ...
//! data: {..."choices":[{"index":0,"delta":{},"finish_reason":"length"}],
//!        "usage":{"prompt_tokens":P,"completion_tokens":N,"total_tokens":P+N}}\n\n
//! data: [DONE]\n\n
//! ```
//!
//! The usage event and the done marker travel in the same write as the last
//! token, so a response is exactly `N` body frames. `/v1/completions` uses
//! `"object":"text_completion"` and `"text"` in place of `"delta"`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::convert::Infallible;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use bytes::Bytes;
use futures::stream;
use http_body_util::combinators::UnsyncBoxBody;
use http_body_util::{BodyExt, Full, StreamBody};
use hyper::body::{Frame, Incoming};
use hyper::server::conn::http1;
use hyper::service::service_fn;
use hyper::{Method, Request, Response, StatusCode};
use hyper_util::rt::TokioIo;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{oneshot, watch, Semaphore};

use crate::clock::{tighten_timer_slack, Clock};
use crate::units::duration_ns;

/// Response length when echoing and the request carries no `max_tokens`.
pub const DEFAULT_ECHO_TOKENS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Echo {
    Echo,
}

/// Fixed output length, or `echo` to honour the request's `max_tokens`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OutputLength {
    Fixed(u32),
    Echo(Echo),
}

impl OutputLength {
    fn resolve(self, requested: Option<u32>) -> u32 {
        match self {
            OutputLength::Fixed(n) => n,
            OutputLength::Echo(_) => requested.unwrap_or(DEFAULT_ECHO_TOKENS),
        }
    }
}

impl std::str::FromStr for OutputLength {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("echo") {
            Ok(OutputLength::Echo(Echo::Echo))
        } else {
            s.parse().map(OutputLength::Fixed).map_err(|_| format!("expected a token count or `echo`, got {s:?}"))
        }
    }
}

impl std::fmt::Display for OutputLength {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OutputLength::Fixed(n) => write!(f, "{n}"),
            OutputLength::Echo(_) => f.write_str("echo"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockBehavior {
    #[serde(default, rename = "prefill_delay", with = "duration_ns")]
    pub prefill_delay_ns: u64,
    #[serde(default, rename = "per_token_delay", with = "duration_ns")]
    pub per_token_delay_ns: u64,
    /// Standard deviation of Gaussian noise added to each inter-token gap.
    #[serde(default, rename = "jitter", with = "duration_ns")]
    pub jitter_ns: u64,
    #[serde(default = "default_output")]
    pub output_tokens: OutputLength,
    /// Fraction of requests answered with HTTP 500, chosen by hashing the
    /// request id with `seed`.
    #[serde(default)]
    pub failure_rate: f64,
    #[serde(default = "default_max_connections")]
    pub max_connections: usize,
    #[serde(default)]
    pub seed: u64,
    /// Keep the per-request timestamp log in memory.
    #[serde(default = "default_true")]
    pub log: bool,
}

fn default_output() -> OutputLength {
    OutputLength::Echo(Echo::Echo)
}

fn default_max_connections() -> usize {
    4096
}

fn default_true() -> bool {
    true
}

impl Default for MockBehavior {
    fn default() -> Self {
        Self {
            prefill_delay_ns: 0,
            per_token_delay_ns: 0,
            jitter_ns: 0,
            output_tokens: default_output(),
            failure_rate: 0.0,
            max_connections: default_max_connections(),
            seed: 0,
            log: true,
        }
    }
}

impl MockBehavior {
    pub fn zero_delay(output_tokens: u32) -> Self {
        Self { output_tokens: OutputLength::Fixed(output_tokens), ..Self::default() }
    }

    pub fn is_zero_delay(&self) -> bool {
        self.prefill_delay_ns == 0 && self.per_token_delay_ns == 0 && self.jitter_ns == 0
    }

    pub fn validate(&self) -> Result<(), MockError> {
        if !(0.0..=1.0).contains(&self.failure_rate) {
            return Err(MockError::InvalidParam(format!("failure_rate must lie in [0, 1], got {}", self.failure_rate)));
        }
        if self.max_connections == 0 {
            return Err(MockError::InvalidParam("max_connections must be >= 1".into()));
        }
        if self.output_tokens == OutputLength::Fixed(0) {
            return Err(MockError::InvalidParam("output_tokens must be >= 1".into()));
        }
        Ok(())
    }

    fn fails(&self, request_id: &str) -> bool {
        if self.failure_rate <= 0.0 {
            return false;
        }
        let u = (fnv1a(self.seed, request_id) >> 11) as f64 / (1u64 << 53) as f64;
        u < self.failure_rate
    }
}

fn fnv1a(seed: u64, text: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in seed.to_le_bytes().iter().chain(text.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    // splitmix64 finaliser: FNV alone leaves the high bits poorly mixed.
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

#[derive(Debug, Error)]
pub enum MockError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("invalid mock behavior: {0}")]
    InvalidParam(String),
    #[error("mock server runtime: {0}")]
    Runtime(std::io::Error),
}

/// Server-side timestamps of one request, on the server's [`Clock`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub request_id: String,
    pub stream: bool,
    pub status: u16,
    pub receipt_ns: u64,
    /// One entry per emitted token chunk (streaming) or one for the whole
    /// response (non-streaming).
    pub emission_ns: Vec<u64>,
}

/// Append-only request log.
#[derive(Debug, Default)]
pub struct ServerLog {
    entries: Mutex<Vec<LogEntry>>,
}

impl ServerLog {
    fn push(&self, entry: LogEntry) {
        self.entries.lock().expect("log lock").push(entry);
    }

    pub fn snapshot(&self) -> Vec<LogEntry> {
        self.entries.lock().expect("log lock").clone()
    }

    pub fn take(&self) -> Vec<LogEntry> {
        std::mem::take(&mut *self.entries.lock().expect("log lock"))
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("log lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for e in self.entries.lock().expect("log lock").iter() {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }
}

/// Pushes its entry into the log when dropped, so aborted streams are
/// logged with whatever they emitted.
struct LogGuard {
    log: Option<Arc<ServerLog>>,
    entry: LogEntry,
}

impl Drop for LogGuard {
    fn drop(&mut self) {
        if let Some(log) = self.log.take() {
            log.push(std::mem::replace(
                &mut self.entry,
                LogEntry { request_id: String::new(), stream: false, status: 0, receipt_ns: 0, emission_ns: Vec::new() },
            ));
        }
    }
}

struct TimerEntry {
    deadline: Instant,
    seq: u64,
    tx: oneshot::Sender<()>,
}

impl PartialEq for TimerEntry {
    fn eq(&self, other: &Self) -> bool {
        (self.deadline, self.seq) == (other.deadline, other.seq)
    }
}

impl Eq for TimerEntry {}

impl PartialOrd for TimerEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TimerEntry {
    // Reversed: BinaryHeap pops the earliest deadline first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.deadline, other.seq).cmp(&(self.deadline, self.seq))
    }
}

#[derive(Default)]
struct TimerState {
    heap: BinaryHeap<TimerEntry>,
    seq: u64,
    shutdown: bool,
}

/// Deadline service on a dedicated OS thread with tight timer slack; the
/// tokio timer wheel only has millisecond resolution.
#[derive(Clone)]
struct Timer {
    shared: Arc<(Mutex<TimerState>, Condvar)>,
    calls: Arc<AtomicU64>,
}

impl Timer {
    fn start() -> (Self, JoinHandle<()>) {
        let shared = Arc::new((Mutex::new(TimerState::default()), Condvar::new()));
        let inner = shared.clone();
        let thread = std::thread::Builder::new()
            .name("mock-timer".into())
            .spawn(move || {
                tighten_timer_slack();
                let (lock, cv) = &*inner;
                let mut st = lock.lock().expect("timer lock");
                loop {
                    if st.shutdown {
                        break;
                    }
                    let now = Instant::now();
                    while st.heap.peek().map_or(false, |e| e.deadline <= now) {
                        let e = st.heap.pop().expect("peeked");
                        let _ = e.tx.send(());
                    }
                    let next = st.heap.peek().map(|e| e.deadline - now);
                    st = match next {
                        None => cv.wait(st).expect("timer lock"),
                        Some(wait) => cv.wait_timeout(st, wait).expect("timer lock").0,
                    };
                }
            })
            .expect("spawn timer thread");
        (Self { shared, calls: Arc::default() }, thread)
    }

    async fn sleep_until(&self, deadline: Instant) {
        self.calls.fetch_add(1, AtomicOrdering::Relaxed);
        if deadline <= Instant::now() {
            return;
        }
        let (tx, rx) = oneshot::channel();
        {
            let (lock, cv) = &*self.shared;
            let mut st = lock.lock().expect("timer lock");
            st.seq += 1;
            let seq = st.seq;
            let earliest = st.heap.peek().map_or(true, |e| deadline < e.deadline);
            st.heap.push(TimerEntry { deadline, seq, tx });
            if earliest {
                cv.notify_one();
            }
        }
        let _ = rx.await;
    }

    fn shutdown(&self) {
        let (lock, cv) = &*self.shared;
        lock.lock().expect("timer lock").shutdown = true;
        cv.notify_one();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Api {
    Chat,
    Completions,
}

#[derive(Deserialize)]
struct IncomingRequest {
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    stream: bool,
    #[serde(default)]
    max_tokens: Option<u32>,
    #[serde(default)]
    max_completion_tokens: Option<u32>,
    #[serde(default)]
    messages: Vec<IncomingMessage>,
    #[serde(default)]
    prompt: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct IncomingMessage {
    #[serde(default)]
    content: serde_json::Value,
}

fn count_words(v: &serde_json::Value) -> u32 {
    match v {
        serde_json::Value::String(s) => s.split_whitespace().count() as u32,
        serde_json::Value::Array(items) if items.iter().all(|i| i.is_number()) => items.len() as u32,
        serde_json::Value::Array(items) => items.iter().map(count_words).sum(),
        serde_json::Value::Object(o) => o.get("text").map_or(0, count_words),
        _ => 0,
    }
}

impl IncomingRequest {
    fn prompt_tokens(&self) -> u32 {
        let from_messages: u32 = self.messages.iter().map(|m| count_words(&m.content)).sum();
        from_messages + self.prompt.as_ref().map_or(0, count_words)
    }
}

type Body = UnsyncBoxBody<Bytes, Infallible>;

fn full(status: StatusCode, body: String) -> Response<Body> {
    Response::builder()
        .status(status)
        .header("content-type", "application/json")
        .body(Full::new(Bytes::from(body)).boxed_unsync())
        .expect("static response parts")
}

fn error_body(message: &str, kind: &str) -> String {
    serde_json::json!({ "error": { "message": message, "type": kind } }).to_string()
}

struct Shared {
    behavior: MockBehavior,
    clock: Clock,
    timer: Timer,
    log: Arc<ServerLog>,
    next_id: AtomicU64,
}

/// Per-response framing, precomputed once per request.
struct Framer {
    head: String,
    tail: &'static str,
    final_event: String,
}

impl Framer {
    fn new(api: Api, rid: &str, model: &str, prompt_tokens: u32, n: u32) -> Self {
        let model = serde_json::to_string(model).expect("string serialises");
        let usage = format!(
            r#""usage":{{"prompt_tokens":{prompt_tokens},"completion_tokens":{n},"total_tokens":{}}}"#,
            prompt_tokens + n
        );
        match api {
            Api::Chat => Self {
                head: format!(
                    r#"data: {{"id":"chatcmpl-{rid}","object":"chat.completion.chunk","created":0,"model":{model},"choices":[{{"index":0,"delta":{{"content":""#
                ),
                tail: "\"},\"finish_reason\":null}],\"token_count\":1}\n\n",
                final_event: format!(
                    r#"data: {{"id":"chatcmpl-{rid}","object":"chat.completion.chunk","created":0,"model":{model},"choices":[{{"index":0,"delta":{{}},"finish_reason":"length"}}],{usage}}}"#
                ) + "\n\ndata: [DONE]\n\n",
            },
            Api::Completions => Self {
                head: format!(
                    r#"data: {{"id":"cmpl-{rid}","object":"text_completion","created":0,"model":{model},"choices":[{{"index":0,"text":""#
                ),
                tail: "\",\"finish_reason\":null}],\"token_count\":1}\n\n",
                final_event: format!(
                    r#"data: {{"id":"cmpl-{rid}","object":"text_completion","created":0,"model":{model},"choices":[{{"index":0,"text":"","finish_reason":"length"}}],{usage}}}"#
                ) + "\n\ndata: [DONE]\n\n",
            },
        }
    }

    fn token(&self, j: u32, last: bool) -> Bytes {
        let mut s = String::with_capacity(self.head.len() + self.tail.len() + 16);
        s.push_str(&self.head);
        s.push_str(&token_text(j));
        s.push_str(self.tail);
        if last {
            s.push_str(&self.final_event);
        }
        Bytes::from(s)
    }
}

fn token_text(j: u32) -> String {
    format!("t{:x} ", j % tokenprof_core::workload::DEFAULT_VOCAB)
}

/// Absolute emission deadlines for `n` tokens after `receipt`.
fn deadlines(b: &MockBehavior, rid: &str, receipt: Instant, n: u32) -> Vec<Instant> {
    let prefill = Duration::from_nanos(b.prefill_delay_ns);
    let step = b.per_token_delay_ns as f64;
    if b.jitter_ns == 0 {
        return (0..n as u64).map(|j| receipt + prefill + Duration::from_nanos(j * b.per_token_delay_ns)).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(b.seed ^ 0x6a69_7474_6572, rid));
    let noise = Normal::new(0.0, b.jitter_ns as f64).expect("finite jitter");
    let mut t = prefill.as_nanos() as f64;
    (0..n)
        .map(|j| {
            if j > 0 {
                t += (step + noise.sample(&mut rng)).max(0.0);
            }
            receipt + Duration::from_nanos(t as u64)
        })
        .collect()
}

async fn handle(shared: Arc<Shared>, req: Request<Incoming>) -> Result<Response<Body>, Infallible> {
    let receipt = Instant::now();
    let receipt_ns = shared.clock.ns_of(receipt);
    let api = match (req.method(), req.uri().path()) {
        (&Method::POST, "/v1/chat/completions") => Api::Chat,
        (&Method::POST, "/v1/completions") => Api::Completions,
        (&Method::GET, "/health") => return Ok(full(StatusCode::OK, "{}".into())),
        _ => return Ok(full(StatusCode::NOT_FOUND, error_body("no such endpoint", "not_found"))),
    };
    let rid = match req.headers().get("x-request-id").and_then(|v| v.to_str().ok()) {
        Some(id) => id.to_string(),
        None => format!("m{}", shared.next_id.fetch_add(1, AtomicOrdering::Relaxed)),
    };
    let body = match req.into_body().collect().await {
        Ok(b) => b.to_bytes(),
        Err(e) => return Ok(full(StatusCode::BAD_REQUEST, error_body(&e.to_string(), "invalid_request"))),
    };
    let parsed: IncomingRequest = match serde_json::from_slice(&body) {
        Ok(p) => p,
        Err(e) => return Ok(full(StatusCode::BAD_REQUEST, error_body(&e.to_string(), "invalid_request"))),
    };

    let b = &shared.behavior;
    let mut guard = LogGuard {
        log: b.log.then(|| shared.log.clone()),
        entry: LogEntry { request_id: rid.clone(), stream: parsed.stream, status: 200, receipt_ns, emission_ns: Vec::new() },
    };
    if b.fails(&rid) {
        guard.entry.status = 500;
        return Ok(full(StatusCode::INTERNAL_SERVER_ERROR, error_body("injected failure", "server_error")));
    }

    let n = b.output_tokens.resolve(parsed.max_tokens.or(parsed.max_completion_tokens)).max(1);
    let model = parsed.model.clone().unwrap_or_else(|| "mock".into());
    let prompt_tokens = parsed.prompt_tokens();
    let at = if b.is_zero_delay() { Vec::new() } else { deadlines(b, &rid, receipt, n) };

    if !parsed.stream {
        if let Some(last) = at.last() {
            shared.timer.sleep_until(*last).await;
        }
        let text: String = (0..n).map(token_text).collect();
        let usage = serde_json::json!({
            "prompt_tokens": prompt_tokens, "completion_tokens": n, "total_tokens": prompt_tokens + n
        });
        let body = match api {
            Api::Chat => serde_json::json!({
                "id": format!("chatcmpl-{rid}"), "object": "chat.completion", "created": 0, "model": model,
                "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "length"}],
                "usage": usage,
            }),
            Api::Completions => serde_json::json!({
                "id": format!("cmpl-{rid}"), "object": "text_completion", "created": 0, "model": model,
                "choices": [{"index": 0, "text": text, "finish_reason": "length"}],
                "usage": usage,
            }),
        };
        guard.entry.emission_ns.push(shared.clock.now_ns());
        return Ok(full(StatusCode::OK, body.to_string()));
    }

    let framer = Framer::new(api, &rid, &model, prompt_tokens, n);
    let state = (0u32, guard, framer, at, shared.clone());
    let frames = stream::unfold(state, move |(j, mut guard, framer, at, shared)| async move {
        if j >= n {
            return None;
        }
        if let Some(deadline) = at.get(j as usize) {
            shared.timer.sleep_until(*deadline).await;
        }
        let frame = framer.token(j, j + 1 == n);
        guard.entry.emission_ns.push(shared.clock.now_ns());
        Some((Ok::<_, Infallible>(Frame::data(frame)), (j + 1, guard, framer, at, shared)))
    });
    let response = Response::builder()
        .status(StatusCode::OK)
        .header("content-type", "text/event-stream")
        .header("cache-control", "no-cache")
        .body(BodyExt::boxed_unsync(StreamBody::new(frames)))
        .expect("static response parts");
    Ok(response)
}

/// A running mock server. Dropping it shuts the server down.
pub struct MockServer {
    addr: SocketAddr,
    log: Arc<ServerLog>,
    behavior: MockBehavior,
    timer: Timer,
    shutdown: Option<watch::Sender<bool>>,
    threads: Vec<JoinHandle<()>>,
}

impl MockServer {
    /// Binds `bind` (use port 0 for an ephemeral port) and serves on a
    /// dedicated multi-threaded runtime with `threads` workers (host cores
    /// when `None`).
    pub fn start(behavior: MockBehavior, bind: &str, clock: Clock, threads: Option<usize>) -> Result<Self, MockError> {
        behavior.validate()?;
        let listener =
            std::net::TcpListener::bind(bind).map_err(|source| MockError::Bind { addr: bind.to_string(), source })?;
        listener.set_nonblocking(true).map_err(MockError::Runtime)?;
        let addr = listener.local_addr().map_err(MockError::Runtime)?;
        let threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1);
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(threads)
            .thread_name("mock-io")
            .enable_all()
            .build()
            .map_err(MockError::Runtime)?;

        let (timer, timer_thread) = Timer::start();
        let log = Arc::new(ServerLog::default());
        let shared = Arc::new(Shared {
            behavior: behavior.clone(),
            clock,
            timer: timer.clone(),
            log: log.clone(),
            next_id: Default::default(),
        });
        let (tx, mut rx) = watch::channel(false);
        let max_connections = behavior.max_connections;
        let server_thread = std::thread::Builder::new()
            .name("mock-accept".into())
            .spawn(move || {
                runtime.block_on(async move {
                    let listener = match tokio::net::TcpListener::from_std(listener) {
                        Ok(l) => l,
                        Err(e) => {
                            tracing::error!("mock listener: {e}");
                            return;
                        }
                    };
                    let slots = Arc::new(Semaphore::new(max_connections));
                    loop {
                        let permit = tokio::select! {
                            p = slots.clone().acquire_owned() => p.expect("semaphore open"),
                            _ = rx.changed() => break,
                        };
                        let (conn, _) = tokio::select! {
                            r = listener.accept() => match r {
                                Ok(c) => c,
                                Err(e) => {
                                    tracing::warn!("mock accept: {e}");
                                    continue;
                                }
                            },
                            _ = rx.changed() => break,
                        };
                        let _ = conn.set_nodelay(true);
                        let shared = shared.clone();
                        tokio::spawn(async move {
                            let _permit = permit;
                            let svc = service_fn(move |req| handle(shared.clone(), req));
                            let _ = http1::Builder::new().keep_alive(true).serve_connection(TokioIo::new(conn), svc).await;
                        });
                    }
                });
                runtime.shutdown_timeout(Duration::from_millis(500));
            })
            .map_err(MockError::Runtime)?;
        Ok(Self { addr, log, behavior, timer, shutdown: Some(tx), threads: vec![server_thread, timer_thread] })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn behavior(&self) -> &MockBehavior {
        &self.behavior
    }

    /// Times the response path has waited on the delay timer.
    pub fn timer_calls(&self) -> u64 {
        self.timer.calls.load(AtomicOrdering::Relaxed)
    }

    /// Server-side per-request timestamps.
    pub fn log(&self) -> Arc<ServerLog> {
        self.log.clone()
    }

    /// Stops accepting, gives open connections a short grace period, and
    /// joins the server threads.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(true);
        }
        self.timer.shutdown();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop();
    }
}
