//! Per-request token latency metrics and stage-level aggregation.
//!
//! End-to-end latency is measured from `actual_send`, never from the
//! intended dispatch instant, so client scheduling delay is reported on its
//! own (see [`StageSummary::sched_delay_stats`]) and does not leak into the
//! server-facing metrics.
//!
//! TPOT uses the decode-only estimator `(last - first) / (N - 1)`: the gap
//! count is the denominator and TTFT is excluded. Streaming chunks that
//! declare several tokens contribute that many entries to
//! `token_arrivals_ns`, all stamped with the chunk's arrival time, so ITL
//! contains zero gaps for multi-token chunks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fidelity::FidelityReport;
use crate::stats::{DelayPercentiles, LatencyStats};
use crate::NANOS_PER_SEC;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    MetricUndefined(&'static str),
    #[error("no records to aggregate")]
    EmptyInput,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Outcome of a single request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestStatus {
    Success,
    Error(String),
    Timeout,
}

/// Full timestamp trace of one request. All timestamps are monotonic
/// nanoseconds relative to the run epoch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub request_id: u64,
    pub intended_dispatch_ns: u64,
    pub actual_send_ns: u64,
    pub token_arrivals_ns: Vec<u64>,
    pub completion_ns: u64,
    pub input_tokens: u32,
    pub output_tokens: u32,
    /// The max-token value sent with the request.
    #[serde(default)]
    pub requested_output_tokens: u32,
    /// Completion token count reported by the server's usage block, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_output_tokens: Option<u32>,
    pub status: RequestStatus,
    /// Dispatched inside the stage warm-up window; excluded from latency stats.
    #[serde(default)]
    pub warmup: bool,
    #[serde(default)]
    pub worker: u32,
    /// Time the client spent parsing response chunks after receipt.
    #[serde(default)]
    pub client_processing_ns: u64,
}

impl RequestRecord {
    pub fn is_success(&self) -> bool {
        self.status == RequestStatus::Success
    }

    pub fn sched_delay_ns(&self) -> u64 {
        self.actual_send_ns.saturating_sub(self.intended_dispatch_ns)
    }

    pub fn e2e_ns(&self) -> u64 {
        self.completion_ns.saturating_sub(self.actual_send_ns)
    }

    /// Checks the ordering and count invariants of a successful record.
    pub fn validate(&self) -> Result<(), MetricError> {
        if self.input_tokens == 0 {
            return Err(MetricError::InvalidInput(format!(
                "request {} has zero input tokens",
                self.request_id
            )));
        }
        if self.actual_send_ns < self.intended_dispatch_ns {
            return Err(MetricError::InvalidInput(format!(
                "request {} sent before its intended dispatch",
                self.request_id
            )));
        }
        if !self.is_success() {
            return Ok(());
        }
        if self.output_tokens as usize != self.token_arrivals_ns.len() {
            return Err(MetricError::InvalidInput(format!(
                "request {}: output_tokens={} but {} arrivals",
                self.request_id,
                self.output_tokens,
                self.token_arrivals_ns.len()
            )));
        }
        let mut prev = self.actual_send_ns;
        for &t in self.token_arrivals_ns.iter().chain(std::iter::once(&self.completion_ns)) {
            if t < prev {
                return Err(MetricError::InvalidInput(format!(
                    "request {}: timestamps not monotone",
                    self.request_id
                )));
            }
            prev = t;
        }
        Ok(())
    }

    /// Builds the record a server following `d` exactly would produce:
    /// queueing and prefill before the first decode step, then uniform
    /// decode gaps, with the stream closing on the last token.
    pub fn from_decomposition(request_id: u64, send_ns: u64, d: &NtpotDecomposition) -> Self {
        let lead = d.t_queue + d.input_len as f64 * d.t_prefill;
        let arrivals: Vec<u64> = (1..=d.output_len)
            .map(|j| send_ns + ((lead + j as f64 * d.t_decode) * NANOS_PER_SEC).round() as u64)
            .collect();
        let completion_ns = *arrivals.last().unwrap_or(&send_ns);
        Self {
            request_id,
            intended_dispatch_ns: send_ns,
            actual_send_ns: send_ns,
            token_arrivals_ns: arrivals,
            completion_ns,
            input_tokens: d.input_len,
            output_tokens: d.output_len,
            requested_output_tokens: d.output_len,
            server_output_tokens: None,
            status: RequestStatus::Success,
            warmup: false,
            worker: 0,
            client_processing_ns: 0,
        }
    }
}

fn require_success(r: &RequestRecord) -> Result<(), MetricError> {
    if r.is_success() {
        Ok(())
    } else {
        Err(MetricError::MetricUndefined("request did not succeed"))
    }
}

/// Time to first token, in nanoseconds.
pub fn ttft(r: &RequestRecord) -> Result<u64, MetricError> {
    require_success(r)?;
    let first = r
        .token_arrivals_ns
        .first()
        .ok_or(MetricError::MetricUndefined("TTFT needs at least one token"))?;
    Ok(first.saturating_sub(r.actual_send_ns))
}

/// Decode-phase time per output token, in nanoseconds.
pub fn tpot(r: &RequestRecord) -> Result<f64, MetricError> {
    require_success(r)?;
    let t = &r.token_arrivals_ns;
    if t.len() < 2 {
        return Err(MetricError::MetricUndefined("TPOT needs at least two tokens"));
    }
    Ok((t[t.len() - 1] - t[0]) as f64 / (t.len() - 1) as f64)
}

/// Consecutive inter-token gaps, in nanoseconds.
pub fn itl(r: &RequestRecord) -> Result<Vec<u64>, MetricError> {
    require_success(r)?;
    if r.token_arrivals_ns.len() < 2 {
        return Err(MetricError::MetricUndefined("ITL needs at least two tokens"));
    }
    Ok(r.token_arrivals_ns.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Normalized time per output token: end-to-end latency over output tokens,
/// in nanoseconds per token.
pub fn ntpot(r: &RequestRecord) -> Result<f64, MetricError> {
    require_success(r)?;
    if r.output_tokens == 0 {
        return Err(MetricError::MetricUndefined("NTPOT needs at least one output token"));
    }
    Ok(r.e2e_ns() as f64 / r.output_tokens as f64)
}

/// Serving-phase breakdown of one request. Durations in seconds; prefill and
/// decode are per token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NtpotDecomposition {
    pub t_queue: f64,
    pub input_len: u32,
    pub t_prefill: f64,
    pub output_len: u32,
    pub t_decode: f64,
}

impl NtpotDecomposition {
    pub fn validate(&self) -> Result<(), MetricError> {
        let durations = [self.t_queue, self.t_prefill, self.t_decode];
        if durations.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(MetricError::InvalidInput("durations must be finite and >= 0".into()));
        }
        if self.input_len == 0 || self.output_len == 0 {
            return Err(MetricError::InvalidInput("input_len and output_len must be >= 1".into()));
        }
        Ok(())
    }
}

/// `(T_queue + I * T_prefill + N * T_decode) / N`, in seconds per token.
pub fn ntpot_decomposed(d: &NtpotDecomposition) -> Result<f64, MetricError> {
    d.validate()?;
    let n = d.output_len as f64;
    // Td kept outside the division so the decode-only case is bit-exact.
    Ok((d.t_queue + d.input_len as f64 * d.t_prefill) / n + d.t_decode)
}

/// Aggregated statistics for one load stage. Latency blocks are in seconds
/// and are `None` when no successful, non-warm-up request defines them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    /// Nominal rate requested for the stage; `None` for closed-loop runs.
    pub offered_qps: Option<f64>,
    /// Dispatch rate the client actually achieved (see [`FidelityReport`]).
    pub achieved_qps: f64,
    /// Successful completions per second over the steady-state dispatch
    /// window; what the server actually absorbed.
    pub completed_qps: f64,
    pub request_count: usize,
    pub success_count: usize,
    pub error_count: usize,
    pub timeout_count: usize,
    pub warmup_count: usize,
    pub ttft_stats: Option<LatencyStats>,
    pub tpot_stats: Option<LatencyStats>,
    pub itl_stats: Option<LatencyStats>,
    pub ntpot_stats: Option<LatencyStats>,
    pub e2e_stats: Option<LatencyStats>,
    pub total_input_tokens: u64,
    pub total_output_tokens: u64,
    pub total_requested_output_tokens: u64,
    /// (input + output tokens of successes) / wall time.
    pub token_throughput: f64,
    pub output_token_throughput: f64,
    pub sched_delay_stats: Option<DelayPercentiles>,
    pub wall_time_s: f64,
}

/// Aggregates one stage. Errors and timeouts are counted but excluded from
/// latency statistics, as are warm-up requests. Token totals and throughput
/// cover every successful request in the stage.
pub fn aggregate(
    records: &[RequestRecord],
    offered_qps: Option<f64>,
    wall_time_ns: u64,
) -> Result<StageSummary, MetricError> {
    if records.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if wall_time_ns == 0 {
        return Err(MetricError::InvalidInput("wall time must be positive".into()));
    }
    let mut sorted: Vec<&RequestRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.request_id);

    let mut ttfts = Vec::new();
    let mut tpots = Vec::new();
    let mut itls = Vec::new();
    let mut ntpots = Vec::new();
    let mut e2es = Vec::new();
    let mut delays = Vec::new();
    let (mut successes, mut errors, mut timeouts, mut warmups) = (0, 0, 0, 0);
    let (mut input_tokens, mut output_tokens, mut requested) = (0u64, 0u64, 0u64);

    for r in &sorted {
        requested += r.requested_output_tokens as u64;
        match r.status {
            RequestStatus::Success => successes += 1,
            RequestStatus::Error(_) => errors += 1,
            RequestStatus::Timeout => timeouts += 1,
        }
        if r.warmup {
            warmups += 1;
        } else {
            delays.push(r.sched_delay_ns());
        }
        if !r.is_success() {
            continue;
        }
        input_tokens += r.input_tokens as u64;
        output_tokens += r.output_tokens as u64;
        if r.warmup {
            continue;
        }
        e2es.push(r.e2e_ns() as f64 / NANOS_PER_SEC);
        if let Ok(v) = ttft(r) {
            ttfts.push(v as f64 / NANOS_PER_SEC);
        }
        if let Ok(v) = tpot(r) {
            tpots.push(v / NANOS_PER_SEC);
        }
        if let Ok(gaps) = itl(r) {
            itls.extend(gaps.into_iter().map(|g| g as f64 / NANOS_PER_SEC));
        }
        if let Ok(v) = ntpot(r) {
            ntpots.push(v / NANOS_PER_SEC);
        }
    }

    let wall_s = wall_time_ns as f64 / NANOS_PER_SEC;
    let achieved_qps = FidelityReport::dispatch_rate(records, offered_qps, wall_time_ns);
    let lag_ns = median_ns(&e2es);
    let completed_qps = completion_rate(&sorted, offered_qps, successes, wall_s, lag_ns);
    Ok(StageSummary {
        offered_qps,
        achieved_qps,
        completed_qps,
        request_count: records.len(),
        success_count: successes,
        error_count: errors,
        timeout_count: timeouts,
        warmup_count: warmups,
        ttft_stats: LatencyStats::from_secs(ttfts),
        tpot_stats: LatencyStats::from_secs(tpots),
        itl_stats: LatencyStats::from_secs(itls),
        ntpot_stats: LatencyStats::from_secs(ntpots),
        e2e_stats: LatencyStats::from_secs(e2es),
        total_input_tokens: input_tokens,
        total_output_tokens: output_tokens,
        total_requested_output_tokens: requested,
        token_throughput: (input_tokens + output_tokens) as f64 / wall_s,
        output_token_throughput: output_tokens as f64 / wall_s,
        sched_delay_stats: DelayPercentiles::from_nanos(&delays),
        wall_time_s: wall_s,
    })
}

/// Completions landing inside `[first steady-state dispatch, last dispatch]`
/// shifted later by `lag_ns` (the median steady-state end-to-end latency),
/// divided by the window length. A server keeping up completes requests at
/// the offered rate inside the window whatever its latency; a saturated one
/// at its capacity. Falls back to successes over wall time when the window
/// is empty or the stage is closed loop.
fn completion_rate(
    records: &[&RequestRecord],
    offered_qps: Option<f64>,
    successes: usize,
    wall_s: f64,
    lag_ns: u64,
) -> f64 {
    let fallback = successes as f64 / wall_s;
    if offered_qps.is_none() {
        return fallback;
    }
    let start = records.iter().filter(|r| !r.warmup).map(|r| r.intended_dispatch_ns).min();
    let end = records.iter().map(|r| r.intended_dispatch_ns).max();
    match (start, end) {
        (Some(t0), Some(t1)) if t1 > t0 => {
            let window = (t0 + lag_ns)..=(t1 + lag_ns);
            let done = records
                .iter()
                .filter(|r| r.is_success() && window.contains(&r.completion_ns))
                .count();
            done as f64 / ((t1 - t0) as f64 / NANOS_PER_SEC)
        }
        _ => fallback,
    }
}

fn median_ns(seconds: &[f64]) -> u64 {
    if seconds.is_empty() {
        return 0;
    }
    let mut v = seconds.to_vec();
    v.sort_by(f64::total_cmp);
    (v[v.len() / 2] * NANOS_PER_SEC).round() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MS: u64 = 1_000_000;

    fn record(send: u64, arrivals: Vec<u64>, completion: u64) -> RequestRecord {
        RequestRecord {
            request_id: 0,
            intended_dispatch_ns: send,
            actual_send_ns: send,
            output_tokens: arrivals.len() as u32,
            requested_output_tokens: arrivals.len() as u32,
            token_arrivals_ns: arrivals,
            completion_ns: completion,
            input_tokens: 1,
            server_output_tokens: None,
            status: RequestStatus::Success,
            warmup: false,
            worker: 0,
            client_processing_ns: 0,
        }
    }

    #[test]
    fn ttft_examples() {
        assert_eq!(ttft(&record(0, vec![50 * MS], 50 * MS)).unwrap(), 50 * MS);
        assert_eq!(ttft(&record(7, vec![7], 7)).unwrap(), 0);
        assert_eq!(
            ttft(&record(0, vec![], 10)),
            Err(MetricError::MetricUndefined("TTFT needs at least one token"))
        );
    }

    #[test]
    fn tpot_examples() {
        assert_eq!(tpot(&record(0, vec![0, 10 * MS, 20 * MS], 20 * MS)).unwrap(), 10e6);
        assert_eq!(tpot(&record(0, vec![0, 7 * MS], 7 * MS)).unwrap(), 7e6);
        assert!(tpot(&record(0, vec![5], 5)).is_err());
    }

    #[test]
    fn itl_examples() {
        assert_eq!(itl(&record(0, vec![0, 10 * MS, 25 * MS], 25 * MS)).unwrap(), vec![10 * MS, 15 * MS]);
        assert_eq!(
            itl(&record(0, vec![0, 5 * MS, 10 * MS, 15 * MS], 15 * MS)).unwrap(),
            vec![5 * MS; 3]
        );
        assert!(itl(&record(0, vec![1], 1)).is_err());
    }

    #[test]
    fn ntpot_examples() {
        let arrivals: Vec<u64> = (1..=100).map(|i| i * 20 * MS).collect();
        assert_eq!(ntpot(&record(0, arrivals, 2000 * MS)).unwrap(), 20e6);
        assert_eq!(ntpot(&record(0, vec![1000 * MS], 1000 * MS)).unwrap(), 1e9);
        let mut empty = record(0, vec![], 5);
        empty.output_tokens = 0;
        assert!(ntpot(&empty).is_err());
    }

    #[test]
    fn failed_requests_have_no_metrics() {
        let mut r = record(0, vec![1, 2], 3);
        r.status = RequestStatus::Timeout;
        assert!(ttft(&r).is_err());
        assert!(ntpot(&r).is_err());
    }

    #[test]
    fn decomposed_examples() {
        let d = |t_queue, input_len, t_prefill, output_len, t_decode| NtpotDecomposition {
            t_queue,
            input_len,
            t_prefill,
            output_len,
            t_decode,
        };
        assert_eq!(ntpot_decomposed(&d(0.0, 320, 0.0, 200, 0.005)).unwrap(), 0.005);
        // (0.1 + 320 * 0.25e-3 + 200 * 5e-3) / 200 = 1.18 / 200
        let oracle = (0.1 + 0.08 + 1.0) / 200.0;
        let got = ntpot_decomposed(&d(0.1, 320, 0.25e-3, 200, 0.005)).unwrap();
        assert!((got - oracle).abs() < 1e-15, "{got} vs {oracle}");
        assert!((got - 0.0059).abs() < 1e-15);
        assert_eq!(ntpot_decomposed(&d(1.0, 1, 0.0, 1, 0.0)).unwrap(), 1.0);
        assert!(ntpot_decomposed(&d(-1.0, 1, 0.0, 1, 0.0)).is_err());
        assert!(ntpot_decomposed(&d(0.0, 1, 0.0, 0, 0.0)).is_err());
    }

    #[test]
    fn aggregate_single_record() {
        let r = record(0, vec![10 * MS, 20 * MS], 20 * MS);
        let s = aggregate(&[r], Some(1.0), 1_000 * MS).unwrap();
        let ntpot = s.ntpot_stats.unwrap();
        assert_eq!(ntpot.mean, 0.010);
        assert_eq!(ntpot.sample_variance, 0.0);
        assert!(ntpot.single_sample);
    }

    #[test]
    fn aggregate_ntpot_mean_and_variance() {
        // NTPOT of 10, 20, 30 ms with one output token each.
        let records: Vec<_> = [10, 20, 30]
            .iter()
            .enumerate()
            .map(|(i, &ms)| {
                let mut r = record(0, vec![ms * MS], ms * MS);
                r.request_id = i as u64;
                r
            })
            .collect();
        let s = aggregate(&records, Some(3.0), 1_000 * MS).unwrap();
        let n = s.ntpot_stats.unwrap();
        // mean 20 ms; variance ((-10)^2 + 0 + 10^2) / 2 = 100 ms^2
        assert!((n.mean - 0.020).abs() < 1e-15);
        assert!((n.sample_variance - 100e-6).abs() < 1e-15);
    }

    #[test]
    fn aggregate_counts_errors_separately() {
        let mut records: Vec<_> = (0..3)
            .map(|i| {
                let mut r = record(0, vec![MS, 2 * MS], 2 * MS);
                r.request_id = i;
                r
            })
            .collect();
        let mut bad = record(0, vec![], MS);
        bad.request_id = 3;
        bad.status = RequestStatus::Error("http 500".into());
        bad.output_tokens = 0;
        records.push(bad);
        let s = aggregate(&records, Some(4.0), 1_000 * MS).unwrap();
        assert_eq!(s.request_count, 4);
        assert_eq!(s.error_count, 1);
        assert_eq!(s.success_count, 3);
        assert_eq!(s.ntpot_stats.unwrap().count, 3);
        assert_eq!(s.total_output_tokens, 6);
        // (3 input + 6 output) tokens over 1 s
        assert_eq!(s.token_throughput, 9.0);
        assert_eq!(aggregate(&[], None, 1), Err(MetricError::EmptyInput));
    }

    #[test]
    fn warmup_records_are_excluded_from_latency() {
        let mut a = record(0, vec![MS], MS);
        a.warmup = true;
        let mut b = record(0, vec![3 * MS], 3 * MS);
        b.request_id = 1;
        let s = aggregate(&[a, b], Some(2.0), 1_000 * MS).unwrap();
        assert_eq!(s.warmup_count, 1);
        assert_eq!(s.ttft_stats.unwrap().count, 1);
        assert_eq!(s.total_output_tokens, 2);
    }

    /// 10 QPS for 10 s, first second warm-up, served FIFO at one request
    /// per `service` with a fixed `base` latency.
    fn fifo_stage(base: u64, service: u64) -> Vec<RequestRecord> {
        let mut free = 0;
        (0..100u64)
            .map(|i| {
                let send = i * 100 * MS;
                let done = send.max(free) + service + base;
                free = done - base;
                let mut r = record(send, vec![done], done);
                r.request_id = i;
                r.warmup = i < 10;
                r
            })
            .collect()
    }

    #[test]
    fn completed_rate_ignores_latency_longer_than_warmup() {
        let s = aggregate(&fifo_stage(3_000 * MS, 0), Some(10.0), 13_000 * MS).unwrap();
        assert!((s.completed_qps - 10.0).abs() < 0.5, "{}", s.completed_qps);
    }

    #[test]
    fn completed_rate_reports_capacity_when_saturated() {
        // 5 requests/s capacity against 10 offered
        let s = aggregate(&fifo_stage(0, 200 * MS), Some(10.0), 20_000 * MS).unwrap();
        assert!((s.completed_qps - 5.0).abs() < 0.5, "{}", s.completed_qps);
    }

    #[test]
    fn record_validation() {
        let good = record(0, vec![1, 2], 3);
        assert!(good.validate().is_ok());
        let mut bad = good.clone();
        bad.output_tokens = 5;
        assert!(bad.validate().is_err());
        let mut unordered = good.clone();
        unordered.token_arrivals_ns = vec![2, 1];
        assert!(unordered.validate().is_err());
    }

    fn arb_record() -> impl Strategy<Value = RequestRecord> {
        (0u64..1_000_000, 1u64..50_000_000, prop::collection::vec(0u64..20_000_000, 1..60), 0u64..5_000_000)
            .prop_map(|(send, first, gaps, tail)| {
                let mut t = send + first;
                let mut arrivals = vec![t];
                for g in gaps {
                    t += g;
                    arrivals.push(t);
                }
                record(send, arrivals, t + tail)
            })
    }

    proptest! {
        #[test]
        fn mean_itl_equals_tpot(r in arb_record()) {
            let gaps = itl(&r).unwrap();
            let mean = gaps.iter().sum::<u64>() as f64 / gaps.len() as f64;
            let t = tpot(&r).unwrap();
            prop_assert!((mean - t).abs() <= f64::EPSILON * t.abs());
        }

        #[test]
        fn ntpot_bounds_decode_share(r in arb_record()) {
            let n = r.output_tokens as f64;
            prop_assert!(ntpot(&r).unwrap() >= tpot(&r).unwrap() * (n - 1.0) / n);
        }

        #[test]
        fn decode_only_decomposition_is_exact(n in 1u32..5000, t_decode in 0.0f64..1.0, i in 1u32..4096) {
            let d = NtpotDecomposition { t_queue: 0.0, input_len: i, t_prefill: 0.0, output_len: n, t_decode };
            prop_assert_eq!(ntpot_decomposed(&d).unwrap(), t_decode);
        }

        #[test]
        fn synthetic_record_matches_decomposition(
            t_queue in 0.0f64..2.0, input_len in 1u32..2048, t_prefill in 0.0f64..1e-3,
            output_len in 1u32..512, t_decode in 0.0f64..0.05,
        ) {
            let d = NtpotDecomposition { t_queue, input_len, t_prefill, output_len, t_decode };
            let r = RequestRecord::from_decomposition(1, 123_456, &d);
            prop_assert!(r.validate().is_ok());
            let measured = ntpot(&r).unwrap() / NANOS_PER_SEC;
            prop_assert!((measured - ntpot_decomposed(&d).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn aggregate_is_permutation_invariant(
            records in prop::collection::vec(arb_record(), 1..30), rot in 0usize..30,
        ) {
            let records: Vec<_> = records.into_iter().enumerate()
                .map(|(i, mut r)| { r.request_id = i as u64; r }).collect();
            let a = aggregate(&records, Some(10.0), 5_000_000_000).unwrap();
            let mut shuffled = records.clone();
            let len = shuffled.len();
            shuffled.rotate_left(rot % len);
            shuffled.reverse();
            let b = aggregate(&shuffled, Some(10.0), 5_000_000_000).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
