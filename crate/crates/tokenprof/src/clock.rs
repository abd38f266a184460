//! Monotonic run clock and precise sleeping.

use std::time::{Duration, Instant};

/// Nanoseconds since a fixed epoch. Copies share the epoch, so a client and
/// a co-located mock server stamp on the same axis.
#[derive(Debug, Clone, Copy)]
pub struct Clock {
    epoch: Instant,
}

impl Default for Clock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock {
    pub fn new() -> Self {
        Self { epoch: Instant::now() }
    }

    pub fn now_ns(&self) -> u64 {
        self.epoch.elapsed().as_nanos() as u64
    }

    pub fn instant_at(&self, ns: u64) -> Instant {
        self.epoch + Duration::from_nanos(ns)
    }

    pub fn ns_of(&self, at: Instant) -> u64 {
        at.saturating_duration_since(self.epoch).as_nanos() as u64
    }
}

/// Sets the calling thread's timer slack to 1 ns so sleeps wake as close to
/// their deadline as the kernel allows. No-op off Linux.
pub fn tighten_timer_slack() {
    #[cfg(target_os = "linux")]
    // SAFETY: PR_SET_TIMERSLACK only affects the calling thread.
    unsafe {
        libc::prctl(libc::PR_SET_TIMERSLACK, 1 as libc::c_ulong, 0, 0, 0);
    }
}

/// Blocks the current thread until `deadline`.
pub fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now {
        std::thread::sleep(deadline - now);
    }
}

/// p99 overshoot of `std::thread::sleep(period)` on this host, measured on a
/// fresh thread with default timer settings. Used as the host timer
/// granularity when judging timing accuracy.
pub fn measure_timer_granularity(period: Duration, samples: usize) -> Duration {
    let samples = samples.max(1);
    std::thread::spawn(move || {
        let mut over: Vec<Duration> = (0..samples)
            .map(|_| {
                let start = Instant::now();
                std::thread::sleep(period);
                start.elapsed().saturating_sub(period)
            })
            .collect();
        over.sort();
        over[((samples as f64 * 0.99).ceil() as usize).clamp(1, samples) - 1]
    })
    .join()
    .expect("granularity probe thread")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clock_round_trips_instants() {
        let c = Clock::new();
        let at = c.instant_at(1_234_567);
        assert_eq!(c.ns_of(at), 1_234_567);
        let a = c.now_ns();
        let b = c.now_ns();
        assert!(b >= a);
    }

    #[test]
    fn sleep_until_never_wakes_early() {
        let start = Instant::now();
        let deadline = start + Duration::from_millis(3);
        sleep_until(deadline);
        assert!(Instant::now() >= deadline);
        sleep_until(start);
    }
}
