//! M/G/1 model of the measuring client's event loop.
//!
//! Token events reach a worker's event loop at rate `lambda`; the loop
//! processes them at rate `mu` with service-time second moment `s2`. The
//! Pollaczek-Khinchine mean wait is `lambda * s2 / (2 (1 - rho))` with
//! `rho = lambda / mu`, and partitioning the stream over `k` independent
//! workers divides the per-worker utilisation by `k`.
//!
//! [`simulate_mg1`] is an independent oracle for the closed form: a
//! single-server FIFO queue driven by Lindley's recurrence
//! `W[n+1] = max(0, W[n] + S[n] - A[n+1])`. Inter-arrival and service draws
//! come from two ChaCha8 streams (stream ids 0 and 1) of the same seed, with
//! exponential variates from `rand_distr::Exp`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QueueModelError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("saturated queue: rho = {rho} >= 1, the mean wait is unbounded")]
    Saturated { rho: f64 },
}

type Result<T> = std::result::Result<T, QueueModelError>;

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(QueueModelError::InvalidParam(format!("{name} must be finite and > 0, got {v}")))
    }
}

/// Default per-worker utilisation ceiling used for auto-sizing.
pub const DEFAULT_RHO_MAX: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueModelParams {
    /// Aggregate token arrival rate, events/s.
    pub lambda: f64,
    /// Single-worker service rate, events/s.
    pub mu: f64,
    /// Second moment of the service time, s^2.
    pub s2: f64,
    pub k: u32,
}

impl QueueModelParams {
    pub fn new(lambda: f64, mu: f64, s2: f64, k: u32) -> Result<Self> {
        positive("lambda", lambda)?;
        positive("mu", mu)?;
        let mean_sq = 1.0 / (mu * mu);
        if !s2.is_finite() || s2 < mean_sq * (1.0 - 1e-12) {
            return Err(QueueModelError::InvalidParam(format!(
                "s2 = {s2} is below the squared mean service time {mean_sq}"
            )));
        }
        if k == 0 {
            return Err(QueueModelError::InvalidParam("k must be >= 1".into()));
        }
        Ok(Self { lambda, mu, s2, k })
    }

    /// Per-worker utilisation `lambda / (k mu)`.
    pub fn rho(&self) -> f64 {
        self.lambda / (self.k as f64 * self.mu)
    }

    /// Mean queue wait inside one of the `k` workers, each of which sees a
    /// `lambda / k` share of the events.
    pub fn wait(&self) -> Result<f64> {
        pk_wait(self.lambda / self.k as f64, self.mu, self.s2)
    }
}

/// `rho = lambda / mu`. Values above 1 are returned as-is (overload).
pub fn utilization(lambda: f64, mu: f64) -> Result<f64> {
    positive("mu", mu)?;
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(QueueModelError::InvalidParam(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(lambda / mu)
}

/// `rho_k = lambda / (k mu)`.
pub fn partitioned_utilization(lambda: f64, mu: f64, k: u32) -> Result<f64> {
    if k == 0 {
        return Err(QueueModelError::InvalidParam("k must be >= 1".into()));
    }
    Ok(utilization(lambda, mu)? / k as f64)
}

/// Pollaczek-Khinchine mean waiting time `lambda s2 / (2 (1 - rho))`.
pub fn pk_wait(lambda: f64, mu: f64, s2: f64) -> Result<f64> {
    let rho = utilization(lambda, mu)?;
    if !s2.is_finite() || s2 < 0.0 {
        return Err(QueueModelError::InvalidParam(format!("s2 must be >= 0, got {s2}")));
    }
    if rho >= 1.0 {
        return Err(QueueModelError::Saturated { rho });
    }
    Ok(lambda * s2 / (2.0 * (1.0 - rho)))
}

/// Smallest `k >= 1` with `lambda / (k mu) <= rho_max`.
pub fn min_workers(lambda: f64, mu: f64, rho_max: f64) -> Result<u32> {
    positive("lambda", lambda)?;
    positive("mu", mu)?;
    if !(rho_max > 0.0 && rho_max < 1.0) {
        return Err(QueueModelError::InvalidParam(format!("rho_max must lie in (0, 1), got {rho_max}")));
    }
    let estimate = (lambda / (mu * rho_max)).ceil();
    if estimate > u32::MAX as f64 {
        return Err(QueueModelError::InvalidParam("required worker count overflows".into()));
    }
    let fits = |k: u32| lambda / (k as f64 * mu) <= rho_max;
    let mut k = (estimate as u32).max(1);
    // The ceiling above can be off by one after rounding; settle against the
    // exact predicate.
    while k > 1 && fits(k - 1) {
        k -= 1;
    }
    while !fits(k) {
        k += 1;
    }
    Ok(k)
}

/// Service-time law for the simulation oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceDistribution {
    Deterministic { mean: f64 },
    Exponential { mean: f64 },
    /// Resamples uniformly from an observed sample, in seconds.
    Empirical { samples: Vec<f64> },
}

impl ServiceDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Deterministic { mean } | Self::Exponential { mean } => positive("mean", *mean),
            Self::Empirical { samples } => {
                if samples.is_empty() {
                    return Err(QueueModelError::InvalidParam("empirical sample is empty".into()));
                }
                if samples.iter().any(|s| !s.is_finite() || *s < 0.0) {
                    return Err(QueueModelError::InvalidParam("service samples must be >= 0".into()));
                }
                Ok(())
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Deterministic { mean } | Self::Exponential { mean } => *mean,
            Self::Empirical { samples } => samples.iter().sum::<f64>() / samples.len() as f64,
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            Self::Deterministic { mean } => mean * mean,
            Self::Exponential { mean } => 2.0 * mean * mean,
            Self::Empirical { samples } => samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64,
        }
    }

    fn sampler(&self) -> Sampler<'_> {
        match self {
            Self::Deterministic { mean } => Sampler::Fixed(*mean),
            Self::Exponential { mean } => Sampler::Exp(Exp::new(1.0 / mean).expect("validated mean")),
            Self::Empirical { samples } => Sampler::Resample(samples),
        }
    }
}

enum Sampler<'a> {
    Fixed(f64),
    Exp(Exp<f64>),
    Resample(&'a [f64]),
}

impl Sampler<'_> {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampler::Fixed(v) => *v,
            Sampler::Exp(e) => e.sample(rng),
            Sampler::Resample(s) => s[rng.gen_range(0..s.len())],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub mean_wait: f64,
    /// Half-width of a 95% confidence interval from batch means.
    pub ci_halfwidth: f64,
    pub n_arrivals: u64,
}

/// Number of batches used for the batch-means confidence interval.
pub const SIM_BATCHES: u64 = 20;

/// Simulates a FIFO single-server queue with Poisson(`lambda`) arrivals and
/// returns the sample mean queue wait over `n_arrivals` customers, starting
/// from an empty system.
pub fn simulate_mg1(dist: &ServiceDistribution, lambda: f64, n_arrivals: u64, seed: u64) -> Result<SimulationResult> {
    dist.validate()?;
    positive("lambda", lambda)?;
    if n_arrivals == 0 {
        return Err(QueueModelError::InvalidParam("n_arrivals must be >= 1".into()));
    }
    let rho = lambda * dist.mean();
    if rho >= 1.0 {
        return Err(QueueModelError::Saturated { rho });
    }

    let mut arrivals_rng = ChaCha8Rng::seed_from_u64(seed);
    arrivals_rng.set_stream(0);
    let mut service_rng = ChaCha8Rng::seed_from_u64(seed);
    service_rng.set_stream(1);
    let interarrival = Exp::new(lambda).expect("validated lambda");
    let service = dist.sampler();

    let batches = SIM_BATCHES.min(n_arrivals);
    let batch_len = n_arrivals / batches;
    let mut batch_sums = vec![0.0; batches as usize];

    let mut wait = 0.0f64;
    let mut total = 0.0f64;
    for i in 0..n_arrivals {
        total += wait;
        let b = ((i / batch_len).min(batches - 1)) as usize;
        batch_sums[b] += wait;
        let s = service.draw(&mut service_rng);
        let a = interarrival.sample(&mut arrivals_rng);
        wait = (wait + s - a).max(0.0);
    }
    let mean_wait = total / n_arrivals as f64;

    let ci_halfwidth = if batches >= 2 {
        let means: Vec<f64> = batch_sums
            .iter()
            .enumerate()
            .map(|(b, sum)| {
                let len = if b as u64 == batches - 1 { n_arrivals - batch_len * (batches - 1) } else { batch_len };
                sum / len as f64
            })
            .collect();
        let m = means.iter().sum::<f64>() / batches as f64;
        let var = means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (batches - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (batches - 1) as f64)
            .expect("valid dof")
            .inverse_cdf(0.975);
        t * (var / batches as f64).sqrt()
    } else {
        f64::INFINITY
    };

    Ok(SimulationResult { mean_wait, ci_halfwidth, n_arrivals })
}

/// Calibrated service model of one client worker, archived in run reports
/// under `client_model`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientModel {
    /// Token events a single worker processes per second at saturation.
    pub mu: f64,
    /// Second moment of the per-event service time, s^2.
    pub s2: f64,
    pub rho_max: f64,
    /// Stream events per request used to turn request rates into event rates.
    pub events_per_request: f64,
    pub samples: usize,
    pub host_cores: usize,
}

impl ClientModel {
    /// Requests per second one worker can absorb before its utilisation
    /// reaches 1.
    pub fn single_worker_capacity_qps(&self) -> f64 {
        self.mu / self.events_per_request
    }

    /// Token event rate induced by a request rate.
    pub fn event_rate(&self, qps: f64) -> f64 {
        qps * self.events_per_request
    }

    pub fn workers_for(&self, qps: f64) -> Result<u32> {
        min_workers(self.event_rate(qps), self.mu, self.rho_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn utilization_examples() {
        assert_eq!(utilization(0.5, 1.0).unwrap(), 0.5);
        assert_eq!(utilization(3.0, 3.0).unwrap(), 1.0);
        assert_eq!(utilization(2.0, 1.0).unwrap(), 2.0);
        assert!(utilization(1.0, 0.0).is_err());
        assert!(utilization(1.0, -2.0).is_err());
    }

    #[test]
    fn pk_wait_matches_mm1_and_md1() {
        // M/M/1: rho / (mu - lambda)
        let mm1 = pk_wait(0.5, 1.0, 2.0).unwrap();
        assert_eq!(mm1, 1.0);
        assert!(rel(mm1, 0.5 / (1.0 - 0.5)) < 1e-15);
        // M/D/1: rho / (2 mu (1 - rho))
        let md1 = pk_wait(0.5, 1.0, 1.0).unwrap();
        assert_eq!(md1, 0.5);
        assert!(rel(md1, 0.5 / (2.0 * 0.5)) < 1e-15);
    }

    #[test]
    fn pk_wait_vanishes_at_low_load() {
        let w = pk_wait(1e-9, 1.0, 2.0).unwrap();
        assert!(w < 1e-8);
    }

    #[test]
    fn pk_wait_rejects_saturation() {
        assert_eq!(pk_wait(1.0, 1.0, 1.0), Err(QueueModelError::Saturated { rho: 1.0 }));
        assert!(matches!(pk_wait(2.0, 1.0, 1.0), Err(QueueModelError::Saturated { .. })));
    }

    #[test]
    fn partitioned_examples() {
        assert_eq!(partitioned_utilization(10.0, 1.0, 20).unwrap(), 0.5);
        assert_eq!(partitioned_utilization(0.7, 1.3, 1).unwrap(), utilization(0.7, 1.3).unwrap());
        assert!(partitioned_utilization(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn min_workers_examples() {
        assert_eq!(min_workers(100.0, 100.0, 0.5).unwrap(), 2);
        assert_eq!(min_workers(1.0, 1000.0, 0.5).unwrap(), 1);
        // 999 / (100 * 0.8) = 12.4875
        assert_eq!(min_workers(999.0, 100.0, 0.8).unwrap(), 13);
        assert!(min_workers(1.0, 1.0, 1.0).is_err());
        assert!(min_workers(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(QueueModelParams::new(1.0, 2.0, 0.25, 1).is_ok());
        assert!(QueueModelParams::new(1.0, 2.0, 0.2, 1).is_err());
        assert!(QueueModelParams::new(1.0, 2.0, 0.5, 0).is_err());
        let p = QueueModelParams::new(10.0, 1.0, 2.0, 20).unwrap();
        assert_eq!(p.rho(), 0.5);
        assert_eq!(p.wait().unwrap(), pk_wait(0.5, 1.0, 2.0).unwrap());
    }

    #[test]
    fn simulation_is_deterministic_and_rejects_overload() {
        let d = ServiceDistribution::Exponential { mean: 1.0 };
        let a = simulate_mg1(&d, 0.5, 10_000, 7).unwrap();
        let b = simulate_mg1(&d, 0.5, 10_000, 7).unwrap();
        assert_eq!(a, b);
        assert!(matches!(simulate_mg1(&d, 1.0, 10, 1), Err(QueueModelError::Saturated { .. })));
        assert!(simulate_mg1(&d, 0.5, 0, 1).is_err());
    }

    #[test]
    fn simulation_near_empty_system() {
        let d = ServiceDistribution::Deterministic { mean: 1.0 };
        let r = simulate_mg1(&d, 1e-6, 1000, 3).unwrap();
        assert!(r.mean_wait < 1e-3);
    }

    #[test]
    fn simulation_matches_closed_form_mean_service() {
        // M/D/1 and M/M/1 at rho = 0.5
        let det = simulate_mg1(&ServiceDistribution::Deterministic { mean: 1.0 }, 0.5, 200_000, 11).unwrap();
        assert!((det.mean_wait - 0.5).abs() < 3.0 * det.ci_halfwidth.max(0.01), "{det:?}");
        let exp = simulate_mg1(&ServiceDistribution::Exponential { mean: 1.0 }, 0.5, 200_000, 12).unwrap();
        assert!((exp.mean_wait - 1.0).abs() < 3.0 * exp.ci_halfwidth.max(0.02), "{exp:?}");
    }

    #[test]
    fn empirical_moments() {
        let d = ServiceDistribution::Empirical { samples: vec![1.0, 3.0] };
        assert_eq!(d.mean(), 2.0);
        assert_eq!(d.second_moment(), 5.0);
        assert!(ServiceDistribution::Empirical { samples: vec![] }.validate().is_err());
    }

    #[test]
    fn client_model_sizing() {
        let m = ClientModel { mu: 1000.0, s2: 1e-6, rho_max: 0.5, events_per_request: 10.0, samples: 1, host_cores: 4 };
        assert_eq!(m.single_worker_capacity_qps(), 100.0);
        // 10x the single-worker capacity at rho_max = 0.5 -> 20 workers
        assert_eq!(m.workers_for(1000.0).unwrap(), 20);
        assert_eq!(m.workers_for(1.0).unwrap(), 1);
    }

    proptest! {
        #[test]
        fn pk_wait_increases_with_lambda(mu in 0.1f64..1e4, a in 0.01f64..0.98, b in 0.01f64..0.98, cv in 1.0f64..4.0) {
            prop_assume!((a - b).abs() > 1e-6);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let s2 = cv / (mu * mu);
            prop_assert!(pk_wait(lo * mu, mu, s2).unwrap() < pk_wait(hi * mu, mu, s2).unwrap());
        }

        #[test]
        fn pk_wait_diverges_near_saturation(mu in 0.1f64..1e4, eps in 1e-9f64..0.5, cv in 1.0f64..4.0) {
            let lambda = (1.0 - eps) * mu;
            let s2 = cv / (mu * mu);
            let actual_eps = 1.0 - lambda / mu;
            let w = pk_wait(lambda, mu, s2).unwrap();
            prop_assert!(w >= lambda * s2 / (2.0 * actual_eps) * (1.0 - 1e-12));
        }

        #[test]
        fn partitioning_divides_utilization(lambda in 0.0f64..1e6, mu in 1e-3f64..1e6, k in 1u32..1000) {
            let a = partitioned_utilization(lambda, mu, k).unwrap();
            let b = utilization(lambda, mu).unwrap() / k as f64;
            prop_assert!((a - b).abs() <= f64::EPSILON * b.abs());
        }

        #[test]
        fn min_workers_is_minimal(lambda in 1e-3f64..1e6, mu in 1e-3f64..1e5, rho_max in 0.01f64..0.99) {
            let k = min_workers(lambda, mu, rho_max).unwrap();
            prop_assert!(lambda / (k as f64 * mu) <= rho_max);
            prop_assert!(k == 1 || lambda / ((k - 1) as f64 * mu) > rho_max);
        }
    }
}
