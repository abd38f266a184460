//! Closed-form M/G/1 wait against the Lindley-recurrence simulator.

use tokenprof_core::queue_model::{pk_wait, simulate_mg1, QueueModelParams, ServiceDistribution};

const MU: f64 = 1.0;
const N: u64 = 20_000_000;
const TOL: f64 = 0.02;

fn check(dist: ServiceDistribution, seed: u64) {
    for rho in [0.3, 0.6, 0.9] {
        let lambda = rho * MU;
        let analytic = pk_wait(lambda, MU, dist.second_moment()).unwrap();
        let sim = simulate_mg1(&dist, lambda, N, seed).unwrap();
        let rel = (sim.mean_wait - analytic).abs() / analytic;
        assert!(rel < TOL, "{dist:?} rho={rho}: sim {} vs analytic {analytic} (rel {rel:.4})", sim.mean_wait);
        assert!(sim.ci_halfwidth.is_finite() && sim.ci_halfwidth > 0.0);
    }
}

#[test]
fn deterministic_service_matches_closed_form() {
    check(ServiceDistribution::Deterministic { mean: 1.0 / MU }, 11);
}

#[test]
fn exponential_service_matches_closed_form() {
    check(ServiceDistribution::Exponential { mean: 1.0 / MU }, 12);
}

#[test]
fn partitioned_wait_uses_per_worker_rate() {
    let s2 = 2.0 / (MU * MU);
    for k in 1..=8u32 {
        let lambda = 0.9 * MU * k as f64;
        let p = QueueModelParams::new(lambda, MU, s2, k).unwrap();
        assert!((p.rho() - 0.9).abs() < 1e-12);
        assert_eq!(p.wait().unwrap(), pk_wait(lambda / k as f64, MU, s2).unwrap());
    }
}
