//! Descriptive statistics over latency samples.
//!
//! Percentiles use the nearest-rank method on the sorted sample with no
//! interpolation, so any implementation that sorts the same values reports
//! the same numbers. All sums run over the sorted sample, which makes every
//! statistic independent of input order.

use serde::{Deserialize, Serialize};

/// Summary of one latency sample, all values in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: usize,
    pub mean: f64,
    /// Unbiased (M-1 denominator) variance; 0 for a single sample.
    pub sample_variance: f64,
    pub min: f64,
    pub max: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    /// Set when the block holds exactly one sample and the variance is
    /// therefore undefined (reported as 0).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub single_sample: bool,
}

impl LatencyStats {
    /// Summarises a sample given in seconds. Returns `None` when empty.
    pub fn from_secs(mut values: Vec<f64>) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sample_variance = if n > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Some(Self {
            count: n,
            mean,
            sample_variance,
            min: values[0],
            max: values[n - 1],
            p50: nearest_rank(&values, 50.0),
            p90: nearest_rank(&values, 90.0),
            p99: nearest_rank(&values, 99.0),
            single_sample: n == 1,
        })
    }

    /// Summarises a sample of integer nanoseconds.
    pub fn from_nanos(values: &[u64]) -> Option<Self> {
        Self::from_secs(values.iter().map(|&v| crate::ns_to_secs(v)).collect())
    }
}

/// Median, p90 and p99 of a delay distribution, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayPercentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

impl DelayPercentiles {
    pub fn from_nanos(values: &[u64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted: Vec<f64> = values.iter().map(|&v| crate::ns_to_secs(v)).collect();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            p50: nearest_rank(&sorted, 50.0),
            p90: nearest_rank(&sorted, 90.0),
            p99: nearest_rank(&sorted, 99.0),
        })
    }

    pub fn max(&self) -> f64 {
        self.p50.max(self.p90).max(self.p99)
    }
}

/// Nearest-rank percentile of an ascending sample: the value at rank
/// `ceil(pct/100 * n)` (1-based), clamped to `[1, n]`.
pub fn nearest_rank<T: Copy>(sorted: &[T], pct: f64) -> T {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nearest_rank_small_samples() {
        let v = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];
        assert_eq!(nearest_rank(&v, 50.0), 5);
        assert_eq!(nearest_rank(&v, 90.0), 9);
        assert_eq!(nearest_rank(&v, 99.0), 10);
        assert_eq!(nearest_rank(&[7], 50.0), 7);
        assert_eq!(nearest_rank(&v, 0.0), 1);
    }

    #[test]
    fn variance_of_three() {
        let s = LatencyStats::from_secs(vec![0.030, 0.010, 0.020]).unwrap();
        assert!((s.mean - 0.020).abs() < 1e-15);
        assert!((s.sample_variance - 1e-4).abs() < 1e-15);
        assert_eq!(s.min, 0.010);
        assert_eq!(s.max, 0.030);
        assert!(!s.single_sample);
    }

    #[test]
    fn single_sample_is_flagged() {
        let s = LatencyStats::from_secs(vec![0.5]).unwrap();
        assert_eq!(s.sample_variance, 0.0);
        assert!(s.single_sample);
        assert!(LatencyStats::from_secs(vec![]).is_none());
    }

    proptest! {
        #[test]
        fn percentiles_are_monotone(values in prop::collection::vec(0u64..10_000_000_000, 1..400)) {
            let s = LatencyStats::from_nanos(&values).unwrap();
            prop_assert!(s.min <= s.p50 && s.p50 <= s.p90 && s.p90 <= s.p99 && s.p99 <= s.max);
            let d = DelayPercentiles::from_nanos(&values).unwrap();
            prop_assert!(d.p50 <= d.p90 && d.p90 <= d.p99);
        }

        #[test]
        fn order_does_not_matter(mut values in prop::collection::vec(0.0f64..10.0, 1..100), seed in any::<u64>()) {
            let a = LatencyStats::from_secs(values.clone()).unwrap();
            let len = values.len();
            values.rotate_left((seed as usize) % len);
            values.reverse();
            let b = LatencyStats::from_secs(values).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
