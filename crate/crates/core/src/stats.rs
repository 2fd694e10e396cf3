//! Replica summaries and bootstrap helpers.

use serde::Serialize;

use crate::rng::{CounterRng, Stream};

/// Mean and standard error of a replica sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, n };
        }
        let mean = sorted_sum(values) / n as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, n }
    }

    /// `sqrt(se_a^2 + se_b^2)`.
    pub fn combined_stderr(&self, other: &Stat) -> f64 {
        (self.stderr.powi(2) + other.stderr.powi(2)).sqrt()
    }
}

/// Sum in ascending order, so the result does not depend on input order.
pub fn sorted_sum(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Deterministic resampling with replacement.
#[derive(Debug, Clone)]
pub struct Bootstrap {
    rng: CounterRng,
}

impl Bootstrap {
    pub fn new(seed: u64) -> Self {
        Self { rng: CounterRng::new(seed, Stream::Bootstrap, 0) }
    }

    /// `n` indices drawn uniformly from `0..n`.
    pub fn indices(&mut self, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.rng.below(n as u64) as usize).collect()
    }

    pub fn resample(&mut self, values: &[f64]) -> Vec<f64> {
        self.indices(values.len()).into_iter().map(|i| values[i]).collect()
    }
}

/// Linear-interpolated quantile of a sample, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap interval for a difference of means of two samples.
pub fn diff_of_means_ci(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    let mut boot = Bootstrap::new(seed);
    let diffs: Vec<f64> = (0..resamples)
        .map(|_| {
            let ra = boot.resample(a);
            let rb = boot.resample(b);
            ra.iter().sum::<f64>() / ra.len() as f64 - rb.iter().sum::<f64>() / rb.len() as f64
        })
        .collect();
    (quantile(&diffs, 0.025), quantile(&diffs, 0.975))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_matches_hand_computation() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        // sample variance 5/3, se = sqrt(5/12)
        assert!((s.stderr - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(Stat::of(&[3.0]).stderr, 0.0);
        assert!(Stat::of(&[]).mean.is_nan());
    }

    #[test]
    fn sorted_sum_is_order_free() {
        let a = [0.1, 1e16, -1e16, 0.3, 0.2];
        let mut b = a;
        b.reverse();
        assert_eq!(sorted_sum(&a), sorted_sum(&b));
    }

    #[test]
    fn quantiles() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert_eq!(quantile(&v, 0.125), 1.5);
    }

    #[test]
    fn bootstrap_is_deterministic_and_covers_the_truth() {
        let a: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        let b: Vec<f64> = (0..50).map(|i| (i % 5) as f64).collect();
        let ci = diff_of_means_ci(&a, &b, 500, 3);
        assert_eq!(ci, diff_of_means_ci(&a, &b, 500, 3));
        let d = a.iter().sum::<f64>() / 50.0 - b.iter().sum::<f64>() / 50.0;
        assert!(ci.0 <= d && d <= ci.1);
    }
}
