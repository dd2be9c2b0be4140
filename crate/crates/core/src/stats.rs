//! Block bootstrap and small regression helpers for correlated chain output.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

pub const DEFAULT_BLOCKS: usize = 100;
pub const DEFAULT_RESAMPLES: usize = 2000;

/// Point estimate with a two-sided percentile interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn halfwidth(&self) -> f64 {
        0.5 * (self.high - self.low)
    }

    pub fn disjoint_below(&self, other: &Interval) -> bool {
        self.high < other.low
    }
}

/// Splits `total` observations into `blocks` contiguous blocks of (nearly)
/// equal length and accumulates per-block sums as values arrive.
#[derive(Debug, Clone)]
pub struct BlockAccumulator {
    total: u64,
    seen: u64,
    sums: Vec<f64>,
    lens: Vec<u64>,
}

impl BlockAccumulator {
    pub fn new(total: u64, blocks: usize) -> Self {
        let blocks = blocks.max(1).min(total.max(1) as usize);
        BlockAccumulator {
            total: total.max(1),
            seen: 0,
            sums: vec![0.0; blocks],
            lens: vec![0; blocks],
        }
    }

    pub fn push(&mut self, x: f64) {
        let b = ((self.seen as u128 * self.sums.len() as u128) / self.total as u128) as usize;
        let b = b.min(self.sums.len() - 1);
        self.sums[b] += x;
        self.lens[b] += 1;
        self.seen += 1;
    }

    pub fn count(&self) -> u64 {
        self.seen
    }

    pub fn mean(&self) -> f64 {
        let n: u64 = self.lens.iter().sum();
        if n == 0 {
            return 0.0;
        }
        self.sums.iter().sum::<f64>() / n as f64
    }

    /// Means of the nonempty blocks.
    pub fn block_means(&self) -> Vec<f64> {
        self.sums
            .iter()
            .zip(&self.lens)
            .filter(|(_, &n)| n > 0)
            .map(|(s, &n)| s / n as f64)
            .collect()
    }
}

/// Percentile bootstrap (95%) of the mean over resampled block means.
pub fn bootstrap_mean(block_means: &[f64], resamples: usize, rng: &mut dyn RngCore) -> Interval {
    let k = block_means.len();
    if k == 0 {
        return Interval {
            estimate: 0.0,
            low: 0.0,
            high: 0.0,
        };
    }
    let estimate = block_means.iter().sum::<f64>() / k as f64;
    let mut reps: Vec<f64> = (0..resamples)
        .map(|_| (0..k).map(|_| block_means[rng.gen_range(0..k)]).sum::<f64>() / k as f64)
        .collect();
    reps.sort_by(f64::total_cmp);
    Interval {
        estimate,
        low: quantile_sorted(&reps, 0.025),
        high: quantile_sorted(&reps, 0.975),
    }
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Mean and standard error of independent samples.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// 95% normal-approximation interval for the mean of independent samples.
pub fn mean_interval(xs: &[f64]) -> Interval {
    let (m, se) = mean_and_stderr(xs);
    Interval {
        estimate: m,
        low: m - 1.96 * se,
        high: m + 1.96 * se,
    }
}

/// 95% Student-t interval for the mean of a handful of independent
/// replicates (one value per seed).
pub fn t_interval(xs: &[f64]) -> Interval {
    let (m, se) = mean_and_stderr(xs);
    if xs.len() < 2 {
        return Interval {
            estimate: m,
            low: m,
            high: m,
        };
    }
    let t = StudentsT::new(0.0, 1.0, (xs.len() - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    Interval {
        estimate: m,
        low: m - t * se,
        high: m + t * se,
    }
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn blocks_partition_the_series() {
        let mut acc = BlockAccumulator::new(1000, 100);
        for i in 0..1000 {
            acc.push(i as f64);
        }
        let means = acc.block_means();
        assert_eq!(means.len(), 100);
        assert_eq!(means[0], 4.5);
        assert!((acc.mean() - 499.5).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_interval_brackets_the_mean() {
        let mut rng = stream(0, "test", 0);
        let xs: Vec<f64> = (0..100).map(|i| (i % 7) as f64).collect();
        let ci = bootstrap_mean(&xs, 2000, &mut rng);
        assert!(ci.low < ci.estimate && ci.estimate < ci.high);
        let (m, se) = mean_and_stderr(&xs);
        assert!((ci.estimate - m).abs() < 1e-12);
        assert!((ci.halfwidth() - 1.96 * se).abs() < 0.3 * 1.96 * se);
    }

    #[test]
    fn t_interval_uses_the_t_quantile() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        let ci = t_interval(&xs);
        let (_, se) = mean_and_stderr(&xs);
        assert!(((ci.high - ci.estimate) / se - 2.262157).abs() < 1e-5);
    }

    #[test]
    fn slope_of_a_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 1.0, -1.0, -3.0];
        assert!((ols_slope(&x, &y) + 2.0).abs() < 1e-12);
    }
}
