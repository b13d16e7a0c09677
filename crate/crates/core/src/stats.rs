//! Monte Carlo summaries with deterministic summation order.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Pairwise (cascade) summation; the result depends only on the slice order.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if x.len() <= LEAF {
        return x.iter().sum();
    }
    let mid = x.len() / 2;
    pairwise_sum(&x[..mid]) + pairwise_sum(&x[mid..])
}

pub fn mean(x: &[f64]) -> f64 {
    pairwise_sum(x) / x.len() as f64
}

/// Sample mean, unbiased sample variance and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub var: f64,
    pub se: f64,
}

impl Summary {
    pub fn of(x: &[f64]) -> Self {
        let n = x.len();
        let m = mean(x);
        let var = if n > 1 {
            let dev: Vec<f64> = x.iter().map(|v| (v - m) * (v - m)).collect();
            pairwise_sum(&dev) / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            n,
            mean: m,
            var,
            se: (var / n as f64).sqrt(),
        }
    }
}

/// Standard error of a Bernoulli frequency estimated from `n` trials.
pub fn binomial_se(prob: f64, n: usize) -> f64 {
    (prob * (1.0 - prob) / n as f64).sqrt()
}

/// Least-squares line `y = intercept + slope * x`; returns `(slope, intercept)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// `P(chi2_k <= x)`.
pub fn chi2_cdf(k: f64, x: f64) -> f64 {
    ChiSquared::new(k).expect("positive degrees of freedom").cdf(x)
}
