//! Projections onto monotone cones and the LCM-of-CUSUM slope estimator.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::seq_core::VarianceProfile;

/// Target cone for [`pava`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cone {
    Nonincreasing,
    NonincreasingNonneg,
}

/// A maximal run of equal fitted values, `start..end` (half-open, 0-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub start: usize,
    pub end: usize,
    /// Weighted mean of the inputs over the block (before any clamp).
    pub mean: f64,
    /// Fitted value on the block.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicFit {
    pub values: Vec<f64>,
    pub blocks: Vec<Block>,
    /// `sum_i w_i (x_i - values_i)^2`.
    pub objective: f64,
}

struct Pool {
    start: usize,
    sum_w: f64,
    sum_wx: f64,
    // Singletons keep their input exactly so feasible inputs are fixed points.
    mean: f64,
}

/// Weighted least-squares projection of `x` onto a nonincreasing cone.
///
/// For the nonnegative variant the monotone fit is clamped at zero afterwards.
/// This is exact: the clamped vector is feasible, and on blocks whose mean is
/// negative the KKT conditions for the bound `v >= 0` hold with the block's
/// (nonpositive) residual sums as multipliers, while positive blocks are
/// untouched.
pub fn pava(x: &[f64], w: &[f64], cone: Cone) -> Result<IsotonicFit> {
    if x.is_empty() {
        return arg_err("pava: empty input");
    }
    if x.len() != w.len() {
        return arg_err(format!("pava: {} values but {} weights", x.len(), w.len()));
    }
    if let Some(i) = w.iter().position(|&wi| !(wi > 0.0) || !wi.is_finite()) {
        return arg_err(format!("pava: weight {i} is {} (must be positive)", w[i]));
    }
    if let Some(i) = x.iter().position(|xi| !xi.is_finite()) {
        return arg_err(format!("pava: value {i} is not finite"));
    }

    let mut stack: Vec<Pool> = Vec::with_capacity(x.len());
    for (i, (&xi, &wi)) in x.iter().zip(w).enumerate() {
        let mut cur = Pool {
            start: i,
            sum_w: wi,
            sum_wx: wi * xi,
            mean: xi,
        };
        // Ties are feasible for a nonincreasing cone: pool only on strict violation.
        while let Some(top) = stack.last() {
            if top.mean < cur.mean {
                let top = stack.pop().expect("nonempty");
                let (sum_w, sum_wx) = (top.sum_w + cur.sum_w, top.sum_wx + cur.sum_wx);
                cur = Pool {
                    start: top.start,
                    sum_w,
                    sum_wx,
                    mean: sum_wx / sum_w,
                };
            } else {
                break;
            }
        }
        stack.push(cur);
    }

    let mut values = vec![0.0; x.len()];
    let mut blocks = Vec::with_capacity(stack.len());
    for (k, pool) in stack.iter().enumerate() {
        let end = stack.get(k + 1).map_or(x.len(), |next| next.start);
        let mean = pool.mean;
        let value = match cone {
            Cone::Nonincreasing => mean,
            Cone::NonincreasingNonneg => mean.max(0.0),
        };
        values[pool.start..end].fill(value);
        blocks.push(Block {
            start: pool.start,
            end,
            mean,
            value,
        });
    }
    let objective = weighted_sse(x, w, &values);
    Ok(IsotonicFit { values, blocks, objective })
}

/// Unit-weight [`pava`].
pub fn pava_unit(x: &[f64], cone: Cone) -> Result<IsotonicFit> {
    pava(x, &vec![1.0; x.len()], cone)
}

pub(crate) fn weighted_sse(x: &[f64], w: &[f64], v: &[f64]) -> f64 {
    x.iter().zip(w).zip(v).map(|((xi, wi), vi)| wi * (xi - vi) * (xi - vi)).sum()
}

/// `tau_i = (min_{h <= i} max_{j >= i} mean(x_h..x_j))_+`, evaluated literally
/// in `O(p^2)` from prefix sums.
pub fn min_max_slopes(x: &[f64]) -> Result<Vec<f64>> {
    let p = x.len();
    if p == 0 {
        return arg_err("min_max_slopes: empty input");
    }
    let mut prefix = Vec::with_capacity(p + 1);
    prefix.push(0.0);
    for xi in x {
        prefix.push(prefix.last().copied().unwrap_or(0.0) + xi);
    }
    let mut tau = vec![f64::INFINITY; p];
    let mut suffix_max = vec![0.0; p];
    for h in 0..p {
        // suffix_max[i] = max_{j >= i} mean(x_h..=x_j) for i >= h
        let mut best = f64::NEG_INFINITY;
        for j in (h..p).rev() {
            let avg = (prefix[j + 1] - prefix[h]) / (j + 1 - h) as f64;
            best = best.max(avg);
            suffix_max[j] = best;
        }
        for i in h..p {
            tau[i] = tau[i].min(suffix_max[i]);
        }
    }
    Ok(tau.into_iter().map(|t| t.max(0.0)).collect())
}

/// Variance profile from squared observations: slopes of the least concave
/// majorant of the CUSUM of `x_squared - lambda`, clamped at zero.
pub fn lcm_cusum_tau(x_squared: &[f64], lambda: f64) -> Result<VarianceProfile> {
    if !(lambda >= 0.0) {
        return arg_err(format!("lcm_cusum_tau: lambda must be >= 0, got {lambda}"));
    }
    let centered: Vec<f64> = x_squared.iter().map(|x| x - lambda).collect();
    let v = min_max_slopes(&centered)?;
    Ok(VarianceProfile { v, cap: None })
}
