//! Cross-fit isotonic empirical Bayes: Gaussian cloning, pilot binning on a
//! dyadic grid, weighted isotonic variance-profile estimation, truncation and
//! posterior-mean shrinkage. Also the unknown-variance variant that estimates
//! the noise level from tail coordinates.
//!
//! Pipeline used by [`crossfit_estimate`], with `lambda = sigma2 / n`:
//!
//! 1. Clone: `Y+ = Y + Z`, `Y- = Y - Z`, `Z ~ N(0, lambda)`. Both clones are
//!    `N(theta, 2 lambda)` and independent.
//! 2. Split `Y+` again with `Z' ~ N(0, 2 lambda)` into folds `Y+ + Z'` and
//!    `Y+ - Z'`, independent and `N(theta, 4 lambda)`. So `nu = 4 lambda`.
//! 3. Proxies `X = fold^2 - nu`, unbiased for `V = theta^2`.
//! 4. Pilot bins from fold 1, weighted isotonic fit on fold 2, cap at `R`.
//! 5. Shrink `Y-` with `V / (V + 2 lambda)`.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::isotonic::{pava, pava_unit, Cone};
use crate::seq_core::{gaussian_vec, SequenceProblem, VarianceProfile};
use crate::shrinkage::eb_global_tau2;

/// Normalization of the cloned pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CloneVariant {
    /// `y +/- z`: clones centred at `theta` with variance `2 lambda`.
    Additive,
    /// `(y +/- z) / sqrt(2)`: clones with variance `lambda`, centred at
    /// `theta / sqrt(2)`. Multiplying by `sqrt(2)` recovers the additive pair.
    #[default]
    Scaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClonePair {
    pub y_plus: Vec<f64>,
    pub y_minus: Vec<f64>,
    pub clone_noise_var: f64,
    pub variant: CloneVariant,
}

impl ClonePair {
    /// The pair on the `theta` scale (`N(theta, 2 lambda)` clones) and their
    /// noise variance.
    pub fn theta_scale(&self) -> (Vec<f64>, Vec<f64>, f64) {
        match self.variant {
            CloneVariant::Additive => (self.y_plus.clone(), self.y_minus.clone(), self.clone_noise_var),
            CloneVariant::Scaled => {
                let r = std::f64::consts::SQRT_2;
                (
                    self.y_plus.iter().map(|v| v * r).collect(),
                    self.y_minus.iter().map(|v| v * r).collect(),
                    2.0 * self.clone_noise_var,
                )
            }
        }
    }
}

/// Clone `y` with a supplied auxiliary draw `z ~ N(0, lambda)`.
pub fn clone_split_with(y: &[f64], z: &[f64], lambda: f64, variant: CloneVariant) -> Result<ClonePair> {
    if y.len() != z.len() {
        return arg_err(format!("clone: {} observations but {} auxiliary draws", y.len(), z.len()));
    }
    let (scale, var) = match variant {
        CloneVariant::Additive => (1.0, 2.0 * lambda),
        CloneVariant::Scaled => (std::f64::consts::FRAC_1_SQRT_2, lambda),
    };
    Ok(ClonePair {
        y_plus: y.iter().zip(z).map(|(a, b)| (a + b) * scale).collect(),
        y_minus: y.iter().zip(z).map(|(a, b)| (a - b) * scale).collect(),
        clone_noise_var: var,
        variant,
    })
}

/// Clone with a fresh `Z ~ N(0, lambda)` drawn from `rng`.
pub fn clone_split<R: Rng + ?Sized>(problem: &SequenceProblem, rng: &mut R, variant: CloneVariant) -> ClonePair {
    let z = gaussian_vec(rng, problem.len(), problem.noise_var);
    clone_split_with(&problem.y, &z, problem.noise_var, variant).expect("lengths agree")
}

/// Dyadic grid `t_m = 2^m nu` and the contiguous bins of a capped pilot fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadicBinning {
    pub nu: f64,
    #[serde(rename = "R")]
    pub cap: f64,
    #[serde(rename = "M")]
    pub m_count: usize,
    /// `t_0, ..., t_M`.
    pub thresholds: Vec<f64>,
    /// `bins[m]` holds the (possibly empty) index range of bin `I_m`.
    pub bins: Vec<Range<usize>>,
    /// Bin index of each coordinate.
    pub bin_of: Vec<usize>,
    pub weights: Vec<f64>,
    /// Pilot fit after capping at `R`.
    pub pilot: Vec<f64>,
}

impl DyadicBinning {
    pub fn len(&self) -> usize {
        self.bin_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bin_of.is_empty()
    }
}

/// `M = 1 + ceil(log2(1 + R / nu))`, evaluated with exact powers of two.
pub fn dyadic_levels(nu: f64, cap: f64) -> usize {
    let target = 1.0 + cap / nu;
    let mut k = 0usize;
    let mut pow = 1.0f64;
    while pow < target {
        pow *= 2.0;
        k += 1;
    }
    1 + k
}

/// Largest `m` in `0..levels` with `t_m <= value`, where `t_m = 2^m nu`.
fn dyadic_index(value: f64, nu: f64, levels: usize) -> usize {
    let mut m = 0;
    let mut t = 2.0 * nu;
    while m + 1 < levels && t <= value {
        m += 1;
        t *= 2.0;
    }
    m
}

/// Unweighted nonnegative isotonic pilot from fold-1 proxies, capped at `R`,
/// binned by `t_m <= pilot_i + nu < t_{m+1}`.
pub fn pilot_bins(x_fold1: &[f64], nu: f64, cap: f64) -> Result<DyadicBinning> {
    if !(nu > 0.0) || !(cap > 0.0) || !nu.is_finite() || !cap.is_finite() {
        return arg_err(format!("binning needs nu > 0 and R > 0, got nu={nu} R={cap}"));
    }
    let pilot = pava_unit(x_fold1, Cone::NonincreasingNonneg)?.values;
    Ok(bins_from_pilot(pilot, nu, cap))
}

/// Bins built directly from a nonincreasing, nonnegative pilot sequence (which
/// is capped at `R` first).
pub fn bins_from_pilot(pilot: Vec<f64>, nu: f64, cap: f64) -> DyadicBinning {
    let m_count = dyadic_levels(nu, cap);
    let thresholds: Vec<f64> = (0..=m_count).map(|m| nu * 2f64.powi(m as i32)).collect();
    let pilot: Vec<f64> = pilot.into_iter().map(|v| v.min(cap)).collect();
    let bin_of: Vec<usize> = pilot.iter().map(|v| dyadic_index(v + nu, nu, m_count)).collect();
    let mut bins = vec![0..0; m_count];
    // Nonincreasing pilot means nonincreasing bin index: scan runs.
    let mut i = 0;
    while i < bin_of.len() {
        let m = bin_of[i];
        let start = i;
        while i < bin_of.len() && bin_of[i] == m {
            i += 1;
        }
        bins[m] = start..i;
    }
    let weights = bin_of.iter().map(|&m| 1.0 / thresholds[m]).collect();
    DyadicBinning {
        nu,
        cap,
        m_count,
        thresholds,
        bins,
        bin_of,
        weights,
        pilot,
    }
}

/// Weighted nonnegative isotonic fit of fold-2 proxies with bin weights
/// `1 / t_m`, truncated at `R`. Returns the raw fit alongside.
pub fn fit_variance_profile_raw(x_fold2: &[f64], bins: &DyadicBinning, cap: f64) -> Result<(Vec<f64>, VarianceProfile)> {
    if x_fold2.len() != bins.len() {
        return arg_err(format!("profile: {} proxies for {} binned coordinates", x_fold2.len(), bins.len()));
    }
    if !(cap >= 0.0) {
        return arg_err(format!("cap must be >= 0, got {cap}"));
    }
    let raw = pava(x_fold2, &bins.weights, Cone::NonincreasingNonneg)?.values;
    let v = raw.iter().map(|r| r.min(cap)).collect();
    Ok((raw, VarianceProfile { v, cap: Some(cap) }))
}

pub fn fit_variance_profile(x_fold2: &[f64], bins: &DyadicBinning, cap: f64) -> Result<VarianceProfile> {
    Ok(fit_variance_profile_raw(x_fold2, bins, cap)?.1)
}

/// Diagonal Gaussian posterior under `theta_i ~ N(0, v_i)`, noise `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EBPosterior {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub lambda: f64,
}

/// `mean_i = v_i / (v_i + lambda) y_i`, `var_i = lambda v_i / (v_i + lambda)`.
/// An infinite `v_i` leaves `y_i` unshrunk with variance `lambda`.
pub fn posterior_shrink(y_apply: &[f64], profile: &VarianceProfile, lambda: f64) -> Result<EBPosterior> {
    if !(lambda > 0.0) {
        return arg_err(format!("lambda must be positive, got {lambda}"));
    }
    if y_apply.len() != profile.len() {
        return arg_err(format!("{} observations for a profile of length {}", y_apply.len(), profile.len()));
    }
    let (mean, var) = y_apply
        .iter()
        .zip(&profile.v)
        .map(|(&y, &v)| {
            if v.is_infinite() {
                (y, lambda)
            } else {
                let g = v / (v + lambda);
                (g * y, lambda * g)
            }
        })
        .unzip();
    Ok(EBPosterior { mean, var, lambda })
}

/// Upper bound `R` for the variance profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cap {
    Known(f64),
    /// Heuristic: the largest fold-1 proxy (at least `nu`).
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossfitConfig {
    pub cap: Cap,
    pub variant: CloneVariant,
}

impl CrossfitConfig {
    pub fn known(cap: f64) -> Self {
        Self {
            cap: Cap::Known(cap),
            variant: CloneVariant::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossfitFit {
    pub posterior: EBPosterior,
    pub binning: DyadicBinning,
    pub profile: VarianceProfile,
    /// Weighted isotonic fit before truncation.
    pub raw_profile: Vec<f64>,
    /// The clone that was shrunk (`N(theta, 2 lambda)`).
    pub apply: Vec<f64>,
    /// Noise variance of each isotonic fold.
    pub nu: f64,
    /// The cap actually used.
    pub cap: f64,
}

/// The full cross-fit estimator; deterministic given the state of `rng`.
pub fn crossfit_estimate<R: Rng + ?Sized>(problem: &SequenceProblem, config: &CrossfitConfig, rng: &mut R) -> Result<CrossfitFit> {
    let lambda = problem.noise_var;
    let p = problem.len();
    let pair = clone_split(problem, rng, config.variant);
    let (plus, minus, clone_var) = pair.theta_scale();
    let z2 = gaussian_vec(rng, p, clone_var);
    let nu = 2.0 * clone_var;
    let x1: Vec<f64> = plus.iter().zip(&z2).map(|(a, b)| (a + b) * (a + b) - nu).collect();
    let x2: Vec<f64> = plus.iter().zip(&z2).map(|(a, b)| (a - b) * (a - b) - nu).collect();
    let cap = match config.cap {
        Cap::Known(r) => {
            if !(r > 0.0) {
                return arg_err(format!("cap R must be positive, got {r}"));
            }
            r
        }
        Cap::Auto => {
            let m = x1.iter().copied().fold(0.0f64, f64::max);
            if m > 0.0 {
                m
            } else {
                nu
            }
        }
    };
    let binning = pilot_bins(&x1, nu, cap)?;
    let (raw_profile, profile) = fit_variance_profile_raw(&x2, &binning, cap)?;
    let posterior = posterior_shrink(&minus, &profile, 2.0 * lambda)?;
    Ok(CrossfitFit {
        posterior,
        binning,
        profile,
        raw_profile,
        apply: minus,
        nu,
        cap,
    })
}

/// `t_m <= V_i + nu < t_{m+1}` for every coordinate and its assigned bin.
pub fn b1_holds(bins: &DyadicBinning, truth: &VarianceProfile, nu: f64) -> bool {
    truth.len() == bins.len()
        && truth.v.iter().zip(&bins.bin_of).all(|(v, &m)| {
            let level = v + nu;
            bins.thresholds[m] <= level && level < bins.thresholds[m + 1]
        })
}

/// Dyadic margin: `(1 + kappa) t_m <= V_i + nu <= (1 - kappa) t_{m+1}` where
/// `m` is the true dyadic index of `V_i + nu`.
pub fn margin_holds(truth: &VarianceProfile, nu: f64, kappa: f64) -> Result<bool> {
    if !(kappa > 0.0 && kappa < 0.25) {
        return arg_err(format!("margin kappa must lie in (0, 1/4), got {kappa}"));
    }
    if !(nu > 0.0) {
        return arg_err(format!("nu must be positive, got {nu}"));
    }
    Ok(truth.v.iter().all(|v| {
        let level = v + nu;
        let m = dyadic_index(level, nu, usize::MAX);
        let t = nu * 2f64.powi(m as i32);
        (1.0 + kappa) * t <= level && level <= (1.0 - kappa) * 2.0 * t
    }))
}

/// Tail estimate `sigma2_hat = n / (p - s) sum_{i > s} y_i^2` and
/// `lambda_hat = sigma2_hat / n`.
pub fn tail_sigma2(y: &[f64], s: usize, n_effective: f64) -> Result<(f64, f64)> {
    let p = y.len();
    if s == 0 || s >= p {
        return arg_err(format!("tail estimate needs 1 <= s < p, got s={s} p={p}"));
    }
    if !(n_effective > 0.0) {
        return arg_err(format!("n must be positive, got {n_effective}"));
    }
    let tail: f64 = y[s..].iter().map(|v| v * v).sum();
    let lambda_hat = tail / (p - s) as f64;
    Ok((lambda_hat * n_effective, lambda_hat))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnknownSigmaFit {
    pub posterior: EBPosterior,
    /// Cross-fitted `(V_hat)_+`, zero beyond `s`.
    pub profile: Vec<f64>,
    pub sigma2_hat: f64,
    pub lambda_hat: f64,
    pub s: usize,
}

/// Isotonic fit over the fold indices, extended to every head index by taking
/// the value of the nearest fold index on the left (on the right before the
/// first fold index). Any monotone extension has the same fold-restricted loss.
pub fn fold_fit(x: &[f64], fold: &[usize], len: usize) -> Result<Vec<f64>> {
    let sub: Vec<f64> = fold.iter().map(|&i| x[i]).collect();
    let fitted = pava_unit(&sub, Cone::Nonincreasing)?.values;
    let mut out = vec![0.0; len];
    let mut k = 0;
    for (i, o) in out.iter_mut().enumerate() {
        while k + 1 < fold.len() && fold[k + 1] <= i {
            k += 1;
        }
        *o = fitted[k];
    }
    Ok(out)
}

/// Unknown-noise cross-fit: `lambda_hat` from the tail, head proxies
/// `y_i^2 - lambda_hat`, odd/even folds, each fold shrunk with the isotonic
/// profile fitted on the other one, zero estimate beyond `s`.
///
/// With `s = 1` the opposite fold is empty; the single head coordinate then
/// uses the global EB rule, `V_hat = (y_1^2 - lambda_hat)_+`.
pub fn crossfit_unknown_sigma(problem: &SequenceProblem, s: usize) -> Result<UnknownSigmaFit> {
    let y = &problem.y;
    let p = y.len();
    let (sigma2_hat, lambda_hat) = tail_sigma2(y, s, problem.n_effective)?;
    let x: Vec<f64> = y[..s].iter().map(|v| v * v - lambda_hat).collect();
    let mut profile = vec![0.0; p];
    if s == 1 {
        profile[0] = if lambda_hat > 0.0 {
            eb_global_tau2(&y[..1], lambda_hat)?.tau2 * lambda_hat
        } else {
            y[0] * y[0]
        };
    } else {
        let odd: Vec<usize> = (0..s).step_by(2).collect();
        let even: Vec<usize> = (1..s).step_by(2).collect();
        let from_even = fold_fit(&x, &even, s)?;
        let from_odd = fold_fit(&x, &odd, s)?;
        for i in 0..s {
            let v = if i % 2 == 0 { from_even[i] } else { from_odd[i] };
            profile[i] = v.max(0.0);
        }
    }
    let (mean, var) = y
        .iter()
        .zip(&profile)
        .enumerate()
        .map(|(i, (&yi, &v))| {
            if i >= s {
                (0.0, 0.0)
            } else if lambda_hat > 0.0 {
                let g = v / (v + lambda_hat);
                (g * yi, lambda_hat * g)
            } else if v > 0.0 {
                (yi, 0.0)
            } else {
                (0.0, 0.0)
            }
        })
        .unzip();
    Ok(UnknownSigmaFit {
        posterior: EBPosterior { mean, var, lambda: lambda_hat },
        profile,
        sigma2_hat,
        lambda_hat,
        s,
    })
}
