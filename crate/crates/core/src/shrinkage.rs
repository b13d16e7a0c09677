//! Closed-form shrinkage rules: the global EB collapse rule, positive-part
//! Stein, generalized ridge and its adaptive penalties, PCR, g-prior, the
//! classical `W(t)` weight families and effective degrees of freedom.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};

/// Which rule produced a [`ShrinkageFit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    GlobalEb,
    Stein,
    Grr,
    AdaptiveGrr,
    Pcr,
    GPrior,
    GlobalLocal,
    Table1(WeightFamily),
}

/// Coordinatewise multipliers and the resulting estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageFit {
    pub weights: Vec<f64>,
    pub estimate: Vec<f64>,
    pub rule: Rule,
    pub hyper: BTreeMap<String, f64>,
}

impl ShrinkageFit {
    pub fn from_weights(weights: Vec<f64>, input: &[f64], rule: Rule, hyper: BTreeMap<String, f64>) -> Self {
        debug_assert_eq!(weights.len(), input.len());
        let estimate = weights.iter().zip(input).map(|(w, x)| w * x).collect();
        Self {
            weights,
            estimate,
            rule,
            hyper,
        }
    }
}

/// Canonical coordinates of a linear model `X = U D W'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralDesign {
    pub d: Vec<f64>,
    pub alpha_hat: Vec<f64>,
    pub sigma2: f64,
}

impl SpectralDesign {
    pub fn new(d: Vec<f64>, alpha_hat: Vec<f64>, sigma2: f64) -> Result<Self> {
        if d.is_empty() || d.len() != alpha_hat.len() {
            return arg_err(format!("design: {} singular values for {} coefficients", d.len(), alpha_hat.len()));
        }
        if d.iter().any(|&x| !(x > 0.0)) || d.windows(2).any(|w| w[0] < w[1]) {
            return arg_err("design: singular values must be positive and nonincreasing");
        }
        if !(sigma2 > 0.0) {
            return arg_err(format!("design: sigma2 must be positive, got {sigma2}"));
        }
        Ok(Self { d, alpha_hat, sigma2 })
    }

    /// Rotated responses `z_i = d_i alpha_hat_i`.
    pub fn z(&self) -> Vec<f64> {
        self.d.iter().zip(&self.alpha_hat).map(|(d, a)| d * a).collect()
    }
}

/// Global EB scale estimate and whether it collapsed to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalTau2 {
    pub tau2: f64,
    pub collapsed: bool,
}

/// Type-II ML for `theta_i ~ N(0, tau2 sigma2)`: `(|y|^2 / (p sigma2) - 1)_+`.
/// Collapse happens exactly when `|y|^2 <= p sigma2`.
pub fn eb_global_tau2(y: &[f64], sigma2: f64) -> Result<GlobalTau2> {
    if !(sigma2 > 0.0) {
        return arg_err(format!("sigma2 must be positive, got {sigma2}"));
    }
    if y.is_empty() {
        return arg_err("empty observation vector");
    }
    let energy: f64 = y.iter().map(|v| v * v).sum();
    let bench = y.len() as f64 * sigma2;
    if energy <= bench {
        Ok(GlobalTau2 { tau2: 0.0, collapsed: true })
    } else {
        Ok(GlobalTau2 {
            tau2: energy / bench - 1.0,
            collapsed: false,
        })
    }
}

/// Posterior mean under the global EB fit: common weight `tau2 / (1 + tau2)`.
pub fn global_eb(y: &[f64], sigma2: f64) -> Result<ShrinkageFit> {
    let fit = eb_global_tau2(y, sigma2)?;
    let w = fit.tau2 / (1.0 + fit.tau2);
    let hyper = BTreeMap::from([("tau2".to_string(), fit.tau2), ("collapsed".to_string(), f64::from(u8::from(fit.collapsed)))]);
    Ok(ShrinkageFit::from_weights(vec![w; y.len()], y, Rule::GlobalEb, hyper))
}

/// Posterior-mode rule `(1 - kappa) y` with `kappa = min(1, t (p - 2) / |y|^2)`.
/// `t = 1` is the positive-part James-Stein estimator for unit noise.
pub fn stein_positive_part(y: &[f64], t: f64) -> Result<ShrinkageFit> {
    let p = y.len();
    if p < 3 {
        return Err(Error::Domain(format!("positive-part rule needs p >= 3, got {p}")));
    }
    if !(t >= 0.0) {
        return arg_err(format!("t must be nonnegative, got {t}"));
    }
    let energy: f64 = y.iter().map(|v| v * v).sum();
    let kappa = if energy > 0.0 { (t * (p as f64 - 2.0) / energy).min(1.0) } else { 1.0 };
    let hyper = BTreeMap::from([("kappa".to_string(), kappa), ("t".to_string(), t)]);
    Ok(ShrinkageFit::from_weights(vec![1.0 - kappa; p], y, Rule::Stein, hyper))
}

/// Generalized ridge weights `d_i^2 / (d_i^2 + k_i)` applied to `alpha_hat`.
/// An infinite penalty gives weight exactly 0.
pub fn grr_weights(design: &SpectralDesign, k: &[f64]) -> Result<ShrinkageFit> {
    if k.len() != design.d.len() {
        return arg_err(format!("{} penalties for {} components", k.len(), design.d.len()));
    }
    if let Some(i) = k.iter().position(|&x| !(x >= 0.0)) {
        return arg_err(format!("penalty {i} is {} (must be >= 0)", k[i]));
    }
    let weights = design
        .d
        .iter()
        .zip(k)
        .map(|(d, &ki)| if ki.is_infinite() { 0.0 } else { d * d / (d * d + ki) })
        .collect();
    Ok(ShrinkageFit::from_weights(weights, &design.alpha_hat, Rule::Grr, BTreeMap::new()))
}

/// Adaptive ridge penalty for one component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Penalty {
    Finite(f64),
    /// Weak signal: complete shrinkage.
    Infinite,
}

impl Penalty {
    pub fn value(&self) -> f64 {
        match self {
            Penalty::Finite(k) => *k,
            Penalty::Infinite => f64::INFINITY,
        }
    }
}

/// Marginal-ML penalties `k_i = d_i^2 sigma2 / (z_i^2 - sigma2)` when
/// `z_i^2 > sigma2`, otherwise [`Penalty::Infinite`].
pub fn adaptive_penalty(design: &SpectralDesign) -> Vec<Penalty> {
    design
        .z()
        .iter()
        .zip(&design.d)
        .map(|(z, d)| {
            let excess = z * z - design.sigma2;
            if excess > 0.0 {
                Penalty::Finite(d * d * design.sigma2 / excess)
            } else {
                Penalty::Infinite
            }
        })
        .collect()
}

/// GRR with [`adaptive_penalty`].
pub fn adaptive_grr(design: &SpectralDesign) -> Result<ShrinkageFit> {
    let k: Vec<f64> = adaptive_penalty(design).iter().map(Penalty::value).collect();
    let mut fit = grr_weights(design, &k)?;
    fit.rule = Rule::AdaptiveGrr;
    Ok(fit)
}

/// The classical `W(t)` families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightFamily {
    #[serde(rename = "GRN")]
    Grn,
    #[serde(rename = "GRI1")]
    Gri1,
    #[serde(rename = "GRI")]
    Gri,
    #[serde(rename = "GRP")]
    Grp,
    #[serde(rename = "GRC")]
    Grc,
}

impl WeightFamily {
    pub const ALL: [WeightFamily; 5] = [WeightFamily::Grn, WeightFamily::Gri1, WeightFamily::Gri, WeightFamily::Grp, WeightFamily::Grc];
}

impl fmt::Display for WeightFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightFamily::Grn => "GRN",
            WeightFamily::Gri1 => "GRI1",
            WeightFamily::Gri => "GRI",
            WeightFamily::Grp => "GRP",
            WeightFamily::Grc => "GRC",
        })
    }
}

impl FromStr for WeightFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "GRN" => Ok(WeightFamily::Grn),
            "GRI1" => Ok(WeightFamily::Gri1),
            "GRI" => Ok(WeightFamily::Gri),
            "GRP" => Ok(WeightFamily::Grp),
            "GRC" => Ok(WeightFamily::Grc),
            other => arg_err(format!("unknown weight family {other:?}")),
        }
    }
}

/// `W(t)` for the given family. Thresholds are strict, so `t^2` exactly at a
/// threshold takes the zero branch.
///
/// GRI is evaluated as printed in its usual table form,
/// `[(1 - sqrt(1 - 4/t^2)) / 2 * t^2]^{-1}` for `t^2 > 4`. Read with that
/// bracket scope it rises from 1/2 (as `t^2 -> 4`) to 1.
pub fn weight_family(t: f64, family: WeightFamily) -> f64 {
    weight_family_t2(t * t, family)
}

/// [`weight_family`] parameterized by `t^2`, so thresholds can be hit exactly.
pub fn weight_family_t2(t2: f64, family: WeightFamily) -> f64 {
    match family {
        WeightFamily::Grn => t2 / (1.0 + t2),
        WeightFamily::Gri1 => {
            if t2 == 0.0 {
                return 0.0;
            }
            let a = 1.0 + 1.0 / t2;
            1.0 / (1.0 + a * a / t2)
        }
        WeightFamily::Gri => {
            if t2 > 4.0 {
                1.0 / ((1.0 - (1.0 - 4.0 / t2).sqrt()) / 2.0 * t2)
            } else {
                0.0
            }
        }
        WeightFamily::Grp => {
            if t2 > 2.0 {
                1.0
            } else {
                0.0
            }
        }
        WeightFamily::Grc => {
            if t2 > 1.0 {
                1.0 - 1.0 / t2
            } else {
                0.0
            }
        }
    }
}

/// Apply `W(z_i / sigma)` to each input coordinate.
pub fn table1_fit(z: &[f64], sigma2: f64, family: WeightFamily) -> Result<ShrinkageFit> {
    if !(sigma2 > 0.0) {
        return arg_err(format!("sigma2 must be positive, got {sigma2}"));
    }
    let sd = sigma2.sqrt();
    let weights = z.iter().map(|zi| weight_family(zi / sd, family)).collect();
    Ok(ShrinkageFit::from_weights(weights, z, Rule::Table1(family), BTreeMap::new()))
}

/// `K`-component PCR: keep every component with `d_j^2 >= d_K^2`.
pub fn pcr_weights(design: &SpectralDesign, k: usize) -> Result<ShrinkageFit> {
    let r = design.d.len();
    if k == 0 || k > r {
        return arg_err(format!("PCR needs 1 <= K <= {r}, got {k}"));
    }
    let dk2 = design.d[k - 1] * design.d[k - 1];
    let weights = design.d.iter().map(|d| if d * d >= dk2 { 1.0 } else { 0.0 }).collect();
    let hyper = BTreeMap::from([("K".to_string(), k as f64)]);
    Ok(ShrinkageFit::from_weights(weights, &design.alpha_hat, Rule::Pcr, hyper))
}

/// Common g-prior multiplier `g / (1 + g)`; `g = inf` gives 1.
pub fn g_prior_weight(g: f64) -> Result<f64> {
    if !(g >= 0.0) {
        return arg_err(format!("g must be >= 0, got {g}"));
    }
    Ok(if g.is_infinite() { 1.0 } else { g / (1.0 + g) })
}

pub fn g_prior_fit(input: &[f64], g: f64) -> Result<ShrinkageFit> {
    let w = g_prior_weight(g)?;
    let hyper = BTreeMap::from([("g".to_string(), g)]);
    Ok(ShrinkageFit::from_weights(vec![w; input.len()], input, Rule::GPrior, hyper))
}

/// Global-local multipliers `tau2 l_j d_j^2 / (1 + tau2 l_j d_j^2)` where
/// `l_j` are the squared local scales.
pub fn global_local_weights(tau2: f64, local2: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    if local2.len() != d.len() {
        return arg_err(format!("{} local scales for {} components", local2.len(), d.len()));
    }
    if !(tau2 >= 0.0) || local2.iter().any(|&l| !(l >= 0.0)) {
        return arg_err("global and local scales must be nonnegative");
    }
    Ok(local2
        .iter()
        .zip(d)
        .map(|(l, dj)| {
            let a = tau2 * l * dj * dj;
            if a.is_infinite() {
                1.0
            } else {
                a / (1.0 + a)
            }
        })
        .collect())
}

/// Effective number of parameters `k - sum_a tau_w2 / (lambda_a + tau_w2)`.
pub fn effective_dof(eigenvalues: &[f64], tau_w2: f64) -> Result<f64> {
    if eigenvalues.iter().any(|&l| !(l > 0.0)) || !(tau_w2 > 0.0) {
        return arg_err("eigenvalues and tau_w2 must be positive");
    }
    let k = eigenvalues.len() as f64;
    let shrunk: f64 = eigenvalues.iter().map(|l| if tau_w2.is_infinite() { 1.0 } else { tau_w2 / (l + tau_w2) }).sum();
    Ok((k - shrunk).clamp(0.0, k))
}
