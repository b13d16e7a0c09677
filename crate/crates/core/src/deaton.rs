//! Order-restricted empirical Bayes polynomial regression.
//!
//! Coefficients are fitted in a polynomial basis that is orthonormal under the
//! empirical distribution of the design points, so `theta_hat = Q' y` and each
//! `theta_hat_j ~ N(theta_j, sigma2)`. Prior precisions `kappa_j` are estimated
//! by marginal likelihood under `kappa_1 <= ... <= kappa_m <= kappa_{m+1}`,
//! where `kappa_{m+1} = 1 / sigma2`, and coefficients are shrunk by
//! `z_j = kappa_j sigma2`.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::isotonic::{pava, Cone};

/// Polynomials `psi_0, ..., psi_{m-1}` orthonormal on the design points,
/// generated by the three-term (Stieltjes) recurrence on standardized `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthoBasis {
    pub design_points: Vec<f64>,
    pub degree: usize,
    /// Columns of `Q`: `q[j][i] = psi_j(x_i)`.
    pub q: Vec<Vec<f64>>,
    shift: f64,
    scale: f64,
    alpha: Vec<f64>,
    /// `norms[j]` normalizes the `j`-th recurrence step; `norms[0] = sqrt(n)`.
    norms: Vec<f64>,
}

impl OrthoBasis {
    pub fn n(&self) -> usize {
        self.design_points.len()
    }

    /// Evaluate all `m` basis polynomials at new points; returns columns.
    pub fn eval(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let u: Vec<f64> = x.iter().map(|v| (v - self.shift) / self.scale).collect();
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(self.degree);
        cols.push(vec![1.0 / self.norms[0]; x.len()]);
        for j in 1..self.degree {
            let col = (0..x.len())
                .map(|i| {
                    let prev2 = if j >= 2 { self.norms[j - 1] * cols[j - 2][i] } else { 0.0 };
                    ((u[i] - self.alpha[j - 1]) * cols[j - 1][i] - prev2) / self.norms[j]
                })
                .collect();
            cols.push(col);
        }
        cols
    }

    /// `Q theta`.
    pub fn combine(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.n()).map(|i| self.q.iter().zip(theta).map(|(c, t)| c[i] * t).sum()).collect()
    }
}

/// Empirically orthonormal basis with `m` columns (degrees `0..m`).
pub fn build_basis(x: &[f64], m: usize) -> Result<OrthoBasis> {
    let n = x.len();
    if m == 0 {
        return arg_err("basis needs m >= 1 columns");
    }
    if n <= m {
        return Err(Error::Rank(format!("need more points than columns, got n={n} m={m}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return arg_err("design points must be finite");
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() < m + 1 {
        return Err(Error::Rank(format!("{} distinct design points, need at least {}", sorted.len(), m + 1)));
    }
    let shift = x.iter().sum::<f64>() / n as f64;
    let half_range = 0.5 * (sorted[sorted.len() - 1] - sorted[0]);
    let scale = if half_range > 0.0 { half_range } else { 1.0 };
    let u: Vec<f64> = x.iter().map(|v| (v - shift) / scale).collect();

    let mut q: Vec<Vec<f64>> = vec![vec![1.0 / (n as f64).sqrt(); n]];
    let mut alpha = Vec::with_capacity(m);
    let mut norms = vec![(n as f64).sqrt()];
    for j in 1..m {
        let a: f64 = u.iter().zip(&q[j - 1]).map(|(ui, p)| ui * p * p).sum();
        let mut next: Vec<f64> = (0..n)
            .map(|i| {
                let prev2 = if j >= 2 { norms[j - 1] * q[j - 2][i] } else { 0.0 };
                (u[i] - a) * q[j - 1][i] - prev2
            })
            .collect();
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 1e-12 * (n as f64).sqrt()) {
            return Err(Error::Rank(format!("basis column {j} degenerates")));
        }
        next.iter_mut().for_each(|v| *v /= norm);
        alpha.push(a);
        norms.push(norm);
        q.push(next);
    }
    Ok(OrthoBasis {
        design_points: x.to_vec(),
        degree: m,
        q,
        shift,
        scale,
        alpha,
        norms,
    })
}

/// How the order-restricted precisions are obtained from the unconstrained ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IsoMethod {
    /// Exact maximizer of the log-likelihood under the order restriction:
    /// weighted antitonic regression of `1 / kappa_hat` with weights
    /// `gamma_j - 1/2` (and `n_bar / 2` for the noise precision).
    #[default]
    RestrictedMle,
    /// Unweighted isotonic regression of `kappa_hat` itself.
    PlainPava,
}

/// Noise variance used in `z_j = kappa_j sigma2`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaChoice {
    /// `1 / kappa_iso_{m+1}`.
    #[default]
    Isotonic,
    /// `1 / kappa_hat_{m+1} = W / n_bar`.
    Raw,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeatonOptions {
    /// Prior degrees of freedom, one per coefficient (a single value is recycled).
    pub gamma: Vec<f64>,
    pub beta_prior: f64,
    /// Used in the default `n_bar = n - m + 2 gamma_sigma`.
    pub gamma_sigma: f64,
    pub n_bar: Option<f64>,
    pub sigma: SigmaChoice,
    pub method: IsoMethod,
}

impl Default for DeatonOptions {
    fn default() -> Self {
        Self {
            gamma: vec![2.0],
            beta_prior: 5.0,
            gamma_sigma: 2.0,
            n_bar: None,
            sigma: SigmaChoice::Isotonic,
            method: IsoMethod::RestrictedMle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeatonFit {
    pub theta_hat: Vec<f64>,
    /// `(2 gamma_j - 1) / theta_hat_j^2`; infinite when `theta_hat_j = 0`.
    pub kappa_unconstrained: Vec<f64>,
    /// `n_bar / W`.
    pub kappa_last: f64,
    pub kappa_iso: Vec<f64>,
    pub kappa_iso_last: f64,
    pub z_hat: Vec<f64>,
    pub theta_shrunk: Vec<f64>,
    pub sigma2_hat: f64,
    pub gamma: Vec<f64>,
    pub beta_prior: f64,
    pub n_bar: f64,
    pub rss: f64,
    pub w_last: f64,
    /// `Q theta_shrunk` at the design points.
    pub fitted: Vec<f64>,
    pub basis: OrthoBasis,
}

fn expand_gamma(gamma: &[f64], m: usize) -> Result<Vec<f64>> {
    let g = match gamma.len() {
        1 => vec![gamma[0]; m],
        k if k == m => gamma.to_vec(),
        k => return arg_err(format!("{k} prior degrees of freedom for {m} coefficients")),
    };
    if g.iter().any(|&v| !(v > 0.5) || !v.is_finite()) {
        return arg_err("prior degrees of freedom must exceed 1/2");
    }
    Ok(g)
}

/// Nondecreasing unweighted pooling that tolerates `+inf` (an infinite value
/// pools with everything after it into an infinite block).
fn nondecreasing_pool(x: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for &v in x {
        let mut cur = (v, 1usize);
        while let Some(&(top, cnt)) = blocks.last() {
            if top > cur.0 {
                blocks.pop();
                let total = cnt + cur.1;
                let mean = if top.is_infinite() || cur.0.is_infinite() {
                    f64::INFINITY
                } else {
                    (top * cnt as f64 + cur.0 * cur.1 as f64) / total as f64
                };
                cur = (mean, total);
            } else {
                break;
            }
        }
        blocks.push(cur);
    }
    blocks.into_iter().flat_map(|(v, c)| std::iter::repeat_n(v, c)).collect()
}

/// Order-restricted precision estimates for `kappa_1 <= ... <= kappa_{m+1}`.
/// Returns `(kappa_iso[..m], kappa_iso_last)`.
pub fn restrict_kappa(theta_hat: &[f64], gamma: &[f64], w_last: f64, n_bar: f64, method: IsoMethod) -> Result<(Vec<f64>, f64)> {
    let m = theta_hat.len();
    let gamma = expand_gamma(gamma, m)?;
    if !(w_last > 0.0) || !(n_bar > 0.0) {
        return arg_err(format!("need W > 0 and n_bar > 0, got W={w_last} n_bar={n_bar}"));
    }
    let mut out = match method {
        IsoMethod::RestrictedMle => {
            // Block maximizer of sum a_j log k - k b_j / 2 is 2 sum a / sum b,
            // so pooling psi = b / (2a) with weights a is exact.
            let mut psi: Vec<f64> = theta_hat.iter().zip(&gamma).map(|(t, g)| t * t / (2.0 * g - 1.0)).collect();
            psi.push(w_last / n_bar);
            let mut w: Vec<f64> = gamma.iter().map(|g| g - 0.5).collect();
            w.push(n_bar / 2.0);
            pava(&psi, &w, Cone::Nonincreasing)?
                .values
                .into_iter()
                .map(|v| if v > 0.0 { 1.0 / v } else { f64::INFINITY })
                .collect::<Vec<f64>>()
        }
        IsoMethod::PlainPava => {
            let mut k: Vec<f64> = theta_hat
                .iter()
                .zip(&gamma)
                .map(|(t, g)| if *t == 0.0 { f64::INFINITY } else { (2.0 * g - 1.0) / (t * t) })
                .collect();
            k.push(n_bar / w_last);
            nondecreasing_pool(&k)
        }
    };
    let last = out.pop().expect("m + 1 entries");
    Ok((out, last))
}

/// Full procedure: basis, OLS, unconstrained and restricted precisions,
/// shrinkage factors and the shrunk curve.
pub fn deaton_fit(x: &[f64], y: &[f64], m: usize, opts: &DeatonOptions) -> Result<DeatonFit> {
    if x.len() != y.len() {
        return arg_err(format!("{} design points but {} responses", x.len(), y.len()));
    }
    if !(opts.beta_prior > 0.0) {
        return arg_err(format!("beta must be positive, got {}", opts.beta_prior));
    }
    let basis = build_basis(x, m)?;
    let n = x.len();
    let gamma = expand_gamma(&opts.gamma, m)?;
    let theta_hat: Vec<f64> = basis.q.iter().map(|c| c.iter().zip(y).map(|(a, b)| a * b).sum()).collect();
    let ols = basis.combine(&theta_hat);
    let rss: f64 = y.iter().zip(&ols).map(|(a, b)| (a - b) * (a - b)).sum();
    let w_last = rss + 2.0 / opts.beta_prior;
    let n_bar = opts.n_bar.unwrap_or(n as f64 - m as f64 + 2.0 * opts.gamma_sigma);
    if !(n_bar > 0.0) {
        return arg_err(format!("n_bar must be positive, got {n_bar}"));
    }
    let kappa_unconstrained: Vec<f64> = theta_hat
        .iter()
        .zip(&gamma)
        .map(|(t, g)| if *t == 0.0 { f64::INFINITY } else { (2.0 * g - 1.0) / (t * t) })
        .collect();
    let kappa_last = n_bar / w_last;
    let (kappa_iso, kappa_iso_last) = restrict_kappa(&theta_hat, &gamma, w_last, n_bar, opts.method)?;
    let sigma2_hat = match opts.sigma {
        // Plain pooling can push an infinite precision into the noise slot;
        // the raw estimate is used then.
        SigmaChoice::Isotonic if kappa_iso_last.is_infinite() => 1.0 / kappa_last,
        SigmaChoice::Isotonic => 1.0 / kappa_iso_last,
        SigmaChoice::Raw => 1.0 / kappa_last,
        SigmaChoice::Fixed(s) => {
            if !(s > 0.0) {
                return arg_err(format!("sigma2 must be positive, got {s}"));
            }
            s
        }
    };
    let z_hat: Vec<f64> = kappa_iso
        .iter()
        .map(|k| if k.is_infinite() { 1.0 } else { (k * sigma2_hat).clamp(0.0, 1.0) })
        .collect();
    let theta_shrunk: Vec<f64> = theta_hat.iter().zip(&z_hat).map(|(t, z)| (1.0 - z) * t).collect();
    let fitted = basis.combine(&theta_shrunk);
    Ok(DeatonFit {
        theta_hat,
        kappa_unconstrained,
        kappa_last,
        kappa_iso,
        kappa_iso_last,
        z_hat,
        theta_shrunk,
        sigma2_hat,
        gamma,
        beta_prior: opts.beta_prior,
        n_bar,
        rss,
        w_last,
        fitted,
        basis,
    })
}

/// Marginal log-likelihood of `(kappa_1..kappa_m, kappa_{m+1})`, up to a constant.
pub fn deaton_loglik(kappa: &[f64], kappa_last: f64, theta_hat: &[f64], w_last: f64, gamma: &[f64], n_bar: f64) -> Result<f64> {
    if kappa.len() != theta_hat.len() {
        return arg_err(format!("{} precisions for {} coefficients", kappa.len(), theta_hat.len()));
    }
    if kappa.iter().chain(std::iter::once(&kappa_last)).any(|&k| !(k > 0.0) || !k.is_finite()) {
        return Err(Error::Domain("precisions must be positive and finite".into()));
    }
    let gamma = expand_gamma(gamma, kappa.len())?;
    let head: f64 = kappa
        .iter()
        .zip(theta_hat)
        .zip(&gamma)
        .map(|((k, t), g)| (g - 0.5) * k.ln() - 0.5 * k * t * t)
        .sum();
    Ok(0.5 * n_bar * kappa_last.ln() - 0.5 * kappa_last * w_last + head)
}
