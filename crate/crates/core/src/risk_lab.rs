//! Monte Carlo risk laboratory.
//!
//! Every replicate runs on its own `(seed, replicate)` stream. Replicates are
//! distributed with rayon, collected in replicate order and reduced by
//! pairwise summation, so reports are bit-reproducible for a given config.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crossfit::{b1_holds, crossfit_estimate, crossfit_unknown_sigma, margin_holds, Cap, CloneVariant, CrossfitConfig};
use crate::error::{arg_err, Error, Result};
use crate::seq_core::{gaussian_vec, simulate, OrderedSparseClass, RngStream, SequenceProblem, SobolevEllipsoid, SparseProfile, VarianceProfile};
use crate::shrinkage::{eb_global_tau2, stein_positive_part};
use crate::stats::{chi2_cdf, linear_fit, normal_cdf, pairwise_sum, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Crossfit,
    CrossfitUnknownSigma,
    /// `V / (V + 2 lambda)` applied to an independent clone, with the true `V`.
    Oracle,
    GlobalEb,
    /// Positive-part Stein (`t = 1`) on the standardized observations.
    Stein,
    Zero,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [
        Estimator::Crossfit,
        Estimator::CrossfitUnknownSigma,
        Estimator::Oracle,
        Estimator::GlobalEb,
        Estimator::Stein,
        Estimator::Zero,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Crossfit => "crossfit",
            Estimator::CrossfitUnknownSigma => "crossfit-unknown-sigma",
            Estimator::Oracle => "oracle",
            Estimator::GlobalEb => "global-eb",
            Estimator::Stein => "stein",
            Estimator::Zero => "zero",
        }
    }

    /// Stable tag for the estimator's auxiliary random stream.
    fn stream_tag(&self) -> u64 {
        match self {
            Estimator::Crossfit => 1,
            Estimator::CrossfitUnknownSigma => 2,
            Estimator::Oracle => 3,
            Estimator::GlobalEb => 4,
            Estimator::Stein => 5,
            Estimator::Zero => 6,
        }
    }
}

/// Everything an estimator may use besides the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorContext {
    /// Known bound on `theta_i^2` used as the cross-fit cap.
    pub cap: f64,
    /// Head length for the unknown-variance estimator.
    pub s: usize,
    pub variant: CloneVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub estimate: Vec<f64>,
    /// Global EB only: whether the scale estimate collapsed.
    pub collapsed: Option<bool>,
    /// Cross-fit only: whether the pilot bins violated B1 for the truth.
    pub b1_failed: Option<bool>,
}

/// Run one estimator on one problem. `truth` is used by the oracle and for the
/// B1 diagnostic only.
pub fn apply_estimator<R: Rng + ?Sized>(est: Estimator, prob: &SequenceProblem, truth: &[f64], ctx: &EstimatorContext, rng: &mut R) -> Result<Outcome> {
    let lambda = prob.noise_var;
    let plain = |estimate| Outcome {
        estimate,
        collapsed: None,
        b1_failed: None,
    };
    match est {
        Estimator::Zero => Ok(plain(vec![0.0; prob.len()])),
        Estimator::Oracle => {
            let z = gaussian_vec(rng, prob.len(), lambda);
            Ok(plain(
                prob.y
                    .iter()
                    .zip(&z)
                    .zip(truth)
                    .map(|((y, z), t)| {
                        let v = t * t;
                        v / (v + 2.0 * lambda) * (y - z)
                    })
                    .collect(),
            ))
        }
        Estimator::GlobalEb => {
            let fit = eb_global_tau2(&prob.y, lambda)?;
            let w = fit.tau2 / (1.0 + fit.tau2);
            Ok(Outcome {
                estimate: prob.y.iter().map(|y| w * y).collect(),
                collapsed: Some(fit.collapsed),
                b1_failed: None,
            })
        }
        Estimator::Stein => {
            let sd = lambda.sqrt();
            let standardized: Vec<f64> = prob.y.iter().map(|y| y / sd).collect();
            let fit = stein_positive_part(&standardized, 1.0)?;
            Ok(plain(prob.y.iter().zip(&fit.weights).map(|(y, w)| w * y).collect()))
        }
        Estimator::Crossfit => {
            let cfg = CrossfitConfig {
                cap: Cap::Known(ctx.cap),
                variant: ctx.variant,
            };
            let fit = crossfit_estimate(prob, &cfg, rng)?;
            let truth_profile = VarianceProfile {
                v: truth.iter().map(|t| t * t).collect(),
                cap: None,
            };
            let b1 = b1_holds(&fit.binning, &truth_profile, fit.nu);
            Ok(Outcome {
                estimate: fit.posterior.mean,
                collapsed: None,
                b1_failed: Some(!b1),
            })
        }
        Estimator::CrossfitUnknownSigma => Ok(plain(crossfit_unknown_sigma(prob, ctx.s)?.posterior.mean)),
    }
}

pub fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub s: usize,
    pub p: usize,
    #[serde(rename = "R")]
    pub r: f64,
    pub sigma2: f64,
    pub n: f64,
}

impl Cell {
    pub fn lambda(&self) -> f64 {
        self.sigma2 / self.n
    }

    /// `s lambda log(e p / s) log(1 + R n / sigma2)`.
    pub fn bound_shape(&self) -> f64 {
        let s = self.s as f64;
        let lambda = self.lambda();
        s * lambda * (std::f64::consts::E * self.p as f64 / s).ln() * (1.0 + self.r / lambda).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClassSpec {
    /// Ordered sparse class; truths are the listed adversarial profiles.
    Sparse { profiles: Vec<SparseProfile> },
    /// Sobolev ellipsoid of smoothness `beta`; the truth is the boundary
    /// envelope, `R` is the ellipsoid radius and `s` is replaced by the
    /// truncation level.
    Sobolev { beta: f64 },
}

fn default_bound_constant() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub class: ClassSpec,
    pub estimators: Vec<Estimator>,
    pub replicates: usize,
    pub seed: u64,
    pub sweep: Vec<Cell>,
    #[serde(default)]
    pub variant: CloneVariant,
    #[serde(default = "default_bound_constant")]
    pub bound_constant: f64,
    /// Margin parameter for the per-truth margin diagnostic.
    #[serde(default)]
    pub margin_kappa: Option<f64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        if self.sweep.is_empty() || self.estimators.is_empty() {
            return Err(Error::Config("sweep and estimator list must be nonempty".into()));
        }
        if !(self.bound_constant > 0.0) {
            return Err(Error::Config("bound constant must be positive".into()));
        }
        for (k, cell) in self.sweep.iter().enumerate() {
            if !(cell.sigma2 > 0.0) || !(cell.n > 0.0) {
                return Err(Error::Config(format!("cell {k}: sigma2 and n must be positive")));
            }
            match &self.class {
                ClassSpec::Sparse { profiles } => {
                    if profiles.is_empty() {
                        return Err(Error::Config("sparse class needs at least one profile".into()));
                    }
                    OrderedSparseClass::new(cell.s, cell.r, cell.p).map_err(|e| Error::Config(format!("cell {k}: {e}")))?;
                    if !(cell.r > 0.0) && self.estimators.contains(&Estimator::Crossfit) {
                        return Err(Error::Config(format!("cell {k}: cross-fit needs R > 0")));
                    }
                }
                ClassSpec::Sobolev { beta } => {
                    SobolevEllipsoid::new(*beta, cell.r, cell.p).map_err(|e| Error::Config(format!("cell {k}: {e}")))?;
                }
            }
            let s = self.effective_s(cell);
            if self.estimators.contains(&Estimator::CrossfitUnknownSigma) && s >= cell.p {
                return Err(Error::Config(format!("cell {k}: unknown-sigma estimator needs s < p")));
            }
            if self.estimators.contains(&Estimator::Stein) && cell.p < 3 {
                return Err(Error::Config(format!("cell {k}: Stein rule needs p >= 3")));
            }
        }
        if let Some(kappa) = self.margin_kappa {
            if !(kappa > 0.0 && kappa < 0.25) {
                return Err(Error::Config(format!("margin kappa must lie in (0, 1/4), got {kappa}")));
            }
        }
        Ok(())
    }

    fn effective_s(&self, cell: &Cell) -> usize {
        match &self.class {
            ClassSpec::Sparse { .. } => cell.s,
            ClassSpec::Sobolev { beta } => SobolevEllipsoid {
                beta: *beta,
                r: cell.r,
                p: cell.p,
            }
            .truncation_level(cell.sigma2, cell.n),
        }
    }

    /// Truths for a cell with their labels.
    fn truths(&self, cell: &Cell) -> Result<Vec<(String, Vec<f64>)>> {
        match &self.class {
            ClassSpec::Sparse { profiles } => {
                let class = OrderedSparseClass::new(cell.s, cell.r, cell.p)?;
                profiles.iter().map(|p| Ok((p.name().to_string(), class.profile(*p)?))).collect()
            }
            ClassSpec::Sobolev { beta } => Ok(vec![("envelope".to_string(), SobolevEllipsoid::new(*beta, cell.r, cell.p)?.envelope())]),
        }
    }

    fn cap(&self, cell: &Cell) -> f64 {
        match &self.class {
            ClassSpec::Sparse { .. } => cell.r,
            ClassSpec::Sobolev { .. } => cell.r * cell.r,
        }
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(bytes))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell_index: usize,
    pub cell: Cell,
    pub truth: String,
    pub estimator: Estimator,
    pub risk: f64,
    pub se: f64,
    /// `C s lambda log(ep/s) log(1 + R n / sigma2)` with the effective `s`.
    pub bound: f64,
    pub ratio: f64,
    /// `sum_i 2 lambda V_i / (V_i + 2 lambda)`.
    pub oracle_risk: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collapse_freq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b1_fail_freq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin_holds: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub config_hash: String,
    pub seed: u64,
    pub replicates: usize,
    pub results: Vec<CellResult>,
}

impl RiskReport {
    /// Largest risk/bound ratio of an estimator over all cells and truths.
    pub fn max_ratio(&self, est: Estimator) -> Option<f64> {
        self.results.iter().filter(|r| r.estimator == est).map(|r| r.ratio).reduce(f64::max)
    }

    /// Supremum proxy: per cell, the worst truth for the estimator.
    pub fn worst_per_cell(&self, est: Estimator) -> Vec<&CellResult> {
        let mut out: Vec<&CellResult> = Vec::new();
        for r in self.results.iter().filter(|r| r.estimator == est) {
            match out.iter_mut().find(|o| o.cell_index == r.cell_index) {
                Some(o) if o.risk < r.risk => *o = r,
                Some(_) => {}
                None => out.push(r),
            }
        }
        out
    }
}

pub fn oracle_risk(truth: &[f64], lambda: f64) -> f64 {
    truth
        .iter()
        .map(|t| {
            let v = t * t;
            2.0 * lambda * v / (v + 2.0 * lambda)
        })
        .sum()
}

/// Replicate-level outputs for every estimator: losses and event flags.
struct ReplicateRow {
    loss: Vec<f64>,
    collapsed: Vec<Option<bool>>,
    b1_failed: Vec<Option<bool>>,
}

fn run_replicates(
    truth: &[f64],
    cell: &Cell,
    estimators: &[Estimator],
    ctx: &EstimatorContext,
    stream: RngStream,
    replicates: usize,
) -> Result<Vec<ReplicateRow>> {
    (0..replicates as u64)
        .into_par_iter()
        .map(|k| {
            let rep = stream.replicate(k);
            let prob = simulate(truth, cell.sigma2, cell.n, &mut rep.rng())?;
            let mut row = ReplicateRow {
                loss: Vec::new(),
                collapsed: Vec::new(),
                b1_failed: Vec::new(),
            };
            for est in estimators {
                let mut aux = rep.child(est.stream_tag()).rng();
                let out = apply_estimator(*est, &prob, truth, ctx, &mut aux)?;
                row.loss.push(squared_error(&out.estimate, truth));
                row.collapsed.push(out.collapsed);
                row.b1_failed.push(out.b1_failed);
            }
            Ok(row)
        })
        .collect()
}

fn frequency(flags: impl Iterator<Item = Option<bool>>) -> Option<f64> {
    let v: Vec<f64> = flags.map(|f| f.map(|b| f64::from(u8::from(b)))).collect::<Option<Vec<f64>>>()?;
    Some(pairwise_sum(&v) / v.len() as f64)
}

/// MC risk for every cell, truth and estimator.
pub fn run_risk(config: &ExperimentConfig) -> Result<RiskReport> {
    config.validate()?;
    let base = RngStream::new(config.seed, 0);
    let mut results = Vec::new();
    for (ci, cell) in config.sweep.iter().enumerate() {
        let s = config.effective_s(cell);
        let ctx = EstimatorContext {
            cap: config.cap(cell),
            s,
            variant: config.variant,
        };
        let bound_cell = Cell { s, ..*cell };
        let bound = config.bound_constant * bound_cell.bound_shape();
        for (ti, (label, truth)) in config.truths(cell)?.into_iter().enumerate() {
            let stream = base.child(((ci as u64) << 20) | ti as u64);
            let rows = run_replicates(&truth, cell, &config.estimators, &ctx, stream, config.replicates)?;
            let margin = match config.margin_kappa {
                Some(kappa) => {
                    let profile = VarianceProfile {
                        v: truth.iter().map(|t| t * t).collect(),
                        cap: None,
                    };
                    Some(margin_holds(&profile, 4.0 * cell.lambda(), kappa)?)
                }
                None => None,
            };
            for (ei, est) in config.estimators.iter().enumerate() {
                let losses: Vec<f64> = rows.iter().map(|r| r.loss[ei]).collect();
                let summary = Summary::of(&losses);
                results.push(CellResult {
                    cell_index: ci,
                    cell: *cell,
                    truth: label.clone(),
                    estimator: *est,
                    risk: summary.mean,
                    se: summary.se,
                    bound,
                    ratio: summary.mean / bound,
                    oracle_risk: oracle_risk(&truth, cell.lambda()),
                    collapse_freq: frequency(rows.iter().map(|r| r.collapsed[ei])),
                    b1_fail_freq: frequency(rows.iter().map(|r| r.b1_failed[ei])),
                    margin_holds: if *est == Estimator::Crossfit { margin } else { None },
                });
            }
        }
    }
    Ok(RiskReport {
        config_hash: config.hash(),
        seed: config.seed,
        replicates: config.replicates,
        results,
    })
}

/// Analytic Assouad bound `Phi(-1)/2 * s * lambda` and its hypercube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssouadBound {
    pub bound: f64,
    /// `lambda <= R`; otherwise the hypercube leaves the class.
    pub applicable: bool,
    /// Hypercube half-width `sqrt(lambda)`.
    pub amplitude: f64,
    pub s: usize,
    pub p: usize,
}

impl AssouadBound {
    /// Vertex `theta_i = +/- sqrt(lambda)` for `i < s` (sign from bit `i`).
    pub fn vertex<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut theta = vec![0.0; self.p];
        for t in theta.iter_mut().take(self.s) {
            *t = if rng.random::<bool>() { self.amplitude } else { -self.amplitude };
        }
        theta
    }
}

pub fn assouad_lower(s: usize, p: usize, lambda: f64, r: f64) -> AssouadBound {
    AssouadBound {
        bound: normal_cdf(-1.0) / 2.0 * s as f64 * lambda,
        applicable: lambda <= r,
        amplitude: lambda.sqrt(),
        s,
        p,
    }
}

/// MC risk of each estimator averaged over uniformly drawn hypercube vertices.
/// Bayes risk under the uniform prior on the vertices is bounded below by the
/// Assouad value, so every estimator's average must clear it.
pub fn assouad_check(
    cell: &Cell,
    estimators: &[Estimator],
    replicates: usize,
    seed: u64,
    variant: CloneVariant,
) -> Result<(AssouadBound, Vec<(Estimator, Summary)>)> {
    let bound = assouad_lower(cell.s, cell.p, cell.lambda(), cell.r);
    if !bound.applicable {
        return Ok((bound, Vec::new()));
    }
    let ctx = EstimatorContext {
        cap: cell.r,
        s: cell.s,
        variant,
    };
    let base = RngStream::new(seed, 0);
    let rows: Vec<Vec<f64>> = (0..replicates as u64)
        .into_par_iter()
        .map(|k| {
            let rep = base.replicate(k);
            let mut rng = rep.rng();
            let truth = bound.vertex(&mut rng);
            let prob = simulate(&truth, cell.sigma2, cell.n, &mut rng)?;
            estimators
                .iter()
                .map(|est| {
                    let out = apply_estimator(*est, &prob, &truth, &ctx, &mut rep.child(est.stream_tag()).rng())?;
                    Ok(squared_error(&out.estimate, &truth))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let summaries = estimators
        .iter()
        .enumerate()
        .map(|(ei, est)| (*est, Summary::of(&rows.iter().map(|r| r[ei]).collect::<Vec<_>>())))
        .collect();
    Ok((bound, summaries))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub p: usize,
    pub replicates: usize,
    pub frequency: f64,
    pub se: f64,
    /// `P(chi2_p <= p)`.
    pub expected: f64,
    /// Replicates where the collapse flag disagreed with `|y|^2 <= p sigma2`.
    pub iff_violations: usize,
}

/// Frequency of `tau2_hat = 0` under `theta = 0`.
pub fn collapse_probability(p: usize, sigma2: f64, replicates: usize, seed: u64) -> Result<CollapseReport> {
    if p == 0 || replicates == 0 || !(sigma2 > 0.0) {
        return arg_err("collapse check needs p >= 1, replicates >= 1 and sigma2 > 0");
    }
    let base = RngStream::new(seed, 0);
    let flags: Vec<(bool, bool)> = (0..replicates as u64)
        .into_par_iter()
        .map(|k| {
            let y = gaussian_vec(&mut base.replicate(k).rng(), p, sigma2);
            let energy: f64 = y.iter().map(|v| v * v).sum();
            let fit = eb_global_tau2(&y, sigma2)?;
            Ok((fit.collapsed, energy <= p as f64 * sigma2))
        })
        .collect::<Result<_>>()?;
    let hits: Vec<f64> = flags.iter().map(|(c, _)| f64::from(u8::from(*c))).collect();
    let frequency = pairwise_sum(&hits) / replicates as f64;
    let expected = chi2_cdf(p as f64, p as f64);
    Ok(CollapseReport {
        p,
        replicates,
        frequency,
        se: (expected * (1.0 - expected) / replicates as f64).sqrt(),
        expected,
        iff_violations: flags.iter().filter(|(a, b)| a != b).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionRow {
    pub m: f64,
    /// Mean over replicates of the posterior mass outside the ball.
    pub mean_mass: f64,
    /// Mean Markov bound `(|m - theta0|^2 + tr V) / (M eps)^2`.
    pub mean_bound: f64,
    /// Worst per-replicate `(mass - bound) / se`, where `se` is the
    /// posterior-sampling standard error of the mass.
    pub max_excess_se: f64,
    /// Replicates where the mass exceeded its bound by more than 3 SE.
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub eps2: f64,
    pub draws: usize,
    pub replicates: usize,
    pub rows: Vec<ContractionRow>,
    /// Whether every replicate's mass is nonincreasing along the `M` grid.
    pub monotone: bool,
}

/// Posterior contraction of the cross-fit posterior around `truth`.
///
/// Per replicate, `draws` samples from the diagonal Gaussian posterior are
/// shared across the `M` grid, so the estimated mass is monotone in `M`.
#[allow(clippy::too_many_arguments)]
pub fn contraction_check(
    truth: &[f64],
    sigma2: f64,
    n: f64,
    cap: f64,
    m_grid: &[f64],
    eps2: f64,
    replicates: usize,
    draws: usize,
    seed: u64,
) -> Result<ContractionReport> {
    if m_grid.is_empty() || !(eps2 > 0.0) || replicates == 0 || draws == 0 {
        return arg_err("contraction check needs a nonempty M grid, eps2 > 0, replicates and draws >= 1");
    }
    let base = RngStream::new(seed, 0);
    let cfg = CrossfitConfig::known(cap);
    // Per replicate: (mass per M, bound per M).
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..replicates as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = base.replicate(k).rng();
            let prob = simulate(truth, sigma2, n, &mut rng)?;
            let fit = crossfit_estimate(&prob, &cfg, &mut rng)?;
            posterior_mass(&fit.posterior.mean, &fit.posterior.var, truth, m_grid, eps2, draws, &mut rng)
        })
        .collect::<Result<_>>()?;
    let monotone = rows.iter().all(|(mass, _)| mass.windows(2).all(|w| w[0] >= w[1]));
    let out = m_grid
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let masses: Vec<f64> = rows.iter().map(|r| r.0[j]).collect();
            let bounds: Vec<f64> = rows.iter().map(|r| r.1[j]).collect();
            let mut max_excess = f64::NEG_INFINITY;
            let mut violations = 0;
            for (q, b) in masses.iter().zip(&bounds) {
                let se = (q * (1.0 - q) / draws as f64).sqrt();
                let excess = q - b;
                if excess > 3.0 * se + 1e-12 {
                    violations += 1;
                }
                let in_se = if se > 0.0 {
                    excess / se
                } else if excess > 0.0 {
                    f64::INFINITY
                } else {
                    excess.signum() * 0.0
                };
                max_excess = max_excess.max(in_se);
            }
            ContractionRow {
                m,
                mean_mass: pairwise_sum(&masses) / replicates as f64,
                mean_bound: pairwise_sum(&bounds) / replicates as f64,
                max_excess_se: max_excess,
                violations,
            }
        })
        .collect();
    Ok(ContractionReport {
        eps2,
        draws,
        replicates,
        rows: out,
        monotone,
    })
}

/// Posterior mass outside `M eps` balls (by sampling) and the Markov bounds.
pub fn posterior_mass<R: Rng + ?Sized>(
    mean: &[f64],
    var: &[f64],
    truth: &[f64],
    m_grid: &[f64],
    eps2: f64,
    draws: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let second_moment = squared_error(mean, truth) + var.iter().sum::<f64>();
    let dist2: Vec<f64> = (0..draws)
        .map(|_| {
            mean.iter()
                .zip(var)
                .zip(truth)
                .map(|((m, v), t)| {
                    let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
                    let d = m + v.sqrt() * z - t;
                    d * d
                })
                .sum()
        })
        .collect();
    let mass = m_grid
        .iter()
        .map(|m| dist2.iter().filter(|&&d| d > m * m * eps2).count() as f64 / draws as f64)
        .collect();
    let bound = m_grid.iter().map(|m| second_moment / (m * m * eps2)).collect();
    Ok((mass, bound))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolevRow {
    pub n: f64,
    pub s_n: usize,
    pub risk: f64,
    pub se: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolevSweep {
    pub beta: f64,
    pub estimator: Estimator,
    pub rows: Vec<SobolevRow>,
    /// Least-squares slope of `log risk` on `log n`.
    pub slope: f64,
    /// `-2 beta / (2 beta + 1)`.
    pub target: f64,
}

/// Risk against `n` on the envelope truth of a Sobolev ellipsoid.
pub fn sobolev_sweep(ell: &SobolevEllipsoid, sigma2: f64, n_grid: &[f64], estimator: Estimator, replicates: usize, seed: u64) -> Result<SobolevSweep> {
    ell.validate()?;
    if n_grid.len() < 2 {
        return arg_err("Sobolev sweep needs at least two values of n");
    }
    let truth = ell.envelope();
    let base = RngStream::new(seed, 0);
    let mut rows = Vec::new();
    for (k, &n) in n_grid.iter().enumerate() {
        let s_n = ell.truncation_level(sigma2, n);
        let cell = Cell {
            s: s_n,
            p: ell.p,
            r: ell.r,
            sigma2,
            n,
        };
        let ctx = EstimatorContext {
            cap: ell.r * ell.r,
            s: s_n,
            variant: CloneVariant::default(),
        };
        let reps = run_replicates(&truth, &cell, &[estimator], &ctx, base.child(k as u64), replicates)?;
        let losses: Vec<f64> = reps.iter().map(|r| r.loss[0]).collect();
        let summary = Summary::of(&losses);
        rows.push(SobolevRow {
            n,
            s_n,
            risk: summary.mean,
            se: summary.se,
            rate: ell.rate(sigma2, n),
        });
    }
    let lx: Vec<f64> = rows.iter().map(|r| r.n.ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.risk.ln()).collect();
    let (slope, _) = linear_fit(&lx, &ly);
    Ok(SobolevSweep {
        beta: ell.beta,
        estimator,
        rows,
        slope,
        target: -2.0 * ell.beta / (2.0 * ell.beta + 1.0),
    })
}

/// Thin SVD `X = U D V'` truncated to numerical rank.
#[derive(Debug, Clone)]
pub struct Canonical {
    pub u: DMatrix<f64>,
    pub d: DVector<f64>,
    pub v: DMatrix<f64>,
    pub rank: usize,
}

impl Canonical {
    /// Rank is the number of singular values above `tol * d_max`.
    pub fn new(x: &DMatrix<f64>, tol: f64) -> Result<Self> {
        let svd = x.clone().svd(true, true);
        let u = svd.u.ok_or_else(|| Error::Rank("SVD did not return U".into()))?;
        let vt = svd.v_t.ok_or_else(|| Error::Rank("SVD did not return V'".into()))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let dmax = order.first().map_or(0.0, |&i| svd.singular_values[i]);
        let keep: Vec<usize> = order.into_iter().filter(|&i| svd.singular_values[i] > tol * dmax).collect();
        if keep.is_empty() {
            return Err(Error::Rank("design has rank 0".into()));
        }
        let rank = keep.len();
        let u = DMatrix::from_fn(u.nrows(), rank, |i, j| u[(i, keep[j])]);
        let v = DMatrix::from_fn(vt.ncols(), rank, |i, j| vt[(keep[j], i)]);
        let d = DVector::from_fn(rank, |j, _| svd.singular_values[keep[j]]);
        Ok(Self { u, d, v, rank })
    }

    /// `theta = D V' beta`.
    pub fn to_theta(&self, beta: &DVector<f64>) -> DVector<f64> {
        (self.v.transpose() * beta).component_mul(&self.d)
    }

    /// `beta = V D^{-1} theta` (the minimum-norm preimage).
    pub fn to_beta(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.v * theta.component_div(&self.d)
    }

    /// Canonical observations `Z = U' y`.
    pub fn project(&self, y: &DVector<f64>) -> DVector<f64> {
        self.u.transpose() * y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionCheck {
    pub rank: usize,
    pub prediction_norm: f64,
    pub canonical_norm: f64,
    pub abs_error: f64,
}

/// Compare `|X (beta - beta0)|` with `|theta - theta0|` in canonical coordinates.
pub fn prediction_norm_check(x: &DMatrix<f64>, beta: &DVector<f64>, beta0: &DVector<f64>, tol: f64) -> Result<PredictionCheck> {
    if x.ncols() != beta.len() || beta.len() != beta0.len() {
        return arg_err("design and coefficient dimensions disagree");
    }
    let can = Canonical::new(x, tol)?;
    let prediction_norm = (x * (beta - beta0)).norm();
    let canonical_norm = (can.to_theta(beta) - can.to_theta(beta0)).norm();
    Ok(PredictionCheck {
        rank: can.rank,
        prediction_norm,
        canonical_norm,
        abs_error: (prediction_norm - canonical_norm).abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct B1Report {
    pub nu: f64,
    pub replicates: usize,
    pub fail_freq: f64,
    pub se: f64,
    pub margin_holds: bool,
}

/// Frequency with which the cross-fit pilot bins violate B1 for `truth`.
pub fn b1_margin_frequency(truth: &[f64], sigma2: f64, n: f64, cap: f64, kappa: f64, replicates: usize, seed: u64) -> Result<B1Report> {
    let profile = VarianceProfile::from_truth(truth)?;
    let lambda = sigma2 / n;
    let nu = 4.0 * lambda;
    let margin = margin_holds(&profile, nu, kappa)?;
    let base = RngStream::new(seed, 0);
    let cfg = CrossfitConfig::known(cap);
    let fails: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = base.replicate(k).rng();
            let prob = simulate(truth, sigma2, n, &mut rng)?;
            let fit = crossfit_estimate(&prob, &cfg, &mut rng)?;
            Ok(f64::from(u8::from(!b1_holds(&fit.binning, &profile, fit.nu))))
        })
        .collect::<Result<_>>()?;
    let freq = pairwise_sum(&fails) / replicates as f64;
    Ok(B1Report {
        nu,
        replicates,
        fail_freq: freq,
        se: crate::stats::binomial_se(freq, replicates),
        margin_holds: margin,
    })
}

/// Truth whose squares sit at `1.5 t_m - nu` for the dyadic level nearest to
/// each target variance, so the margin condition holds for any `kappa <= 0.2`.
pub fn margin_centred_truth(target_v: &[f64], nu: f64) -> Vec<f64> {
    target_v
        .iter()
        .map(|&v| {
            let m = ((v + nu) / (1.5 * nu)).log2().round().max(0.0);
            (1.5 * nu * 2f64.powf(m) - nu).max(0.0).sqrt()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossfitDiagnostics {
    /// `E |theta_hat - theta_or|^2` with the oracle on the same clone.
    pub transfer_lhs: Summary,
    /// `E sum (V_hat - V)^2 / (V + 2 lambda)`.
    pub transfer_rhs: Summary,
    /// Replicates where truncation increased some coordinate's error.
    pub truncation_violations: usize,
    pub b1_fail_freq: f64,
}

/// Risk-transfer and truncation diagnostics of the cross-fit estimator.
pub fn crossfit_diagnostics(truth: &[f64], sigma2: f64, n: f64, cap: f64, replicates: usize, seed: u64) -> Result<CrossfitDiagnostics> {
    let lambda = sigma2 / n;
    let v: Vec<f64> = truth.iter().map(|t| t * t).collect();
    let profile = VarianceProfile { v: v.clone(), cap: None };
    let base = RngStream::new(seed, 0);
    let cfg = CrossfitConfig::known(cap);
    let rows: Vec<(f64, f64, bool, bool)> = (0..replicates as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = base.replicate(k).rng();
            let prob = simulate(truth, sigma2, n, &mut rng)?;
            let fit = crossfit_estimate(&prob, &cfg, &mut rng)?;
            let oracle: Vec<f64> = fit.apply.iter().zip(&v).map(|(y, vi)| vi / (vi + 2.0 * lambda) * y).collect();
            let lhs = squared_error(&fit.posterior.mean, &oracle);
            let rhs: f64 = fit.profile.v.iter().zip(&v).map(|(a, b)| (a - b) * (a - b) / (b + 2.0 * lambda)).sum();
            let trunc_ok = fit.raw_profile.iter().zip(&v).all(|(raw, vi)| (raw.min(cap) - vi).abs() <= (raw - vi).abs());
            Ok((lhs, rhs, trunc_ok, !b1_holds(&fit.binning, &profile, fit.nu)))
        })
        .collect::<Result<_>>()?;
    let lhs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let rhs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let fails: Vec<f64> = rows.iter().map(|r| f64::from(u8::from(r.3))).collect();
    Ok(CrossfitDiagnostics {
        transfer_lhs: Summary::of(&lhs),
        transfer_rhs: Summary::of(&rhs),
        truncation_violations: rows.iter().filter(|r| !r.2).count(),
        b1_fail_freq: pairwise_sum(&fails) / replicates as f64,
    })
}

/// Squared norm of the projection of i.i.d. `N(0, sigma2)` noise onto the
/// nonincreasing cone, averaged over replicates.
pub fn block_projection_risk(m: usize, sigma2: f64, replicates: usize, seed: u64) -> Result<Summary> {
    let base = RngStream::new(seed, 0);
    let vals: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|k| {
            let eps = gaussian_vec(&mut base.replicate(k).rng(), m, sigma2);
            let fit = crate::isotonic::pava_unit(&eps, crate::isotonic::Cone::Nonincreasing)?;
            Ok(fit.values.iter().map(|v| v * v).sum())
        })
        .collect::<Result<_>>()?;
    Ok(Summary::of(&vals))
}
