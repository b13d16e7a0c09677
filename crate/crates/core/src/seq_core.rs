//! Gaussian sequence problems, the parameter classes they are drawn from, and
//! reproducible random streams.
//!
//! Observations follow `y_i = theta_i + eps_i` with `eps_i ~ N(0, sigma2 / n)`;
//! `noise_var` is the per-coordinate variance `lambda = sigma2 / n`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};

/// A seeded random stream. Equal `(seed, stream_id)` pairs produce identical
/// draws; distinct stream ids select disjoint ChaCha8 streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Stream for the `k`-th replicate under this seed.
    pub fn replicate(&self, k: u64) -> Self {
        Self::new(self.seed, k)
    }

    /// Derive an independent seed family, e.g. one per sweep cell or per
    /// estimator, keeping the stream id.
    pub fn child(&self, tag: u64) -> Self {
        Self::new(splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D))), self.stream_id)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draw `len` i.i.d. `N(0, var)` values.
pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, len: usize, var: f64) -> Vec<f64> {
    let sd = var.sqrt();
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        })
        .collect()
}

/// One observed Gaussian sequence, with the truth attached in simulation mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceProblem {
    pub y: Vec<f64>,
    pub noise_var: f64,
    pub n_effective: f64,
    pub sigma2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Vec<f64>>,
}

impl SequenceProblem {
    pub fn new(y: Vec<f64>, sigma2: f64, n_effective: f64, truth: Option<Vec<f64>>) -> Result<Self> {
        if y.is_empty() {
            return arg_err("observation vector is empty");
        }
        if !(sigma2 > 0.0) || !(n_effective > 0.0) {
            return arg_err(format!("sigma2 ({sigma2}) and n_effective ({n_effective}) must be positive"));
        }
        if let Some(t) = &truth {
            if t.len() != y.len() {
                return arg_err(format!("truth has length {} but y has length {}", t.len(), y.len()));
            }
        }
        Ok(Self {
            y,
            noise_var: sigma2 / n_effective,
            n_effective,
            sigma2,
            truth,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Per-coordinate noise variance `sigma2 / n`.
    pub fn lambda(&self) -> f64 {
        self.noise_var
    }
}

/// Adversarial members of the ordered sparse class used to approximate the
/// supremum in risk experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SparseProfile {
    /// `theta_i = sqrt(R)` for `i <= s`.
    Flat,
    /// `theta_i^2 = R 2^{-(i-1)}` for `i <= s`.
    Geometric,
    /// `theta_1 = sqrt(R)`, everything else zero.
    Spike,
}

impl SparseProfile {
    pub const ALL: [SparseProfile; 3] = [SparseProfile::Flat, SparseProfile::Geometric, SparseProfile::Spike];

    pub fn name(&self) -> &'static str {
        match self {
            SparseProfile::Flat => "flat",
            SparseProfile::Geometric => "geometric",
            SparseProfile::Spike => "spike",
        }
    }
}

/// The ordered sparse class: at most `s` leading nonzero coordinates with
/// nonincreasing squares bounded by `r`, zero afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderedSparseClass {
    pub s: usize,
    #[serde(rename = "R")]
    pub r: f64,
    pub p: usize,
}

impl OrderedSparseClass {
    pub fn new(s: usize, r: f64, p: usize) -> Result<Self> {
        let class = Self { s, r, p };
        class.validate()?;
        Ok(class)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.s == 0 || self.s > self.p {
            return Err(Error::InvalidClass(format!("need 1 <= s <= p, got s={} p={}", self.s, self.p)));
        }
        // R = 0 is the degenerate class {0}; only negative or non-finite radii are rejected.
        if !(self.r >= 0.0) || !self.r.is_finite() {
            return Err(Error::InvalidClass(format!("amplitude bound R must be finite and >= 0, got {}", self.r)));
        }
        Ok(())
    }

    /// Membership predicate, evaluated exactly.
    pub fn contains(&self, theta: &[f64]) -> bool {
        if theta.len() != self.p {
            return false;
        }
        let k = theta.iter().rposition(|&t| t != 0.0).map_or(0, |i| i + 1);
        if k > self.s {
            return false;
        }
        if k > 0 && theta[0] * theta[0] > self.r {
            return false;
        }
        theta[..k].windows(2).all(|w| w[0] * w[0] >= w[1] * w[1])
    }

    /// Random member: `k ~ U{1..s}`, `k` amplitudes `U[0, sqrt(R)]` sorted
    /// descending with independent random signs, zero tail.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        self.validate()?;
        let k = rng.random_range(1..=self.s);
        let root = self.r.sqrt();
        let mut amps: Vec<f64> = (0..k).map(|_| root * rng.random::<f64>()).collect();
        amps.sort_by(|a, b| b.total_cmp(a));
        let mut theta = vec![0.0; self.p];
        for (t, a) in theta.iter_mut().zip(amps) {
            *t = if rng.random::<bool>() { a } else { -a };
        }
        Ok(theta)
    }

    /// Deterministic adversarial member.
    pub fn profile(&self, profile: SparseProfile) -> Result<Vec<f64>> {
        self.validate()?;
        let mut theta = vec![0.0; self.p];
        match profile {
            SparseProfile::Flat => theta[..self.s].fill(self.r.sqrt()),
            SparseProfile::Geometric => {
                for (i, t) in theta[..self.s].iter_mut().enumerate() {
                    *t = (self.r * 0.5f64.powi(i as i32)).sqrt();
                }
            }
            SparseProfile::Spike => theta[0] = self.r.sqrt(),
        }
        Ok(theta)
    }

    /// The maximum-energy member (flat profile).
    pub fn max_energy(&self) -> Result<Vec<f64>> {
        self.profile(SparseProfile::Flat)
    }
}

/// How a raw Sobolev draw is placed relative to the ellipsoid boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SobolevPlacement {
    /// Rescale onto the boundary only when the raw draw lies outside.
    Interior,
    /// Always rescale onto the boundary.
    Boundary,
}

/// Weighted l2 ball `sum_i i^{2 beta} theta_i^2 <= R^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevEllipsoid {
    pub beta: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub p: usize,
}

impl SobolevEllipsoid {
    pub fn new(beta: f64, r: f64, p: usize) -> Result<Self> {
        let ell = Self { beta, r, p };
        ell.validate()?;
        Ok(ell)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.5) || !self.beta.is_finite() {
            return Err(Error::InvalidClass(format!("smoothness beta must exceed 1/2, got {}", self.beta)));
        }
        if !(self.r >= 0.0) || !self.r.is_finite() || self.p == 0 {
            return Err(Error::InvalidClass(format!("need R >= 0 and p >= 1, got R={} p={}", self.r, self.p)));
        }
        Ok(())
    }

    /// `sum_i i^{2 beta} theta_i^2` with 1-based indices.
    pub fn weighted_energy(&self, theta: &[f64]) -> f64 {
        theta.iter().enumerate().map(|(i, t)| ((i + 1) as f64).powf(2.0 * self.beta) * t * t).sum()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.p && self.weighted_energy(theta) <= self.r * self.r
    }

    /// Gaussian draw with `Var(theta_i) ∝ i^{-2 beta - 1}`, rescaled onto the
    /// ellipsoid according to `placement`. With `monotone`, magnitudes are
    /// rearranged into nonincreasing order (which can only lower the weighted
    /// energy, so membership is kept).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, placement: SobolevPlacement, monotone: bool) -> Result<Vec<f64>> {
        self.validate()?;
        let mut theta = self.envelope();
        for t in theta.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *t *= z;
        }
        if monotone {
            theta.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
        }
        let energy = self.weighted_energy(&theta);
        let target = self.r * self.r;
        if energy > 0.0 && (energy > target || placement == SobolevPlacement::Boundary) {
            let scale = (target / energy).sqrt();
            theta.iter_mut().for_each(|t| *t *= scale);
            // Rounding can leave the rescaled energy a few ulps above R^2.
            while self.weighted_energy(&theta) > target {
                theta.iter_mut().for_each(|t| *t *= 1.0 - f64::EPSILON);
            }
        }
        Ok(theta)
    }

    /// Deterministic envelope member `theta_i = c i^{-(2 beta + 1)/2}` with `c`
    /// chosen so the weighted energy is exactly `R^2` (up to rounding).
    pub fn envelope(&self) -> Vec<f64> {
        let harmonic: f64 = (1..=self.p).map(|i| 1.0 / i as f64).sum();
        let c = self.r / harmonic.sqrt();
        (1..=self.p).map(|i| c * (i as f64).powf(-(2.0 * self.beta + 1.0) / 2.0)).collect()
    }

    /// Effective truncation level `ceil((n R^2 / sigma2)^{1/(2 beta + 1)})`,
    /// clamped to `[1, p - 1]` (or 1 when `p == 1`).
    pub fn truncation_level(&self, sigma2: f64, n: f64) -> usize {
        let raw = (n * self.r * self.r / sigma2).powf(1.0 / (2.0 * self.beta + 1.0)).ceil();
        let upper = self.p.saturating_sub(1).max(1);
        (raw.max(1.0) as usize).min(upper)
    }

    /// Minimax rate `R^{2/(2b+1)} (sigma2/n)^{2b/(2b+1)}`.
    pub fn rate(&self, sigma2: f64, n: f64) -> f64 {
        let e = 2.0 * self.beta + 1.0;
        self.r.powf(2.0 / e) * (sigma2 / n).powf(2.0 * self.beta / e)
    }
}

/// Nonincreasing, nonnegative local variance sequence, optionally capped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceProfile {
    pub v: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
}

impl VarianceProfile {
    pub fn new(v: Vec<f64>, cap: Option<f64>) -> Result<Self> {
        let profile = Self { v, cap };
        if !profile.is_valid() {
            return arg_err("variance profile must be nonnegative, nonincreasing and below its cap");
        }
        Ok(profile)
    }

    /// `V_i = theta_i^2`; fails if the squares are not nonincreasing.
    pub fn from_truth(theta: &[f64]) -> Result<Self> {
        Self::new(theta.iter().map(|t| t * t).collect(), None)
    }

    pub fn is_valid(&self) -> bool {
        self.v.iter().all(|&x| x >= 0.0 && x.is_finite()) && self.v.windows(2).all(|w| w[0] >= w[1]) && self.cap.is_none_or(|c| self.v.iter().all(|&x| x <= c))
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

/// Draw `y = theta + eps`, `eps_i ~ N(0, sigma2 / n)`.
pub fn simulate<R: Rng + ?Sized>(theta: &[f64], sigma2: f64, n_effective: f64, rng: &mut R) -> Result<SequenceProblem> {
    if theta.is_empty() {
        return arg_err("theta is empty");
    }
    if !(sigma2 > 0.0) || !(n_effective > 0.0) {
        return arg_err(format!("sigma2 ({sigma2}) and n_effective ({n_effective}) must be positive"));
    }
    let noise = gaussian_vec(rng, theta.len(), sigma2 / n_effective);
    let y = theta.iter().zip(&noise).map(|(t, e)| t + e).collect();
    SequenceProblem::new(y, sigma2, n_effective, Some(theta.to_vec()))
}
