//! Acceptance suite. Runs as a plain binary so every criterion prints one
//! PASS/FAIL line whether or not output capture is on.

mod common;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use isoeb::crossfit::{bins_from_pilot, crossfit_estimate, fit_variance_profile, tail_sigma2, CloneVariant, CrossfitConfig};
use isoeb::deaton::{build_basis, deaton_fit, deaton_loglik, DeatonOptions};
use isoeb::isotonic::{min_max_slopes, pava, Cone};
use isoeb::risk_lab::{
    assouad_check, block_projection_risk, collapse_probability, contraction_check, posterior_mass, prediction_norm_check, run_risk, sobolev_sweep, Canonical,
    Cell, ClassSpec, Estimator, ExperimentConfig,
};
use isoeb::seq_core::{gaussian_vec, simulate, OrderedSparseClass, RngStream, SequenceProblem, SobolevEllipsoid, SparseProfile};
use isoeb::stats::Summary;

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn within_time(started: Instant, limit: Duration) -> (bool, String) {
    let t = started.elapsed();
    (t < limit, format!("{:.1}s of {}s", t.as_secs_f64(), limit.as_secs()))
}

fn collapse_law() -> Verdict {
    let started = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, p) in [1usize, 10, 100].into_iter().enumerate() {
        let r = collapse_probability(p, 1.0, 100_000, 1000 + k as u64).unwrap();
        let z = (r.frequency - r.expected) / r.se;
        ok &= z.abs() <= 3.0 && r.iff_violations == 0;
        parts.push(format!("p={p}: {:.4} vs {:.4} ({z:+.2} SE)", r.frequency, r.expected));
    }
    let (fast, t) = within_time(started, Duration::from_secs(10));
    verdict(ok && fast, format!("{}; {t}", parts.join(", ")))
}

fn projection_oracle() -> Verdict {
    let started = Instant::now();
    let mut rng = RngStream::new(2, 0).rng();
    let mut worst: f64 = 0.0;
    for inst in 0..500 {
        let p = rng.random_range(1..=8);
        let scale = [0.1, 1.0, 10.0][inst % 3];
        let mut x = gaussian_vec(&mut rng, p, scale * scale);
        if inst % 5 == 0 {
            x.iter_mut().for_each(|v| *v = v.round());
        }
        let w: Vec<f64> = (0..p).map(|_| rng.random_range(0.1..5.0)).collect();
        for (cone, lo) in [(Cone::Nonincreasing, f64::NEG_INFINITY), (Cone::NonincreasingNonneg, 0.0)] {
            let fit = pava(&x, &w, cone).unwrap().values;
            let oracle = common::brute_projection(&x, &w, lo, f64::INFINITY);
            worst = worst.max(fit.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
        let cap = rng.random_range(0.5..4.0);
        let nu = rng.random_range(0.05..1.0);
        let mut pilot: Vec<f64> = (0..p).map(|_| rng.random_range(0.0..1.5 * cap)).collect();
        pilot.sort_by(|a, b| b.total_cmp(a));
        let bins = bins_from_pilot(pilot, nu, cap);
        let x2: Vec<f64> = gaussian_vec(&mut rng, p, cap * cap).into_iter().map(|v| v + cap / 2.0).collect();
        let fit = fit_variance_profile(&x2, &bins, cap).unwrap().v;
        let oracle = common::brute_projection(&x2, &bins.weights, 0.0, cap);
        worst = worst.max(fit.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let (fast, t) = within_time(started, Duration::from_secs(30));
    verdict(worst <= 1e-8 && fast, format!("max |fit - QP| = {worst:.2e} over 500 instances; {t}"))
}

fn lcm_equivalence() -> Verdict {
    let mut rng = RngStream::new(3, 0).rng();
    let mut worst: f64 = 0.0;
    for inst in 0..500 {
        let p = rng.random_range(1..=64);
        let shift = [0.0, 2.0, -1.0, 5.0][inst % 4];
        let x: Vec<f64> = gaussian_vec(&mut rng, p, 1.0).into_iter().map(|v| v + shift).collect();
        let got = min_max_slopes(&x).unwrap();
        let hull: Vec<f64> = common::lcm_slopes(&x).into_iter().map(|s| s.max(0.0)).collect();
        worst = worst.max(got.iter().zip(&hull).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    verdict(worst <= 1e-10, format!("max deviation {worst:.2e} over 500 sequences"))
}

fn sparse_config(estimators: Vec<Estimator>, profiles: Vec<SparseProfile>, sweep: Vec<Cell>, replicates: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        class: ClassSpec::Sparse { profiles },
        estimators,
        replicates,
        seed,
        sweep,
        variant: CloneVariant::default(),
        bound_constant: 1.0,
        margin_kappa: None,
    }
}

fn oracle_identity() -> Verdict {
    let mut sweep = Vec::new();
    for s in [2, 8] {
        for n in [1.0, 16.0] {
            sweep.push(Cell {
                s,
                p: 64,
                r: 4.0,
                sigma2: 1.0,
                n,
            });
        }
    }
    let cfg = sparse_config(vec![Estimator::Oracle], SparseProfile::ALL.to_vec(), sweep, 10_000, 4);
    let report = run_risk(&cfg).unwrap();
    let z: Vec<f64> = report.results.iter().map(|r| (r.risk - r.oracle_risk) / r.se).collect();
    let worst = z.iter().map(|v| v.abs()).fold(0.0, f64::max);
    verdict(
        z.len() == 12 && worst <= 3.0,
        format!("{} cells, worst |MC - closed form| = {worst:.2} SE", z.len()),
    )
}

/// Pinned ceiling for the cross-fit risk-to-bound ratio over the sweep.
const RATIO_CEILING: f64 = 2.0;

fn risk_scaling() -> Verdict {
    let started = Instant::now();
    let mut sweep = Vec::new();
    for p in [64, 256] {
        for s in [1, 2, 4, 8] {
            for n in [1.0, 16.0, 256.0] {
                sweep.push(Cell { s, p, r: 4.0, sigma2: 1.0, n });
            }
        }
    }
    let cfg = sparse_config(vec![Estimator::Crossfit], SparseProfile::ALL.to_vec(), sweep, 10_000, 5);
    let report = run_risk(&cfg).unwrap();
    let max = report.max_ratio(Estimator::Crossfit).unwrap();
    let min = report.results.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let (fast, t) = within_time(started, Duration::from_secs(300));
    verdict(
        max <= RATIO_CEILING && fast,
        format!(
            "ratio in [{min:.3}, {max:.3}] over {} cell/truth pairs, ceiling {RATIO_CEILING}; {t}",
            report.results.len()
        ),
    )
}

fn lower_bound_dominance() -> Verdict {
    let mut ok = true;
    let mut worst = f64::INFINITY;
    let mut checked = 0;
    for s in [1usize, 4, 8] {
        for n in [1.0, 16.0] {
            let cell = Cell {
                s,
                p: 64,
                r: 4.0,
                sigma2: 1.0,
                n,
            };
            let (bound, rows) = assouad_check(&cell, &Estimator::ALL, 10_000, 60 + s as u64, CloneVariant::default()).unwrap();
            ok &= bound.applicable;
            for (_, summary) in rows {
                let z = (summary.mean - bound.bound) / summary.se.max(f64::MIN_POSITIVE);
                worst = worst.min(z);
                ok &= summary.mean >= bound.bound - 3.0 * summary.se;
                checked += 1;
            }
        }
    }
    verdict(ok, format!("{checked} estimator/cell pairs, smallest margin above the bound {worst:.1} SE"))
}

fn unknown_sigma_moments() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, (p, s, sigma2, n)) in [(50usize, 10usize, 2.0, 1.0), (40, 8, 0.5, 4.0)].into_iter().enumerate() {
        let class = OrderedSparseClass::new(s, 9.0, p).unwrap();
        let theta = class.profile(SparseProfile::Flat).unwrap();
        let base = RngStream::new(70 + k as u64, 0);
        let draws: Vec<f64> = (0..100_000u64)
            .map(|r| {
                let prob = simulate(&theta, sigma2, n, &mut base.replicate(r).rng()).unwrap();
                tail_sigma2(&prob.y, s, n).unwrap().0
            })
            .collect();
        let m = Summary::of(&draws);
        let m4 = draws.iter().map(|v| (v - m.mean).powi(4)).sum::<f64>() / draws.len() as f64;
        let var_se = ((m4 - m.var * m.var) / draws.len() as f64).sqrt();
        let target_var = 2.0 * sigma2 * sigma2 / (p - s) as f64;
        let z_mean = (m.mean - sigma2) / m.se;
        let z_var = (m.var - target_var) / var_se;
        ok &= z_mean.abs() <= 3.0 && z_var.abs() <= 3.0;
        parts.push(format!("p={p},s={s}: mean {z_mean:+.2} SE, variance {z_var:+.2} SE"));
    }
    verdict(ok, parts.join("; "))
}

fn contraction() -> Verdict {
    let m_grid = [0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 10.0];
    let sparse = OrderedSparseClass::new(4, 4.0, 64).unwrap().profile(SparseProfile::Geometric).unwrap();
    let n = 16.0;
    let a = contraction_check(&sparse, 1.0, n, 4.0, &m_grid, 4.0 / n, 300, 2000, 80).unwrap();
    let ell = SobolevEllipsoid::new(1.0, 4.0, 128).unwrap();
    let n2 = 256.0;
    let b = contraction_check(&ell.envelope(), 1.0, n2, 16.0, &m_grid, ell.rate(1.0, n2), 300, 2000, 81).unwrap();
    let violations: usize = a.rows.iter().chain(&b.rows).map(|r| r.violations).sum();
    let worst = a.rows.iter().chain(&b.rows).map(|r| r.max_excess_se).fold(f64::NEG_INFINITY, f64::max);
    let vanishes = a.rows.last().unwrap().mean_mass == 0.0 && b.rows.last().unwrap().mean_mass == 0.0;
    verdict(
        violations == 0 && a.monotone && b.monotone && vanishes,
        format!(
            "sparse and Sobolev, 600 replicates x {} radii: {violations} violations, worst excess {worst:.2} SE, monotone {}",
            m_grid.len(),
            a.monotone && b.monotone
        ),
    )
}

fn sobolev_rate() -> Verdict {
    let started = Instant::now();
    let grid: Vec<f64> = (6..=14).map(|k| 2f64.powi(k)).collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for beta in [1.0, 2.0] {
        let ell = SobolevEllipsoid::new(beta, 16.0, 256).unwrap();
        let sweep = sobolev_sweep(&ell, 1.0, &grid, Estimator::CrossfitUnknownSigma, 2000, 90).unwrap();
        ok &= (sweep.slope - sweep.target).abs() <= 0.15;
        parts.push(format!("beta={beta}: slope {:.3} vs {:.3}", sweep.slope, sweep.target));
    }
    let (fast, t) = within_time(started, Duration::from_secs(300));
    verdict(ok && fast, format!("{}; {t}", parts.join(", ")))
}

fn deaton_pipeline() -> Verdict {
    let mut pattern_ok = 0;
    let datasets = 10;
    for k in 0..datasets {
        let mut rng = RngStream::new(100 + k, 0).rng();
        let x: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let basis = build_basis(&x, 10).unwrap();
        let mut theta = vec![0.0; 10];
        theta[..3].copy_from_slice(&[8.0, -5.0, 3.0]);
        let noise = gaussian_vec(&mut rng, x.len(), 1.0);
        let y: Vec<f64> = basis.combine(&theta).iter().zip(&noise).map(|(a, b)| a + b).collect();
        let fit = deaton_fit(&x, &y, 10, &DeatonOptions::default()).unwrap();
        let z = &fit.z_hat;
        let bottom = z[..5].iter().sum::<f64>() / 5.0;
        if z.windows(2).all(|w| w[0] <= w[1]) && z[5..].iter().all(|&v| v > bottom) {
            pattern_ok += 1;
        }
    }
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for m in 2..=4usize {
        for k in 0..10u64 {
            let mut rng = RngStream::new(200 + 10 * m as u64 + k, 0).rng();
            let x: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
            let basis = build_basis(&x, m).unwrap();
            let theta = gaussian_vec(&mut rng, m, 4.0);
            let noise = gaussian_vec(&mut rng, x.len(), 1.0);
            let y: Vec<f64> = basis.combine(&theta).iter().zip(&noise).map(|(a, b)| a + b).collect();
            let fit = deaton_fit(&x, &y, m, &DeatonOptions::default()).unwrap();
            let brute = common::brute_restricted_max(m + 1, |k| {
                deaton_loglik(&k[..m], k[m], &fit.theta_hat, fit.w_last, &fit.gamma, fit.n_bar).unwrap()
            });
            let ours: Vec<f64> = fit.kappa_iso.iter().copied().chain(std::iter::once(fit.kappa_iso_last)).collect();
            worst = worst.max(ours.iter().zip(&brute).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max));
            cases += 1;
        }
    }
    verdict(
        pattern_ok == datasets && worst <= 1e-6,
        format!("shrinkage pattern in {pattern_ok}/{datasets} datasets; restricted precisions vs brute force over {cases} fits, max rel. error {worst:.1e}"),
    )
}

fn random_design<R: Rng>(rng: &mut R, n: usize, p: usize, rank: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, rank, |_, _| gaussian_vec(rng, 1, 1.0)[0]);
    let b = DMatrix::from_fn(rank, p, |_, _| gaussian_vec(rng, 1, 1.0)[0]);
    a * b
}

fn prediction_norm() -> Verdict {
    let mut rng = RngStream::new(11, 0).rng();
    let mut worst: f64 = 0.0;
    let mut rank_ok = true;
    let mut deficient = 0;
    for k in 0..100 {
        let n = rng.random_range(5..30);
        let p = rng.random_range(2..20);
        let full = n.min(p);
        let rank = if k % 3 == 0 && full > 1 { rng.random_range(1..full) } else { full };
        deficient += usize::from(rank < full);
        let x = random_design(&mut rng, n, p, rank);
        let beta = DVector::from_vec(gaussian_vec(&mut rng, p, 1.0));
        let beta0 = DVector::from_vec(gaussian_vec(&mut rng, p, 1.0));
        let chk = prediction_norm_check(&x, &beta, &beta0, 1e-9).unwrap();
        rank_ok &= chk.rank == rank;
        worst = worst.max(chk.abs_error);
        let can = Canonical::new(&x, 1e-9).unwrap();
        let theta = DVector::from_vec(gaussian_vec(&mut rng, can.rank, 1.0));
        worst = worst.max((&x * can.to_beta(&theta) - &can.u * &theta).norm());
    }
    // Contraction rerun in canonical coordinates of a rank-deficient design.
    let x = random_design(&mut rng, 120, 60, 40);
    let can = Canonical::new(&x, 1e-9).unwrap();
    let mut beta0 = DVector::zeros(60);
    for j in 0..5 {
        beta0[j] = 2.0;
    }
    let theta0: Vec<f64> = can.to_theta(&beta0).iter().copied().collect();
    let cap = theta0.iter().map(|t| t * t).fold(0.0, f64::max);
    let base = RngStream::new(12, 0);
    let mut violations = 0;
    let mut pred_gap: f64 = 0.0;
    for r in 0..100u64 {
        let mut rng = base.replicate(r).rng();
        let y = &x * &beta0 + DVector::from_vec(gaussian_vec(&mut rng, 120, 1.0));
        let z: Vec<f64> = can.project(&y).iter().copied().collect();
        let prob = SequenceProblem::new(z, 1.0, 1.0, None).unwrap();
        let fit = crossfit_estimate(&prob, &CrossfitConfig::known(cap), &mut rng).unwrap();
        let (mass, bound) = posterior_mass(&fit.posterior.mean, &fit.posterior.var, &theta0, &[1.0, 2.0, 4.0], 10.0, 2000, &mut rng).unwrap();
        for (q, b) in mass.iter().zip(&bound) {
            if q - b > 3.0 * (q * (1.0 - q) / 2000.0).sqrt() + 1e-12 {
                violations += 1;
            }
        }
        let beta_hat = can.to_beta(&DVector::from_vec(fit.posterior.mean.clone()));
        let canonical: f64 = fit.posterior.mean.iter().zip(&theta0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        pred_gap = pred_gap.max(((&x * (beta_hat - &beta0)).norm() - canonical).abs());
    }
    verdict(
        worst <= 1e-8 && pred_gap <= 1e-8 && rank_ok && violations == 0,
        format!("100 designs ({deficient} rank-deficient), max error {worst:.1e}; canonical contraction rerun: {violations} violations, estimate gap {pred_gap:.1e}"),
    )
}

fn block_projection_law() -> Verdict {
    let ms = [8usize, 64, 512];
    let means: Vec<f64> = ms
        .iter()
        .enumerate()
        .map(|(k, &m)| block_projection_risk(m, 1.0, 20_000, 120 + k as u64).unwrap().mean)
        .collect();
    let logs: Vec<f64> = ms.iter().map(|&m| (std::f64::consts::E * m as f64).ln()).collect();
    let c = means.iter().zip(&logs).map(|(a, b)| a * b).sum::<f64>() / logs.iter().map(|b| b * b).sum::<f64>();
    let resid: Vec<f64> = means.iter().zip(&logs).map(|(a, l)| ((a - c * l) / a).abs()).collect();
    let worst = resid.iter().copied().fold(0.0, f64::max);
    verdict(
        worst < 0.25,
        format!(
            "c = {c:.3}; means {:?}; worst residual {:.1}%",
            means.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            100.0 * worst
        ),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("collapse law", collapse_law),
        ("projection oracle", projection_oracle),
        ("LCM equivalence", lcm_equivalence),
        ("oracle risk identity", oracle_identity),
        ("risk scaling", risk_scaling),
        ("lower-bound dominance", lower_bound_dominance),
        ("unknown-sigma moments", unknown_sigma_moments),
        ("contraction", contraction),
        ("Sobolev rate", sobolev_rate),
        ("polynomial shrinkage pipeline", deaton_pipeline),
        ("prediction-norm identity", prediction_norm),
        ("block-projection log law", block_projection_law),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let v = f();
        failed += usize::from(!v.pass);
        println!(
            "{} [{:>2}] {name}: {} ({:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            k + 1,
            v.detail,
            started.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
