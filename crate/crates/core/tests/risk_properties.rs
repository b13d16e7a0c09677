use isoeb::crossfit::CloneVariant;
use isoeb::risk_lab::{b1_margin_frequency, crossfit_diagnostics, margin_centred_truth, run_risk, sobolev_sweep, Cell, ClassSpec, Estimator, ExperimentConfig};
use isoeb::seq_core::{OrderedSparseClass, SobolevEllipsoid, SparseProfile};
use proptest::prelude::*;

fn config(estimators: Vec<Estimator>, sweep: Vec<Cell>, replicates: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        class: ClassSpec::Sparse {
            profiles: SparseProfile::ALL.to_vec(),
        },
        estimators,
        replicates,
        seed,
        sweep,
        variant: CloneVariant::default(),
        bound_constant: 1.0,
        margin_kappa: Some(0.2),
    }
}

#[test]
fn identical_config_gives_identical_bytes() {
    let cfg = config(
        Estimator::ALL.to_vec(),
        vec![Cell {
            s: 2,
            p: 24,
            r: 2.0,
            sigma2: 1.0,
            n: 4.0,
        }],
        300,
        17,
    );
    let a = serde_json::to_vec(&run_risk(&cfg).unwrap()).unwrap();
    let b = serde_json::to_vec(&run_risk(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
    let other = config(Estimator::ALL.to_vec(), cfg.sweep.clone(), 300, 18);
    assert_ne!(run_risk(&other).unwrap().config_hash, run_risk(&cfg).unwrap().config_hash);
}

#[test]
fn adding_an_estimator_leaves_the_others_unchanged() {
    let sweep = vec![Cell {
        s: 3,
        p: 20,
        r: 4.0,
        sigma2: 1.0,
        n: 2.0,
    }];
    let small = run_risk(&config(vec![Estimator::Crossfit], sweep.clone(), 200, 5)).unwrap();
    let large = run_risk(&config(vec![Estimator::Oracle, Estimator::Crossfit], sweep, 200, 5)).unwrap();
    let pick = |r: &isoeb::risk_lab::RiskReport| {
        r.results
            .iter()
            .filter(|x| x.estimator == Estimator::Crossfit)
            .map(|x| x.risk)
            .collect::<Vec<_>>()
    };
    assert_eq!(pick(&small), pick(&large));
}

#[test]
fn risk_transfer_and_truncation_hold_on_a_grid() {
    for (k, (s, n)) in [(1usize, 1.0), (4, 4.0), (8, 16.0), (4, 64.0)].into_iter().enumerate() {
        let class = OrderedSparseClass::new(s, 4.0, 48).unwrap();
        for profile in SparseProfile::ALL {
            let truth = class.profile(profile).unwrap();
            let d = crossfit_diagnostics(&truth, 1.0, n, 4.0, 2000, 30 + k as u64).unwrap();
            let combined = (d.transfer_lhs.se.powi(2) + d.transfer_rhs.se.powi(2)).sqrt();
            assert!(d.transfer_lhs.mean <= d.transfer_rhs.mean + 3.0 * combined, "s={s} n={n} {profile:?}: {d:?}");
            assert_eq!(d.truncation_violations, 0);
        }
    }
}

#[test]
fn b1_failures_decrease_with_n_at_fixed_margin() {
    let target = [4.0, 4.0, 4.0, 4.0, 1.0, 1.0, 1.0, 1.0];
    let mut freqs = Vec::new();
    for n in [64.0, 256.0, 1024.0] {
        let truth = margin_centred_truth(&target, 4.0 / n);
        let r = b1_margin_frequency(&truth, 1.0, n, 4.0, 0.2, 4000, 11).unwrap();
        assert!(r.margin_holds);
        freqs.push((r.fail_freq, r.se));
    }
    for w in freqs.windows(2) {
        assert!(w[1].0 <= w[0].0 + 3.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt(), "{freqs:?}");
    }
    assert!(freqs[2].0 < freqs[0].0);
}

#[test]
fn boundary_truth_fails_more_often() {
    let n = 256.0;
    let nu = 4.0 / n;
    let centred = margin_centred_truth(&[4.0, 4.0, 4.0, 4.0, 1.0, 1.0, 1.0, 1.0], nu);
    // Move each squared value down onto its lower grid point t_m - nu.
    let boundary: Vec<f64> = centred
        .iter()
        .map(|t| {
            let level = t * t + nu;
            let m = (level / nu).log2().floor();
            (nu * 2f64.powf(m) - nu).sqrt()
        })
        .collect();
    let a = b1_margin_frequency(&centred, 1.0, n, 4.0, 0.2, 4000, 12).unwrap();
    let b = b1_margin_frequency(&boundary, 1.0, n, 4.0, 0.2, 4000, 12).unwrap();
    assert!(a.margin_holds && !b.margin_holds);
    assert!(b.fail_freq > a.fail_freq + 3.0 * (a.se.powi(2) + b.se.powi(2)).sqrt(), "{a:?} {b:?}");
}

#[test]
fn very_smooth_class_approaches_the_parametric_slope() {
    let ell = SobolevEllipsoid::new(8.0, 4.0, 256).unwrap();
    let grid: Vec<f64> = (6..=14).map(|k| 2f64.powi(k)).collect();
    let sweep = sobolev_sweep(&ell, 1.0, &grid, Estimator::Crossfit, 500, 3).unwrap();
    assert!((sweep.slope + 1.0).abs() < 0.1, "{}", sweep.slope);
}

#[test]
fn zero_radius_sobolev_gives_the_zero_signal_noise_floor() {
    let cfg = ExperimentConfig {
        class: ClassSpec::Sobolev { beta: 1.0 },
        ..config(
            vec![Estimator::Zero, Estimator::CrossfitUnknownSigma],
            vec![Cell {
                s: 1,
                p: 64,
                r: 0.0,
                sigma2: 1.0,
                n: 16.0,
            }],
            500,
            2,
        )
    };
    let report = run_risk(&cfg).unwrap();
    assert_eq!(report.results[0].risk, 0.0);
    // Only the single head coordinate is estimated; its risk is at most lambda.
    assert!(report.results[1].risk <= 1.0 / 16.0 + 3.0 * report.results[1].se);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bound_shape_is_positive_and_grows_with_s(s in 1usize..16, extra in 1usize..64, r in 0.1f64..10.0, n in 1.0f64..100.0) {
        let p = s + extra;
        let a = Cell { s, p, r, sigma2: 1.0, n }.bound_shape();
        let b = Cell { s: s + 1, p: p + 1, r, sigma2: 1.0, n }.bound_shape();
        prop_assert!(a > 0.0 && b > a);
    }

    #[test]
    fn every_estimator_risk_is_finite(seed in 0u64..1000, s in 1usize..6, n in 0.5f64..32.0) {
        let cfg = config(Estimator::ALL.to_vec(), vec![Cell { s, p: 12, r: 3.0, sigma2: 1.0, n }], 20, seed);
        let report = run_risk(&cfg).unwrap();
        prop_assert!(report.results.iter().all(|r| r.risk.is_finite() && r.risk >= 0.0 && r.se.is_finite()));
    }
}
