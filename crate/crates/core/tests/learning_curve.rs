use fedaug_core::learning_curve::*;
use fedaug_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params(alpha: f64, beta: f64, gamma: f64) -> CurveParams {
    CurveParams {
        alpha,
        beta,
        gamma,
        zeta: 100.0,
        global_rounds: 200,
    }
}

fn samples(alpha: f64, beta: f64, gamma: f64, sizes: &[u64], mut noise: impl FnMut(f64) -> f64) -> Vec<FitSample> {
    sizes
        .iter()
        .map(|&d| {
            let clean = alpha * (d as f64).powf(-beta) - gamma;
            FitSample::new(d, noise(clean)).unwrap()
        })
        .collect()
}

#[test]
fn unit_curve_values() {
    let p = params(1.0, 0.5, 1e-12);
    assert!((local_error(100.0, 0.0, &p).unwrap() - 0.1).abs() < 1e-9);
    assert!((local_error(100.0, 300.0, &p).unwrap() - 0.05).abs() < 1e-9);
    assert!((required_mixed_size(0.1 - 1e-12, &p).unwrap() - 100.0).abs() < 1e-6);
}

#[test]
fn curve_range_error() {
    let p = params(1.0, 0.5, 0.2);
    assert!(matches!(
        local_error(100.0, 0.0, &p),
        Err(Error::InvalidCurveRange(_))
    ));
    assert!(matches!(
        required_mixed_size(-0.3, &p),
        Err(Error::InvalidCurveRange(_))
    ));
}

#[test]
fn global_error_cases() {
    let p = params(1.0, 0.5, 0.01);
    assert_eq!(global_error(1.0, &p), 1.0);
    assert!((global_error(0.5, &p) - (-1.0f64).exp()).abs() < 1e-15);
    assert!(global_error(0.3, &p) < global_error(0.6, &p));
}

#[test]
fn default_curve_at_fitted_point() {
    let fit = fit_power_law(&proxy_samples()).unwrap();
    let p = CurveParams::default();
    let oracle = fit.alpha * 1583f64.powf(-fit.beta) - fit.gamma;
    assert!((local_error(1250.0, 333.0, &p).unwrap() - oracle).abs() < 1e-9);
}

#[test]
fn fit_recovers_noiseless_parameters() {
    let sizes: Vec<u64> = (1..=16).map(|k| 100 * k).collect();
    let fit = fit_power_law(&samples(2.0, 0.4, 0.1, &sizes, |e| e)).unwrap();
    assert!((fit.alpha - 2.0).abs() < 1e-6, "{fit:?}");
    assert!((fit.beta - 0.4).abs() < 1e-6, "{fit:?}");
    assert!((fit.gamma - 0.1).abs() < 1e-6, "{fit:?}");
}

#[test]
fn fit_residual_within_noise_scale() {
    let sizes: Vec<u64> = (1..=10).map(|k| 100 * k).collect();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise_sq = 0.0;
        let data = samples(2.0, 0.4, 0.1, &sizes, |e| {
            let n: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.005;
            noise_sq += n * n;
            e + n
        });
        let fit = fit_power_law(&data).unwrap();
        assert!(
            fit.residual_norm <= 5.0 * noise_sq.sqrt(),
            "seed {seed}: {} vs {}",
            fit.residual_norm,
            noise_sq.sqrt()
        );
    }
}

#[test]
fn fit_preconditions() {
    let two = vec![
        FitSample::new(100, 0.2).unwrap(),
        FitSample::new(100, 0.21).unwrap(),
        FitSample::new(200, 0.15).unwrap(),
    ];
    assert!(matches!(fit_power_law(&two), Err(Error::InsufficientData(_))));
}

#[test]
fn proxy_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fit.csv");
    let mut text = String::from("data_amount,observed_error\n");
    for s in proxy_samples() {
        text.push_str(&format!("{},{}\n", s.data_amount, s.observed_error));
    }
    std::fs::write(&path, text).unwrap();
    assert_eq!(read_fit_samples(&path).unwrap(), proxy_samples());
}

proptest! {
    #[test]
    fn local_error_decreasing_and_convex(
        alpha in 0.5f64..20.0,
        beta in 0.1f64..1.0,
        start in 10.0f64..1000.0,
    ) {
        // gamma small enough that the curve stays positive on the sampled range
        let top = start + 100.0 * 50.0;
        let gamma = 0.5 * alpha * top.powf(-beta);
        let p = params(alpha, beta, gamma);
        let vals: Vec<f64> = (0..100)
            .map(|k| local_error(start + 50.0 * k as f64, 0.0, &p).unwrap())
            .collect();
        for w in vals.windows(3) {
            prop_assert!(w[1] < w[0]);
            prop_assert!(w[2] - 2.0 * w[1] + w[0] > 0.0);
        }
    }

    #[test]
    fn required_size_inverts_local_error(
        alpha in 0.5f64..20.0,
        beta in 0.1f64..1.0,
        d in 1.0f64..10_000.0,
    ) {
        let gamma = 0.5 * alpha * 20_000f64.powf(-beta);
        let p = params(alpha, beta, gamma);
        let e = local_error(d, 0.0, &p).unwrap();
        let back = required_mixed_size(e, &p).unwrap();
        prop_assert!((back / d - 1.0).abs() < 1e-9);
        let split = local_error(d.ceil() - 1.0, 1.0, &p).unwrap();
        prop_assert!(split <= e + 1e-12);
    }

    #[test]
    fn budget_hits_target(
        devices in 1usize..50,
        zeta in 10.0f64..500.0,
        rounds in 10u32..1000,
        delta_max in 0.01f64..0.99,
    ) {
        let p = CurveParams { alpha: 1.0, beta: 0.5, gamma: 0.01, zeta, global_rounds: rounds };
        let b = error_budget(devices, &p, delta_max);
        let g = global_error(b / devices as f64, &p);
        prop_assert!((g / delta_max - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fit_recovers_random_noiseless_curves(
        head in 0.3f64..0.95,
        beta in 0.2f64..0.7,
        gamma_frac in 0.1f64..0.8,
    ) {
        // scale so the error at the smallest size is `head`
        let alpha = head * 100f64.powf(beta);
        let sizes: Vec<u64> = (1..=16).map(|k| 100 * k).collect();
        let gamma = gamma_frac * alpha * 1600f64.powf(-beta);
        let fit = fit_power_law(&samples(alpha, beta, gamma, &sizes, |e| e)).unwrap();
        prop_assert!((fit.alpha - alpha).abs() < 1e-6);
        prop_assert!((fit.beta - beta).abs() < 1e-6);
        prop_assert!((fit.gamma - gamma).abs() < 1e-6);
    }
}
