mod common;

use fedaug_core::ce_optimizer::{solve_p1, CEConfig};
use fedaug_core::system_model::*;
use proptest::prelude::*;

#[test]
fn scenario_json_round_trip() {
    for seed in 0..5 {
        let s = common::scenario(20, seed);
        let text = serde_json::to_string(&s).unwrap();
        let back: Scenario = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}

#[test]
fn allocation_json_round_trip() {
    let s = common::scenario(3, 2);
    let ce = CEConfig {
        samples_per_iter: 30,
        elite_count: 5,
        max_iters: 20,
        ..Default::default()
    };
    let alloc = solve_p1(&s, &ce).unwrap().allocation;
    let back: Allocation = serde_json::from_str(&serde_json::to_string(&alloc).unwrap()).unwrap();
    assert_eq!(back, alloc);
}

#[test]
fn scenario_config_json_round_trip() {
    let c = ScenarioConfig::default();
    let back: ScenarioConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
    assert_eq!(back, c);
}

#[test]
fn different_seeds_differ() {
    assert_ne!(common::scenario(5, 1), common::scenario(5, 2));
}

proptest! {
    #[test]
    fn energy_latency_identity(
        eps in 1e-29f64..1e-27,
        fmax in 1e9f64..3e9,
        frac in 0.01f64..1.0,
        data in 1.0f64..5000.0,
        cps in 1e5f64..1e8,
    ) {
        let dev = DeviceProfile {
            id: 0,
            energy_coeff: eps,
            max_freq: fmax,
            channel_gain: 1e-12,
            max_power: 0.1,
            local_count: 1,
            category_counts: vec![1],
            distance_km: 0.1,
        };
        let f = frac * fmax;
        let e = compute_energy(&dev, data, f, cps).unwrap();
        let t = compute_latency(&dev, data, f, cps).unwrap();
        // E * T^2 = eps (cps D)^3, independent of the frequency
        let lhs = e * t * t;
        let rhs = eps * (cps * data).powi(3);
        prop_assert!((lhs / rhs - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rate_increasing_concave_in_bandwidth(
        p in 1e-3f64..1.0,
        g in 1e-14f64..1e-9,
        b in 1e4f64..1e7,
        h in 1e2f64..1e5,
    ) {
        let n0 = 3.98e-21;
        let r0 = uplink_rate(b, p, g, n0);
        let r1 = uplink_rate(b + h, p, g, n0);
        let r2 = uplink_rate(b + 2.0 * h, p, g, n0);
        prop_assert!(r1 > r0);
        prop_assert!(r2 - r1 <= r1 - r0 + 1e-9 * r1);
        // bounded by the infinite-band limit g P / (N0 ln 2)
        prop_assert!(r2 < g * p / (n0 * std::f64::consts::LN_2));
    }

    #[test]
    fn uplink_energy_is_power_times_time(
        p in 1e-3f64..1.0,
        b in 1e5f64..1e7,
        s in 1e3f64..1e7,
    ) {
        let (t, e) = uplink_cost(s, b, p, 1e-11, 3.98e-21).unwrap();
        prop_assert!((t * uplink_rate(b, p, 1e-11, 3.98e-21) / s - 1.0).abs() < 1e-12);
        prop_assert!((e - p * t).abs() <= 1e-12 * e);
    }

    #[test]
    fn generated_scenarios_valid(seed in 0u64..1000, devices in 1usize..30) {
        let s = generate_scenario(&ScenarioConfig { devices, ..Default::default() }, seed).unwrap();
        prop_assert!(s.validate().is_ok());
        prop_assert_eq!(s.devices.len(), devices);
        for d in &s.devices {
            prop_assert_eq!(d.category_counts.iter().sum::<u64>(), d.local_count);
        }
    }
}
