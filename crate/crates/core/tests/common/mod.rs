#![allow(dead_code)]

use fedaug_core::learning_curve::{error_budget, CurveParams};
use fedaug_core::solver_comm::CommSubproblem;
use fedaug_core::solver_compute::ComputeSubproblem;
use fedaug_core::system_model::{generate_scenario, Scenario, ScenarioConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scenario(devices: usize, seed: u64) -> Scenario {
    generate_scenario(
        &ScenarioConfig {
            devices,
            ..Default::default()
        },
        seed,
    )
    .unwrap()
}

/// Random compute instance with a budget strictly inside its feasible range.
pub fn compute_instance(seed: u64) -> (Scenario, ComputeSubproblem) {
    compute_instance_on(seed, None)
}

/// Same, optionally replacing the learning curve and synthesis cap.
pub fn compute_instance_on(seed: u64, curve: Option<(CurveParams, f64)>) -> (Scenario, ComputeSubproblem) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=3);
    let mut s = scenario(n, seed);
    if let Some((c, d_gen_max)) = curve {
        s.curve = c;
        s.d_gen_max = d_gen_max;
        s.validate().unwrap();
    }
    let t_cmp: Vec<f64> = s
        .devices
        .iter()
        .map(|d| {
            let t_min = s.cycles_per_sample() * d.local_count as f64 / d.max_freq;
            rng.random_range(1.2 * t_min..0.9 * s.t_max)
        })
        .collect();
    let probe = ComputeSubproblem::build(&s, &t_cmp, 0.0).unwrap();
    let (lo, hi) = probe.bounds_sum();
    let budget = lo + rng.random_range(0.05..0.95) * (hi - lo);
    let sub = ComputeSubproblem::build(&s, &t_cmp, budget).unwrap();
    (s, sub)
}

/// Random upload instance whose minimum bands fit in the total band.
pub fn comm_instance(seed: u64) -> (Scenario, CommSubproblem) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=3);
    let s = scenario(n, seed);
    loop {
        let t_com: Vec<f64> = (0..n).map(|_| rng.random_range(8.0..50.0)).collect();
        if let Ok(sub) = CommSubproblem::build(&s, &t_com) {
            if sub.devices.iter().map(|d| d.b_min).sum::<f64>() < 0.8 * s.bandwidth_total {
                return (s, sub);
            }
        }
    }
}

pub fn default_budget(s: &Scenario) -> f64 {
    error_budget(s.device_count(), &s.curve, s.delta_max)
}
