//! Independent re-validation of an allocation against the scenario's
//! constraints, recomputed from the cost models rather than taken from the
//! solver.

use serde::{Deserialize, Serialize};

use crate::learning_curve::{global_error, local_error};
use crate::system_model::{round_metrics, Allocation, Scenario};

pub const POWER_REL_TOL: f64 = 1e-9;
pub const FREQ_REL_TOL: f64 = 1e-9;
pub const BANDWIDTH_REL_TOL: f64 = 1e-6;
pub const LATENCY_REL_TOL: f64 = 1e-6;
pub const ERROR_REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: String,
    pub device: Option<usize>,
    pub value: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
    pub round_energy_j: f64,
    pub max_latency_s: f64,
    pub t_max: f64,
    /// `|max latency - T^max| / T^max`.
    pub latency_gap_rel: f64,
    pub bandwidth_sum: f64,
    pub bandwidth_total: f64,
    pub global_error: f64,
    pub delta_max: f64,
    /// `|global error - delta_max| / delta_max`.
    pub error_gap_rel: f64,
}

/// Checks box, power, frequency, band, deadline and error-target constraints.
/// With `require_target` off the error target is reported but not enforced,
/// as for a policy that trains on local data only.
pub fn check_allocation(scenario: &Scenario, alloc: &Allocation, require_target: bool) -> ConstraintReport {
    let mut violations = Vec::new();
    let mut flag = |constraint: &str, device: Option<usize>, value: f64, limit: f64| {
        violations.push(Violation {
            constraint: constraint.to_string(),
            device,
            value,
            limit,
        });
    };
    if alloc.devices.len() != scenario.devices.len() {
        flag(
            "device_count",
            None,
            alloc.devices.len() as f64,
            scenario.devices.len() as f64,
        );
        return ConstraintReport {
            feasible: false,
            violations,
            round_energy_j: f64::NAN,
            max_latency_s: f64::NAN,
            t_max: scenario.t_max,
            latency_gap_rel: f64::NAN,
            bandwidth_sum: f64::NAN,
            bandwidth_total: scenario.bandwidth_total,
            global_error: f64::NAN,
            delta_max: scenario.delta_max,
            error_gap_rel: f64::NAN,
        };
    }

    let mut local_sum = 0.0;
    for (dev, a) in scenario.devices.iter().zip(&alloc.devices) {
        let id = Some(dev.id);
        if !(a.d_gen >= 0.0 && a.d_gen <= scenario.d_gen_max * (1.0 + 1e-12)) {
            flag("d_gen_range", id, a.d_gen, scenario.d_gen_max);
        }
        if !(a.freq > 0.0 && a.freq <= dev.max_freq * (1.0 + FREQ_REL_TOL)) {
            flag("max_freq", id, a.freq, dev.max_freq);
        }
        if !(a.power > 0.0 && a.power <= dev.max_power * (1.0 + POWER_REL_TOL)) {
            flag("max_power", id, a.power, dev.max_power);
        }
        if !(a.bandwidth > 0.0) {
            flag("bandwidth_positive", id, a.bandwidth, 0.0);
        }
        if !(a.eta > 0.0 && a.eta < 1.0) {
            flag("eta_range", id, a.eta, 1.0);
        }
        if a.category_gen.len() != dev.category_counts.len() {
            flag(
                "category_count",
                id,
                a.category_gen.len() as f64,
                dev.category_counts.len() as f64,
            );
        }
        let cat_sum: u64 = a.category_gen.iter().sum();
        if cat_sum != a.synth_count {
            flag("category_sum", id, cat_sum as f64, a.synth_count as f64);
        }
        if (a.synth_count as f64) < a.d_gen - 1e-9 * a.d_gen.max(1.0) {
            flag("synth_count", id, a.synth_count as f64, a.d_gen);
        }
        match local_error(dev.local_count as f64, a.d_gen, &scenario.curve) {
            Ok(e) => local_sum += e,
            Err(_) => {
                flag("local_error", id, a.d_gen, f64::NAN);
                local_sum = f64::NAN;
            }
        }
    }

    let bandwidth_sum: f64 = alloc.devices.iter().map(|a| a.bandwidth).sum();
    if bandwidth_sum > scenario.bandwidth_total * (1.0 + BANDWIDTH_REL_TOL) {
        flag("bandwidth_total", None, bandwidth_sum, scenario.bandwidth_total);
    }

    let (round_energy_j, max_latency_s) = match round_metrics(scenario, alloc) {
        Ok(m) => {
            for (dev, c) in scenario.devices.iter().zip(&m.per_device) {
                let lat = c.t_cmp + c.t_com;
                if lat > scenario.t_max * (1.0 + LATENCY_REL_TOL) {
                    flag("deadline", Some(dev.id), lat, scenario.t_max);
                }
            }
            (m.energy_j, m.latency_s)
        }
        Err(e) => {
            flag(&format!("cost_model: {e}"), None, f64::NAN, f64::NAN);
            (f64::NAN, f64::NAN)
        }
    };

    let mean = local_sum / scenario.device_count() as f64;
    let global = global_error(mean, &scenario.curve);
    if require_target && !(global <= scenario.delta_max * (1.0 + ERROR_REL_TOL)) {
        flag("error_target", None, global, scenario.delta_max);
    }

    ConstraintReport {
        feasible: violations.is_empty(),
        violations,
        round_energy_j,
        max_latency_s,
        t_max: scenario.t_max,
        latency_gap_rel: (max_latency_s - scenario.t_max).abs() / scenario.t_max,
        bandwidth_sum,
        bandwidth_total: scenario.bandwidth_total,
        global_error: global,
        delta_max: scenario.delta_max,
        error_gap_rel: (global - scenario.delta_max).abs() / scenario.delta_max,
    }
}
