//! End-to-end experiments: baseline policies, surrogate training
//! trajectories, cost-to-target accounting, gradient similarity and the
//! exhaustive oracles used to validate the subproblem solvers.
//!
//! Trajectories are model-consistent, not empirical: the global error after
//! `n` rounds is `exp(n (mean_local_error - 1) / zeta)`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ce_optimizer::{assemble, solve_p1_with, CEConfig, CategoryRule, P1Solution, SplitMode};
use crate::error::{Error, Result};
use crate::learning_curve::{local_error, required_mixed_size};
use crate::solver_comm::{q_function, CommSubproblem};
use crate::solver_compute::ComputeSubproblem;
use crate::system_model::{compute_energy, round_metrics, Allocation, RoundMetrics, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Policy {
    #[serde(rename = "FIMI")]
    Fimi,
    #[serde(rename = "TFL")]
    Tfl,
    #[serde(rename = "HDC")]
    Hdc,
    #[serde(rename = "UNIFORM_BW")]
    UniformBw,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Fimi, Policy::Tfl, Policy::Hdc, Policy::UniformBw];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Fimi => "FIMI",
            Policy::Tfl => "TFL",
            Policy::Hdc => "HDC",
            Policy::UniformBw => "UNIFORM_BW",
        }
    }

    pub fn mode(self) -> SplitMode {
        SplitMode {
            augment: self != Policy::Tfl,
            uniform_bandwidth: self == Policy::UniformBw,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::config(
                    "policy",
                    format!("unknown policy {s:?}, expected FIMI, TFL, HDC or UNIFORM_BW"),
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub round: u32,
    pub delta: f64,
    pub cum_energy_j: f64,
    pub cum_latency_s: f64,
    pub cum_uplink_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub mean_local_error: f64,
    pub points: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRun {
    pub policy: Policy,
    pub allocation: Allocation,
    pub trajectory: Trajectory,
    pub round: RoundMetrics,
    pub solution: P1Solution,
}

/// Solves the scenario under a policy and rolls the surrogate model forward.
pub fn run_policy(policy: Policy, scenario: &Scenario, ce: &CEConfig, seed: u64) -> Result<PolicyRun> {
    let ce = CEConfig {
        seed,
        ..ce.clone()
    };
    let (solution, allocation) = plan(policy, scenario, &ce).map_err(|e| match e {
        Error::InfeasibleBudget { .. }
        | Error::InfeasibleBandwidth { .. }
        | Error::NoFeasibleRegion(_)
        | Error::DeviceInfeasible { .. } => Error::PolicyInfeasible(format!("{policy}: {e}")),
        other => other,
    })?;
    let round = round_metrics(scenario, &allocation)?;
    let trajectory = simulate(scenario, &allocation, &round)?;
    Ok(PolicyRun {
        policy,
        allocation,
        trajectory,
        round,
        solution,
    })
}

/// The policy's search result and allocation, with solver errors passed through.
pub fn plan(policy: Policy, scenario: &Scenario, ce: &CEConfig) -> Result<(P1Solution, Allocation)> {
    let solution = solve_p1_with(scenario, ce, policy.mode())?;
    let allocation = match policy {
        Policy::Hdc => assemble(scenario, &solution.split, CategoryRule::LeastPopulated)?,
        _ => solution.allocation.clone(),
    };
    Ok((solution, allocation))
}

/// Global-error trajectory over the scenario's round count at fixed per-round cost.
pub fn simulate(scenario: &Scenario, alloc: &Allocation, round: &RoundMetrics) -> Result<Trajectory> {
    let n = scenario.device_count() as f64;
    let mut sum = 0.0;
    for (dev, a) in scenario.devices.iter().zip(&alloc.devices) {
        sum += local_error(dev.local_count as f64, a.d_gen, &scenario.curve)?;
    }
    let mean = sum / n;
    Ok(trajectory(mean, scenario.curve.zeta, scenario.curve.global_rounds, round))
}

pub fn trajectory(mean_local_error: f64, zeta: f64, rounds: u32, round: &RoundMetrics) -> Trajectory {
    let points = (0..=rounds)
        .map(|k| {
            let n = k as f64;
            TrajectoryPoint {
                round: k,
                delta: (n * (mean_local_error - 1.0) / zeta).exp(),
                cum_energy_j: n * round.energy_j,
                cum_latency_s: n * round.latency_s,
                cum_uplink_bits: k as u64 * round.uplink_bits,
            }
        })
        .collect();
    Trajectory {
        mean_local_error,
        points,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMetrics {
    pub energy_j: f64,
    pub latency_s: f64,
    pub uplink_bits: u64,
    pub rounds: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetOutcome {
    Reached(TargetMetrics),
    NotReached,
}

impl TargetOutcome {
    /// Energy to reach the target, infinite when it is never reached.
    pub fn energy(&self) -> f64 {
        match self {
            TargetOutcome::Reached(m) => m.energy_j,
            TargetOutcome::NotReached => f64::INFINITY,
        }
    }
}

/// Relative slack when comparing the trajectory against the target, so a
/// run that lands exactly on it counts as reaching it.
pub const TARGET_REL_TOL: f64 = 1e-6;

pub fn metrics_at_target(traj: &Trajectory, target_error: f64) -> TargetOutcome {
    traj.points
        .iter()
        .find(|p| p.delta <= target_error * (1.0 + TARGET_REL_TOL))
        .map_or(TargetOutcome::NotReached, |p| {
            TargetOutcome::Reached(TargetMetrics {
                energy_j: p.cum_energy_j,
                latency_s: p.cum_latency_s,
                uplink_bits: p.cum_uplink_bits,
                rounds: p.round,
            })
        })
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in &traj.points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub round_energy_j: f64,
    pub round_latency_s: f64,
    pub mean_local_error: f64,
    pub final_error: f64,
    pub target_error: f64,
    pub at_target: TargetOutcome,
}

pub fn summarize(scenario: &Scenario, runs: &[PolicyRun]) -> BTreeMap<String, PolicySummary> {
    runs.iter()
        .map(|r| {
            let last = r.trajectory.points.last().map_or(1.0, |p| p.delta);
            (
                r.policy.name().to_string(),
                PolicySummary {
                    round_energy_j: r.round.energy_j,
                    round_latency_s: r.round.latency_s,
                    mean_local_error: r.trajectory.mean_local_error,
                    final_error: last,
                    target_error: scenario.delta_max,
                    at_target: metrics_at_target(&r.trajectory, scenario.delta_max),
                },
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Gradient similarity

/// Mean over layers of `(cos + 1) / 2` between two layered gradients.
pub fn gradient_similarity(g_ref: &[Vec<f64>], g_dev: &[Vec<f64>]) -> Result<f64> {
    if g_ref.is_empty() || g_ref.len() != g_dev.len() {
        return Err(Error::DegenerateGradient(format!(
            "layer counts differ or are zero: {} vs {}",
            g_ref.len(),
            g_dev.len()
        )));
    }
    let mut acc = 0.0;
    for (l, (a, b)) in g_ref.iter().zip(g_dev).enumerate() {
        if a.len() != b.len() {
            return Err(Error::DegenerateGradient(format!(
                "layer {l} dimensions differ: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(na > 0.0 && nb > 0.0) {
            return Err(Error::DegenerateGradient(format!("layer {l} has zero norm")));
        }
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        acc += (dot / (na * nb)).clamp(-1.0, 1.0) + 1.0;
    }
    Ok(acc / (2.0 * g_ref.len() as f64))
}

/// Reads a JSON list of per-layer arrays.
pub fn read_gradients(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

// ---------------------------------------------------------------------------
// Exhaustive oracles

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub objective: f64,
    pub argmin: Vec<f64>,
    /// Largest objective gap between the true optimum and the best grid point.
    pub resolution_bound: f64,
    pub points: usize,
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let mut v = Vec::new();
    let mut k = 0u64;
    loop {
        let x = lo + k as f64 * step;
        if x >= hi {
            break;
        }
        v.push(x);
        k += 1;
    }
    v.push(hi);
    v
}

/// Scans the slice `sum x = total` with one coordinate filled from the
/// equality and the others on the grid, trying every coordinate as the
/// filled one so boxes binding on any device are reached exactly.
fn scan(
    boxes: &[(f64, f64)],
    total: f64,
    step: f64,
    cost: &dyn Fn(&[f64]) -> f64,
) -> Option<(f64, Vec<f64>, usize)> {
    let n = boxes.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut points = 0;
    let axes: Vec<Vec<f64>> = boxes.iter().map(|&(lo, hi)| grid(lo, hi, step)).collect();
    let dependents = if n == 1 { 1 } else { n };
    for dep in 0..dependents {
        let free: Vec<usize> = (0..n).filter(|&k| k != dep).collect();
        let mut idx = vec![0usize; free.len()];
        let mut x = vec![0.0; n];
        loop {
            for (j, &k) in free.iter().enumerate() {
                x[k] = axes[k][idx[j]];
            }
            let rest: f64 = free.iter().map(|&k| x[k]).sum();
            let last = total - rest;
            let (lo, hi) = boxes[dep];
            if last >= lo && last <= hi {
                x[dep] = last;
                points += 1;
                let c = cost(&x);
                if best.as_ref().is_none_or(|b| c < b.0) {
                    best = Some((c, x.clone()));
                }
            }
            // Odometer increment over the free axes.
            let mut j = 0;
            loop {
                if j == free.len() {
                    break;
                }
                idx[j] += 1;
                if idx[j] < axes[free[j]].len() {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == free.len() {
                break;
            }
        }
    }
    best.map(|(c, x)| (c, x, points))
}

/// Exhaustive search over local errors on `sum delta = budget` for up to
/// three devices. Energy is evaluated from the cost model directly: the data
/// amount that reaches each error, and the frequency that processes it in
/// `t_cmp`.
pub fn oracle_p3(scenario: &Scenario, sub: &ComputeSubproblem, step: f64) -> Result<OracleResult> {
    let n = sub.devices.len();
    if n == 0 || n > 3 || n != scenario.device_count() {
        return Err(Error::config("oracle.devices", "oracle handles 1 to 3 devices"));
    }
    if !(step > 0.0) {
        return Err(Error::config("oracle.step", "must be positive"));
    }
    let cps = sub.cycles_per_sample;
    let cost = |delta: &[f64]| -> f64 {
        let mut e = 0.0;
        for ((dev, t), &d) in scenario.devices.iter().zip(&sub.devices).zip(delta) {
            let total = match required_mixed_size(d, &sub.curve) {
                Ok(v) => v,
                Err(_) => return f64::INFINITY,
            };
            let f = cps * total / t.t_cmp;
            match compute_energy(dev, total, f, cps) {
                Ok(v) => e += v,
                Err(_) => return f64::INFINITY,
            }
        }
        e
    };
    let boxes: Vec<(f64, f64)> = sub.devices.iter().map(|d| (d.delta_min, d.delta_max)).collect();
    let (objective, argmin, points) = scan(&boxes, sub.budget, step, &cost).ok_or_else(|| {
        let (lower, upper) = sub.bounds_sum();
        Error::InfeasibleBudget {
            budget: sub.budget,
            lower,
            upper,
        }
    })?;
    let slope: f64 = (0..n).map(|i| sub.marginal(i, sub.devices[i].delta_min)).sum();
    Ok(OracleResult {
        objective,
        argmin,
        resolution_bound: (n - 1) as f64 * step * slope,
        points,
    })
}

/// Exhaustive search over bandwidth splits with `sum b = B` and `b_i >= b_min`
/// for up to three devices; `step_frac` is the grid step as a fraction of `B`.
pub fn oracle_p4(sub: &CommSubproblem, step_frac: f64) -> Result<OracleResult> {
    let n = sub.devices.len();
    if n == 0 || n > 3 {
        return Err(Error::config("oracle.devices", "oracle handles 1 to 3 devices"));
    }
    if !(step_frac > 0.0) {
        return Err(Error::config("oracle.step", "must be positive"));
    }
    let total = sub.bandwidth_total;
    let step = step_frac * total;
    let cost = |b: &[f64]| -> f64 {
        sub.devices
            .iter()
            .zip(b)
            .map(|(d, &bi)| {
                let p = sub.noise_psd * bi / d.gain
                    * (2f64.powf(sub.update_size / (bi * d.t_com)) - 1.0);
                if p > d.max_power * (1.0 + 1e-9) {
                    f64::INFINITY
                } else {
                    p * d.t_com
                }
            })
            .sum()
    };
    let boxes: Vec<(f64, f64)> = sub.devices.iter().map(|d| (d.b_min, total)).collect();
    let (objective, argmin, points) = scan(&boxes, total, step, &cost).ok_or_else(|| {
        let required: f64 = sub.devices.iter().map(|d| d.b_min).sum();
        Error::InfeasibleBandwidth {
            required,
            available: total,
            shortfall: required - total,
        }
    })?;
    let slope: f64 = (0..n).map(|i| q_function(sub.devices[i].b_min, sub, i).abs()).sum();
    Ok(OracleResult {
        objective,
        argmin,
        resolution_bound: (n - 1) as f64 * step * slope,
        points,
    })
}
