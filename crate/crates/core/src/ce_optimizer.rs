//! Cross-entropy search over the per-device time split `eta`.
//!
//! Device `i` computes for `eta_i T` and uploads for `(1 - eta_i) T`. For a
//! fixed split the compute and upload subproblems are solved exactly; the
//! search only has to place `eta`. Each iteration draws Gaussian samples,
//! clips them to the per-device bounds, pulls infeasible ones back toward a
//! feasible anchor, keeps the cheapest `K` and refits the sampling
//! distribution to them with smoothing.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augmentation::solve_p8;
use crate::error::{Error, Result};
use crate::learning_curve::{error_budget, local_error};
use crate::solver_comm::{fixed_bandwidth, solve_p4, CommSolution, CommSubproblem};
use crate::solver_compute::{
    delta_bounds, solve_subproblem, ComputeSubproblem, SUM_ABS_TOL_PER_DEVICE,
};
use crate::system_model::{
    compute_energy, synth_count, Allocation, DeviceAllocation, DeviceProfile, Scenario,
};

/// What to do with Gaussian draws outside `[eta_min, eta_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Clip, then pull infeasible draws back toward a known feasible split.
    Repair,
    Clip,
    /// Redraw the coordinate a few times, then clip.
    Resample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CEConfig {
    pub samples_per_iter: usize,
    pub elite_count: usize,
    pub max_iters: usize,
    pub smoothing: f64,
    pub sigma_floor: f64,
    pub seed: u64,
    /// Evaluation threads; 0 uses the global pool.
    pub workers: usize,
    pub sampling: Sampling,
}

impl Default for CEConfig {
    fn default() -> Self {
        Self {
            samples_per_iter: 100,
            elite_count: 10,
            max_iters: 50,
            smoothing: 0.7,
            sigma_floor: 1e-3,
            seed: 0,
            workers: 0,
            sampling: Sampling::Repair,
        }
    }
}

impl CEConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_iter == 0 {
            return Err(Error::config("ce.samples_per_iter", "must be at least 1"));
        }
        if self.elite_count == 0 || self.elite_count > self.samples_per_iter {
            return Err(Error::config(
                "ce.elite_count",
                "must lie in [1, samples_per_iter]",
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::config("ce.max_iters", "must be at least 1"));
        }
        if !(self.smoothing > 0.0 && self.smoothing < 1.0) {
            return Err(Error::config("ce.smoothing", "must lie in (0, 1)"));
        }
        if !(self.sigma_floor > 0.0 && self.sigma_floor.is_finite()) {
            return Err(Error::config("ce.sigma_floor", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CEState {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
    pub iter: usize,
    pub best_eta: Vec<f64>,
    pub best_objective: f64,
}

/// Which parts of the allocation the search may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMode {
    /// Optimize synthesized data; when off every device trains on local data only.
    pub augment: bool,
    /// Split the band evenly instead of optimizing it.
    pub uniform_bandwidth: bool,
}

impl Default for SplitMode {
    fn default() -> Self {
        Self {
            augment: true,
            uniform_bandwidth: false,
        }
    }
}

/// Full solution of both subproblems for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSolution {
    pub eta: Vec<f64>,
    pub delta: Vec<f64>,
    pub d_gen: Vec<f64>,
    pub freq: Vec<f64>,
    pub energy_cmp: Vec<f64>,
    pub nu: f64,
    pub nu_range: (f64, f64),
    pub compute_steps: usize,
    pub comm: CommSolution,
    pub comm_b_min: Vec<f64>,
    pub objective: f64,
}

/// A split the subproblems reject, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct Infeasible(pub Error);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub best_objective: f64,
    pub mean_sigma: f64,
    pub max_sigma: f64,
    pub feasible: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub objective_j: f64,
    pub compute_energy_j: f64,
    pub upload_energy_j: f64,
    pub error_budget: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub final_max_sigma: f64,
    pub nu: f64,
    pub varpi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P1Solution {
    pub allocation: Allocation,
    pub report: ObjectiveReport,
    pub split: SplitSolution,
    pub trace: Vec<TraceRow>,
    pub state: CEState,
}

/// `[eta_min, eta_max]`: just enough compute time for the local data at full
/// speed, and just enough upload time at full power on the widest band the
/// device could get (`B`, or `B / I` when the band is split evenly).
pub fn eta_bounds(
    dev: &DeviceProfile,
    scenario: &Scenario,
    uniform_bandwidth: bool,
) -> Result<(f64, f64)> {
    let t = scenario.t_max;
    if !(t > 0.0) {
        return Err(Error::config("t_max", "must be positive"));
    }
    let eta_min = scenario.cycles_per_sample() * dev.local_count as f64 / (t * dev.max_freq);
    let b = if uniform_bandwidth {
        scenario.bandwidth_total / scenario.device_count() as f64
    } else {
        scenario.bandwidth_total
    };
    let snr = dev.channel_gain * dev.max_power / (scenario.noise_psd * b);
    let rate = b * snr.ln_1p() / std::f64::consts::LN_2;
    let eta_max = 1.0 - scenario.update_size / (t * rate);
    if !(eta_min < eta_max) {
        return Err(Error::DeviceInfeasible {
            device: dev.id,
            reason: format!("time split bounds collapse: eta_min {eta_min} >= eta_max {eta_max}"),
        });
    }
    Ok((eta_min, eta_max))
}

/// Solves the compute and upload subproblems for a fixed split.
pub fn evaluate_split(
    eta: &[f64],
    scenario: &Scenario,
    mode: SplitMode,
) -> std::result::Result<SplitSolution, Infeasible> {
    evaluate(eta, scenario, mode).map_err(Infeasible)
}

fn evaluate(eta: &[f64], scenario: &Scenario, mode: SplitMode) -> Result<SplitSolution> {
    let n = scenario.device_count();
    if eta.len() != n {
        return Err(Error::InvalidAllocation(format!(
            "{} split factors for {n} devices",
            eta.len()
        )));
    }
    let t = scenario.t_max;
    let t_cmp: Vec<f64> = eta.iter().map(|e| e * t).collect();
    let t_com: Vec<f64> = eta.iter().map(|e| (1.0 - e) * t).collect();
    let cps = scenario.cycles_per_sample();

    let (delta, d_gen, freq, nu, nu_range, compute_steps) = if mode.augment {
        let budget = error_budget(n, &scenario.curve, scenario.delta_max);
        let sub = ComputeSubproblem::build(scenario, &t_cmp, budget)?;
        let s = solve_subproblem(&sub, None)?;
        (s.delta, s.d_gen, s.freq, s.nu, s.nu_range, s.iterations)
    } else {
        let mut delta = Vec::with_capacity(n);
        let mut freq = Vec::with_capacity(n);
        for (dev, &tc) in scenario.devices.iter().zip(&t_cmp) {
            delta.push(local_error(dev.local_count as f64, 0.0, &scenario.curve)?);
            freq.push(cps * dev.local_count as f64 / tc);
        }
        (delta, vec![0.0; n], freq, f64::NAN, (f64::NAN, f64::NAN), 0)
    };
    let energy_cmp = scenario
        .devices
        .iter()
        .zip(&d_gen)
        .zip(&freq)
        .map(|((dev, &g), &f)| compute_energy(dev, dev.local_count as f64 + g, f, cps))
        .collect::<Result<Vec<_>>>()?;

    let sub = CommSubproblem::build(scenario, &t_com)?;
    let comm = if mode.uniform_bandwidth {
        fixed_bandwidth(&sub, &vec![scenario.bandwidth_total / n as f64; n])?
    } else {
        solve_p4(&sub, None)?
    };
    let objective = energy_cmp.iter().sum::<f64>() + comm.objective;
    Ok(SplitSolution {
        eta: eta.to_vec(),
        delta,
        d_gen,
        freq,
        energy_cmp,
        nu,
        nu_range,
        compute_steps,
        comm_b_min: sub.devices.iter().map(|d| d.b_min).collect(),
        comm,
        objective,
    })
}

/// Checks the problem can be feasible at all before searching: the error
/// budget must be reachable with the longest compute windows and the minimum
/// bands must fit with the longest upload windows.
pub fn preflight(scenario: &Scenario, mode: SplitMode) -> Result<Vec<(f64, f64)>> {
    let bounds = scenario
        .devices
        .iter()
        .map(|d| eta_bounds(d, scenario, mode.uniform_bandwidth))
        .collect::<Result<Vec<_>>>()?;
    let n = scenario.device_count();
    if mode.augment {
        let budget = error_budget(n, &scenario.curve, scenario.delta_max);
        let t_cmp: Vec<f64> = bounds.iter().map(|b| b.1 * scenario.t_max).collect();
        let sub = ComputeSubproblem::build(scenario, &t_cmp, budget)?;
        let (lower, upper) = sub.bounds_sum();
        let tol = SUM_ABS_TOL_PER_DEVICE * n as f64;
        if budget < lower - tol || budget > upper + tol {
            return Err(Error::InfeasibleBudget {
                budget,
                lower,
                upper,
            });
        }
    }
    let t_com: Vec<f64> = bounds.iter().map(|b| (1.0 - b.0) * scenario.t_max).collect();
    let sub = CommSubproblem::build(scenario, &t_com)?;
    let available = if mode.uniform_bandwidth {
        scenario.bandwidth_total / n as f64
    } else {
        scenario.bandwidth_total
    };
    let required = if mode.uniform_bandwidth {
        sub.devices.iter().map(|d| d.b_min).fold(0.0, f64::max)
    } else {
        sub.devices.iter().map(|d| d.b_min).sum()
    };
    if required > available * (1.0 + 1e-12) {
        return Err(Error::InfeasibleBandwidth {
            required,
            available,
            shortfall: required - available,
        });
    }
    Ok(bounds)
}

/// Cheap necessary conditions for a split to be solvable: the error budget
/// is reachable with the given compute windows and the minimum bands fit.
pub fn split_feasible(eta: &[f64], scenario: &Scenario, mode: SplitMode) -> bool {
    compute_side_ok(eta, scenario, mode) && bandwidth_side_ok(eta, scenario, mode)
}

fn compute_side_ok(eta: &[f64], scenario: &Scenario, mode: SplitMode) -> bool {
    let mut lower = 0.0;
    for (dev, &e) in scenario.devices.iter().zip(eta) {
        match delta_bounds(dev, e * scenario.t_max, scenario) {
            Ok((lo, _)) => lower += lo,
            Err(_) => return false,
        }
    }
    if !mode.augment {
        return true;
    }
    let n = scenario.device_count();
    let budget = error_budget(n, &scenario.curve, scenario.delta_max);
    budget >= lower - SUM_ABS_TOL_PER_DEVICE * n as f64
}

fn bandwidth_side_ok(eta: &[f64], scenario: &Scenario, mode: SplitMode) -> bool {
    let t_com: Vec<f64> = eta.iter().map(|e| (1.0 - e) * scenario.t_max).collect();
    let Ok(sub) = CommSubproblem::build(scenario, &t_com) else {
        return false;
    };
    if mode.uniform_bandwidth {
        let b = scenario.bandwidth_total / scenario.device_count() as f64;
        sub.devices.iter().all(|d| d.b_min <= b)
    } else {
        sub.devices.iter().map(|d| d.b_min).sum::<f64>() <= scenario.bandwidth_total
    }
}

/// A feasible split on the segment from the `eta_min` corner to the `eta_max`
/// corner. Compute feasibility only improves and bandwidth feasibility only
/// worsens along it, so both thresholds are located by bisection and the
/// midpoint between them is returned.
pub fn feasible_anchor(
    scenario: &Scenario,
    mode: SplitMode,
    bounds: &[(f64, f64)],
) -> Option<Vec<f64>> {
    let at = |lam: f64| -> Vec<f64> {
        bounds.iter().map(|&(lo, hi)| lo + lam * (hi - lo)).collect()
    };
    let compute_ok = |lam: f64| compute_side_ok(&at(lam), scenario, mode);
    let band_ok = |lam: f64| bandwidth_side_ok(&at(lam), scenario, mode);
    let threshold = |ok_at_one: bool, test: &dyn Fn(f64) -> bool| {
        // Boundary of a predicate that flips once on [0, 1].
        let (mut a, mut b) = (0.0, 1.0);
        for _ in 0..ANCHOR_STEPS {
            let m = 0.5 * (a + b);
            if test(m) == ok_at_one {
                b = m;
            } else {
                a = m;
            }
        }
        if ok_at_one {
            b
        } else {
            a
        }
    };
    let lam_c = if compute_ok(0.0) {
        0.0
    } else if compute_ok(1.0) {
        threshold(true, &compute_ok)
    } else {
        return None;
    };
    let lam_b = if band_ok(1.0) {
        1.0
    } else if band_ok(0.0) {
        threshold(false, &band_ok)
    } else {
        return None;
    };
    if lam_c > lam_b {
        return None;
    }
    let anchor = at(0.5 * (lam_c + lam_b));
    split_feasible(&anchor, scenario, mode).then_some(anchor)
}

const ANCHOR_STEPS: usize = 50;

/// Moves an infeasible draw toward `anchor` until it becomes feasible.
fn repair(eta: Vec<f64>, anchor: &[f64], scenario: &Scenario, mode: SplitMode) -> Vec<f64> {
    if split_feasible(&eta, scenario, mode) {
        return eta;
    }
    let at = |t: f64| -> Vec<f64> {
        anchor.iter().zip(&eta).map(|(&a, &x)| a + t * (x - a)).collect()
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..REPAIR_STEPS {
        let m = 0.5 * (lo + hi);
        if split_feasible(&at(m), scenario, mode) {
            lo = m;
        } else {
            hi = m;
        }
    }
    at(lo)
}

const REPAIR_STEPS: usize = 20;

fn draw(
    cfg: &CEConfig,
    iter: usize,
    sample: usize,
    mean: &[f64],
    stddev: &[f64],
    bounds: &[(f64, f64)],
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(((iter as u64) << 32) | sample as u64);
    mean.iter()
        .zip(stddev)
        .zip(bounds)
        .map(|((&m, &s), &(lo, hi))| {
            let mut x = m + s * rng.sample::<f64, _>(StandardNormal);
            if cfg.sampling == Sampling::Resample {
                for _ in 0..16 {
                    if (lo..=hi).contains(&x) {
                        break;
                    }
                    x = m + s * rng.sample::<f64, _>(StandardNormal);
                }
            }
            x.clamp(lo, hi)
        })
        .collect()
}

/// Cross-entropy search with the default split mode.
pub fn solve_p1(scenario: &Scenario, ce: &CEConfig) -> Result<P1Solution> {
    solve_p1_with(scenario, ce, SplitMode::default())
}

pub fn solve_p1_with(scenario: &Scenario, ce: &CEConfig, mode: SplitMode) -> Result<P1Solution> {
    scenario.validate()?;
    ce.validate()?;
    let bounds = preflight(scenario, mode)?;
    let pool = if ce.workers > 0 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(ce.workers)
                .build()
                .map_err(|e| Error::config("ce.workers", e.to_string()))?,
        )
    } else {
        None
    };
    let n = scenario.device_count();
    let mut mean = vec![0.5; n];
    let mut stddev = vec![1.0; n];
    let mut best: Option<SplitSolution> = None;
    let mut trace = Vec::new();
    let mut evaluations = 0;
    let mut all_infeasible_run = 0;
    let mut converged = false;
    let mut iter = 0;

    let anchor = match ce.sampling {
        Sampling::Repair => feasible_anchor(scenario, mode, &bounds),
        _ => None,
    };

    while iter < ce.max_iters {
        let run = || {
            (0..ce.samples_per_iter)
                .into_par_iter()
                .map(|m| {
                    let mut eta = draw(ce, iter, m, &mean, &stddev, &bounds);
                    if let Some(a) = &anchor {
                        eta = repair(eta, a, scenario, mode);
                    }
                    let sol = evaluate(&eta, scenario, mode).ok();
                    (eta, sol)
                })
                .collect::<Vec<_>>()
        };
        let (samples, results): (Vec<Vec<f64>>, Vec<Option<SplitSolution>>) = match &pool {
            Some(p) => p.install(run),
            None => run(),
        }
        .into_iter()
        .unzip();
        evaluations += samples.len();
        iter += 1;

        let mut order: Vec<(f64, usize)> = results
            .iter()
            .enumerate()
            .filter_map(|(m, r)| r.as_ref().map(|s| (s.objective, m)))
            .filter(|(o, _)| o.is_finite())
            .collect();
        let feasible = order.len();
        if feasible == 0 {
            all_infeasible_run += 1;
            if all_infeasible_run >= 3 {
                return Err(Error::NoFeasibleRegion(iter));
            }
        } else {
            all_infeasible_run = 0;
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let elites = &order[..feasible.min(ce.elite_count)];
            let k = elites.len() as f64;
            for i in 0..n {
                let mu = elites.iter().map(|&(_, m)| samples[m][i]).sum::<f64>() / k;
                let var = elites
                    .iter()
                    .map(|&(_, m)| (samples[m][i] - mu).powi(2))
                    .sum::<f64>()
                    / k;
                mean[i] = ce.smoothing * mean[i] + (1.0 - ce.smoothing) * mu;
                stddev[i] = ce.smoothing * stddev[i] + (1.0 - ce.smoothing) * var.sqrt();
            }
            let (obj, m) = order[0];
            if best.as_ref().is_none_or(|b| obj < b.objective) {
                best = results.into_iter().nth(m).flatten();
            }
        }
        let max_sigma = stddev.iter().copied().fold(0.0, f64::max);
        trace.push(TraceRow {
            iter,
            best_objective: best.as_ref().map_or(f64::INFINITY, |b| b.objective),
            mean_sigma: stddev.iter().sum::<f64>() / n as f64,
            max_sigma,
            feasible,
        });
        if max_sigma <= ce.sigma_floor {
            converged = true;
            break;
        }
    }

    let split = best.ok_or(Error::NoFeasibleRegion(iter))?;
    let allocation = assemble(scenario, &split, CategoryRule::Entropy)?;
    let report = ObjectiveReport {
        objective_j: split.objective,
        compute_energy_j: split.energy_cmp.iter().sum(),
        upload_energy_j: split.comm.objective,
        error_budget: error_budget(n, &scenario.curve, scenario.delta_max),
        iterations: iter,
        evaluations,
        converged,
        final_max_sigma: stddev.iter().copied().fold(0.0, f64::max),
        nu: split.nu,
        varpi: split.comm.varpi,
    };
    let state = CEState {
        mean,
        stddev,
        iter,
        best_eta: split.eta.clone(),
        best_objective: split.objective,
    };
    Ok(P1Solution {
        allocation,
        report,
        split,
        trace,
        state,
    })
}

/// How a device's synthesized samples are spread over categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CategoryRule {
    /// Entropy-maximizing water-filling.
    Entropy,
    /// Everything to the least-populated local category.
    LeastPopulated,
}

pub fn assemble(scenario: &Scenario, split: &SplitSolution, rule: CategoryRule) -> Result<Allocation> {
    let devices = scenario
        .devices
        .iter()
        .enumerate()
        .map(|(i, dev)| {
            let count = synth_count(split.d_gen[i]);
            let category_gen = match rule {
                CategoryRule::Entropy => solve_p8(&dev.category_counts, count)?.gen_counts,
                CategoryRule::LeastPopulated => {
                    let mut v = vec![0; dev.category_counts.len()];
                    if let Some(slot) =
                        v.get_mut(crate::augmentation::least_populated(&dev.category_counts))
                    {
                        *slot = count;
                    }
                    v
                }
            };
            Ok(DeviceAllocation {
                d_gen: split.d_gen[i],
                synth_count: count,
                freq: split.freq[i],
                bandwidth: split.comm.bandwidth[i],
                power: split.comm.power[i],
                eta: split.eta[i],
                category_gen,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Allocation { devices })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    /// `J M`, the most split evaluations the search may spend.
    pub evaluation_bound: usize,
    pub evaluations: usize,
    /// Largest `log2(range / tolerance)` over the bisection brackets.
    pub chi: f64,
    pub predicted_compute_steps: usize,
    pub measured_compute_steps: usize,
    pub predicted_comm_outer_steps: usize,
    pub measured_comm_outer_steps: usize,
    pub predicted_comm_inner_steps: usize,
    pub measured_comm_inner_steps: usize,
}

/// Step bound for bisection that stops once `hi - lo <= tol * hi`.
fn bisection_bound(lo: f64, hi: f64, tol: f64) -> (f64, usize) {
    if !(hi > lo) || !(lo > 0.0) {
        return (0.0, 0);
    }
    let bits = ((hi - lo) / (tol * lo)).log2().max(0.0);
    (bits, bits.ceil() as usize + 1)
}

/// Predicted versus measured work of a finished search, with bisection
/// bounds evaluated on the brackets of the returned split.
pub fn complexity_report(ce: &CEConfig, scenario: &Scenario, sol: &P1Solution) -> ComplexityReport {
    let s = &sol.split;
    let (chi_nu, compute) = bisection_bound(s.nu_range.0, s.nu_range.1, crate::solver_compute::NU_REL_TOL);
    let (chi_varpi, outer) = bisection_bound(
        s.comm.varpi_range.0,
        s.comm.varpi_range.1,
        crate::solver_comm::REL_TOL,
    );
    let (chi_b, inner) = s
        .comm_b_min
        .iter()
        .map(|&b| bisection_bound(b, scenario.bandwidth_total, crate::solver_comm::REL_TOL))
        .fold((0.0, 0), |a, b| (f64::max(a.0, b.0), a.1.max(b.1)));
    ComplexityReport {
        evaluation_bound: ce.max_iters * ce.samples_per_iter,
        evaluations: sol.report.evaluations,
        chi: chi_nu.max(chi_varpi).max(chi_b),
        predicted_compute_steps: compute,
        measured_compute_steps: s.compute_steps,
        predicted_comm_outer_steps: outer,
        measured_comm_outer_steps: s.comm.outer_iterations,
        predicted_comm_inner_steps: inner,
        measured_comm_inner_steps: s.comm.inner_iterations_max,
    }
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
