//! Per-device synthesized-data amount and CPU frequency for fixed compute
//! deadlines.
//!
//! Substituting the learning curve and the latency equality into the compute
//! energy turns the problem into `min sum rho_i (gamma + delta_i)^(-3/beta)`
//! over local errors `delta_i` in boxes, with `sum delta_i` pinned to the
//! error budget. Stationarity gives
//! `delta_i(nu) = clamp((3 rho_i / (beta nu))^(beta/(beta+3)) - gamma)` and the
//! multiplier `nu` is found by bisection, since `sum delta_i(nu)` is
//! non-increasing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning_curve::{local_error, required_mixed_size, CurveParams};
use crate::system_model::{DeviceProfile, Scenario};

pub const NU_REL_TOL: f64 = 1e-10;
pub const SUM_ABS_TOL_PER_DEVICE: f64 = 1e-9;
pub const MAX_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceComputeTerms {
    pub rho: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub t_cmp: f64,
    pub d_loc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeSubproblem {
    pub devices: Vec<DeviceComputeTerms>,
    pub budget: f64,
    pub curve: CurveParams,
    pub cycles_per_sample: f64,
    pub d_gen_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeSolution {
    pub delta: Vec<f64>,
    pub d_gen: Vec<f64>,
    pub freq: Vec<f64>,
    pub nu: f64,
    pub nu_range: (f64, f64),
    /// Compute energy `sum rho_i (gamma + delta_i)^(-3/beta)`.
    pub objective: f64,
    pub iterations: usize,
}

/// Box on the local error reachable within `t_cmp`: the most data the device
/// can process (capped by frequency and by the synthesis limit) bounds it
/// below, local data alone bounds it above.
pub fn delta_bounds(dev: &DeviceProfile, t_cmp: f64, scenario: &Scenario) -> Result<(f64, f64)> {
    if !(t_cmp > 0.0) {
        return Err(Error::DeviceInfeasible {
            device: dev.id,
            reason: format!("non-positive compute time {t_cmp}"),
        });
    }
    let d_loc = dev.local_count as f64;
    let by_freq = dev.max_freq * t_cmp / scenario.cycles_per_sample();
    if by_freq < d_loc * (1.0 - 1e-9) {
        return Err(Error::DeviceInfeasible {
            device: dev.id,
            reason: format!(
                "can process {by_freq:.3} samples in {t_cmp} s but holds {d_loc} locally"
            ),
        });
    }
    let reachable = by_freq.max(d_loc).min(d_loc + scenario.d_gen_max);
    let c = &scenario.curve;
    let delta_min = c.alpha * reachable.powf(-c.beta) - c.gamma;
    let delta_max = local_error(d_loc, 0.0, c)?;
    Ok((delta_min.min(delta_max), delta_max))
}

/// `eps (tau omega)^3 / (t_cmp^2 alpha^(-3/beta))`.
pub fn rho(dev: &DeviceProfile, t_cmp: f64, scenario: &Scenario) -> f64 {
    let c = &scenario.curve;
    let cps = scenario.cycles_per_sample();
    dev.energy_coeff * cps.powi(3) / (t_cmp * t_cmp * c.alpha.powf(-3.0 / c.beta))
}

impl ComputeSubproblem {
    pub fn build(scenario: &Scenario, t_cmp: &[f64], budget: f64) -> Result<Self> {
        if t_cmp.len() != scenario.devices.len() {
            return Err(Error::InvalidAllocation(format!(
                "{} compute deadlines for {} devices",
                t_cmp.len(),
                scenario.devices.len()
            )));
        }
        let devices = scenario
            .devices
            .iter()
            .zip(t_cmp)
            .map(|(dev, &t)| {
                let (delta_min, delta_max) = delta_bounds(dev, t, scenario)?;
                Ok(DeviceComputeTerms {
                    rho: rho(dev, t, scenario),
                    delta_min,
                    delta_max,
                    t_cmp: t,
                    d_loc: dev.local_count as f64,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            devices,
            budget,
            curve: scenario.curve,
            cycles_per_sample: scenario.cycles_per_sample(),
            d_gen_max: scenario.d_gen_max,
        })
    }

    pub fn bounds_sum(&self) -> (f64, f64) {
        self.devices.iter().fold((0.0, 0.0), |(lo, hi), d| {
            (lo + d.delta_min, hi + d.delta_max)
        })
    }

    pub fn objective(&self, delta: &[f64]) -> f64 {
        let ex = -3.0 / self.curve.beta;
        self.devices
            .iter()
            .zip(delta)
            .map(|(d, &x)| d.rho * (self.curve.gamma + x).powf(ex))
            .sum()
    }

    /// Multiplier value at which device `i` sits exactly at local error `delta`.
    pub fn marginal(&self, i: usize, delta: f64) -> f64 {
        let b = self.curve.beta;
        3.0 * self.devices[i].rho / b * (delta + self.curve.gamma).powf(-(b + 3.0) / b)
    }

    /// Bisection bracket for the multiplier.
    pub fn nu_range(&self) -> (f64, f64) {
        let lo = (0..self.devices.len())
            .map(|i| self.marginal(i, self.devices[i].delta_max))
            .fold(f64::INFINITY, f64::min);
        let hi = (0..self.devices.len())
            .map(|i| self.marginal(i, self.devices[i].delta_min))
            .fold(0.0, f64::max);
        (lo, hi)
    }

    fn sum_at(&self, nu: f64) -> f64 {
        (0..self.devices.len()).map(|i| delta_from_nu(nu, self, i)).sum()
    }
}

/// Stationary local error of device `i` for multiplier `nu`, clamped to its box.
pub fn delta_from_nu(nu: f64, sub: &ComputeSubproblem, i: usize) -> f64 {
    let d = &sub.devices[i];
    let b = sub.curve.beta;
    let raw = (3.0 * d.rho / (b * nu)).powf(b / (b + 3.0)) - sub.curve.gamma;
    raw.clamp(d.delta_min, d.delta_max)
}

pub fn solve_p3(scenario: &Scenario, t_cmp: &[f64], budget: f64) -> Result<ComputeSolution> {
    solve_subproblem(&ComputeSubproblem::build(scenario, t_cmp, budget)?, None)
}

/// Bisection on the budget multiplier. `trace` receives `(nu, sum delta)` per step.
pub fn solve_subproblem(
    sub: &ComputeSubproblem,
    mut trace: Option<&mut Vec<(f64, f64)>>,
) -> Result<ComputeSolution> {
    let n = sub.devices.len();
    let tol = SUM_ABS_TOL_PER_DEVICE * n as f64;
    let (lo_sum, hi_sum) = sub.bounds_sum();
    if sub.budget < lo_sum - tol || sub.budget > hi_sum + tol {
        return Err(Error::InfeasibleBudget {
            budget: sub.budget,
            lower: lo_sum,
            upper: hi_sum,
        });
    }
    let range = sub.nu_range();
    let (mut lo, mut hi) = range;
    let mut iterations = 0;
    let nu;
    let delta: Vec<f64>;

    if sub.budget >= hi_sum - tol {
        // Local data alone already meets the budget.
        nu = lo;
        delta = sub.devices.iter().map(|d| d.delta_max).collect();
    } else if sub.budget <= lo_sum + tol {
        nu = hi;
        delta = sub.devices.iter().map(|d| d.delta_min).collect();
    } else {
        let mut mid;
        loop {
            mid = 0.5 * (lo + hi);
            iterations += 1;
            let s = sub.sum_at(mid);
            if let Some(t) = trace.as_deref_mut() {
                t.push((mid, s));
            }
            if (s - sub.budget).abs() <= tol || hi - lo <= NU_REL_TOL * hi {
                break;
            }
            if s > sub.budget {
                lo = mid;
            } else {
                hi = mid;
            }
            if iterations >= MAX_ITERS {
                return Err(Error::BisectionStalled(MAX_ITERS));
            }
        }
        nu = mid;
        delta = (0..n).map(|i| delta_from_nu(nu, sub, i)).collect();
    }

    let mut d_gen = Vec::with_capacity(n);
    let mut freq = Vec::with_capacity(n);
    for (d, &x) in sub.devices.iter().zip(&delta) {
        let total = required_mixed_size(x, &sub.curve)?;
        let g = (total - d.d_loc).clamp(0.0, sub.d_gen_max);
        d_gen.push(g);
        freq.push(sub.cycles_per_sample * (d.d_loc + g) / d.t_cmp);
    }
    Ok(ComputeSolution {
        objective: sub.objective(&delta),
        delta,
        d_gen,
        freq,
        nu,
        nu_range: range,
        iterations,
    })
}
