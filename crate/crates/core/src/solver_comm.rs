//! Bandwidth and transmit-power split for fixed upload deadlines.
//!
//! Holding the upload time at `t_com`, the power a device needs on a sub-band
//! `b` is `P(b) = (N0 b / g)(2^(S/(b t_com)) - 1)`, decreasing in `b`. The
//! energy `sum P_i(b_i) t_com_i` is convex in the bandwidths; at the optimum
//! every device either sits at its power-limited minimum bandwidth or satisfies
//! `Q_i(b_i) + varpi = 0` where `Q_i = d(P_i t_com_i)/db` and `varpi` prices the
//! shared band. `Q_i` is increasing, so both the per-device root and the
//! price are found by bisection.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lambert::{lambert_w, Branch};
use crate::system_model::Scenario;

pub const REL_TOL: f64 = 1e-10;
pub const INNER_MAX_ITERS: usize = 200;
pub const OUTER_MAX_ITERS: usize = 200;
const B_MIN_REL_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceCommTerms {
    pub t_com: f64,
    pub gain: f64,
    pub max_power: f64,
    pub b_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommSubproblem {
    pub devices: Vec<DeviceCommTerms>,
    pub bandwidth_total: f64,
    pub update_size: f64,
    pub noise_psd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommSolution {
    pub bandwidth: Vec<f64>,
    pub power: Vec<f64>,
    pub varpi: f64,
    pub varpi_range: (f64, f64),
    /// Upload energy `sum P_i t_com_i`.
    pub objective: f64,
    pub outer_iterations: usize,
    pub inner_iterations_max: usize,
}

impl CommSubproblem {
    /// Builds the subproblem and the power-limited minimum bandwidth of every
    /// device. Fails when a device cannot upload in time even on an unlimited
    /// band.
    pub fn build(scenario: &Scenario, t_com: &[f64]) -> Result<Self> {
        if t_com.len() != scenario.devices.len() {
            return Err(Error::InvalidAllocation(format!(
                "{} upload deadlines for {} devices",
                t_com.len(),
                scenario.devices.len()
            )));
        }
        let mut sub = Self {
            devices: scenario
                .devices
                .iter()
                .zip(t_com)
                .map(|(d, &t)| DeviceCommTerms {
                    t_com: t,
                    gain: d.channel_gain,
                    max_power: d.max_power,
                    b_min: f64::NAN,
                })
                .collect(),
            bandwidth_total: scenario.bandwidth_total,
            update_size: scenario.update_size,
            noise_psd: scenario.noise_psd,
        };
        for i in 0..sub.devices.len() {
            if !(sub.devices[i].t_com > 0.0) {
                return Err(Error::DeviceInfeasible {
                    device: scenario.devices[i].id,
                    reason: format!("non-positive upload time {}", sub.devices[i].t_com),
                });
            }
            sub.devices[i].b_min = min_bandwidth_seeded(&sub, i).map_err(|e| match e {
                Error::UnreachableServer => Error::DeviceInfeasible {
                    device: scenario.devices[i].id,
                    reason: format!(
                        "cannot upload {} bits within {} s at full power",
                        sub.update_size, sub.devices[i].t_com
                    ),
                },
                other => other,
            })?;
        }
        Ok(sub)
    }

    /// `kappa_i = N0 S ln2 / (g_i P_i^max)`.
    pub fn kappa(&self, i: usize) -> f64 {
        let d = &self.devices[i];
        self.noise_psd * self.update_size * LN_2 / (d.gain * d.max_power)
    }

    pub fn energy(&self, bandwidth: &[f64]) -> f64 {
        bandwidth
            .iter()
            .enumerate()
            .map(|(i, &b)| power_from_bandwidth(b, self, i) * self.devices[i].t_com)
            .sum()
    }

    /// Bracket for the band price `varpi`.
    pub fn varpi_range(&self) -> (f64, f64) {
        let n = self.devices.len();
        let lo = (0..n)
            .map(|i| -q_function(self.bandwidth_total, self, i))
            .fold(f64::INFINITY, f64::min);
        let hi = (0..n)
            .map(|i| -q_function(self.devices[i].b_min, self, i))
            .fold(0.0, f64::max);
        (lo, hi)
    }
}

/// Transmit power that uploads `S` bits in exactly `t_com` on band `b`.
pub fn power_from_bandwidth(b: f64, sub: &CommSubproblem, i: usize) -> f64 {
    let d = &sub.devices[i];
    let u = sub.update_size * LN_2 / (b * d.t_com);
    sub.noise_psd * b / d.gain * u.exp_m1()
}

/// Smallest band on which the device meets its deadline within `P^max`,
/// found by bisection on the decreasing power curve.
pub fn min_bandwidth(sub: &CommSubproblem, i: usize) -> Result<f64> {
    let d = &sub.devices[i];
    if !(d.max_power > 0.0) {
        return Err(Error::UnreachableServer);
    }
    // As b grows the required power falls to kappa P^max / t_com.
    if sub.kappa(i) / d.t_com >= 1.0 {
        return Err(Error::UnreachableServer);
    }
    let over = |b: f64| power_from_bandwidth(b, sub, i) > d.max_power;
    let mut hi = sub.update_size / d.t_com;
    while over(hi) {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::UnreachableServer);
        }
    }
    let mut lo = hi;
    while !over(lo) {
        lo *= 0.5;
        if lo < f64::MIN_POSITIVE {
            return Ok(lo);
        }
    }
    for _ in 0..INNER_MAX_ITERS {
        if hi - lo <= B_MIN_REL_TOL * hi {
            return Ok(hi);
        }
        let mid = 0.5 * (lo + hi);
        if over(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::BisectionStalled(INNER_MAX_ITERS))
}

/// Same root as [`min_bandwidth`], with the bisection started from a tight
/// bracket around the Lambert W value when it is available.
pub fn min_bandwidth_seeded(sub: &CommSubproblem, i: usize) -> Result<f64> {
    let d = &sub.devices[i];
    let Some(guess) = min_bandwidth_lambert(sub, i) else {
        return min_bandwidth(sub, i);
    };
    let over = |b: f64| power_from_bandwidth(b, sub, i) > d.max_power;
    let (mut lo, mut hi) = (guess * (1.0 - 1e-7), guess * (1.0 + 1e-7));
    if !(over(lo) && !over(hi)) {
        return min_bandwidth(sub, i);
    }
    for _ in 0..INNER_MAX_ITERS {
        if hi - lo <= B_MIN_REL_TOL * hi {
            return Ok(hi);
        }
        let mid = 0.5 * (lo + hi);
        if over(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::BisectionStalled(INNER_MAX_ITERS))
}

/// Closed form of [`min_bandwidth`] through Lambert W:
/// `b = -S ln2 / (t_com W(-(kappa/t_com) e^(-kappa/t_com)) + kappa)`.
///
/// `-kappa/t_com` itself is always a root of `W`, the trivial one; the useful
/// value lives on the secondary branch. For `kappa / t_com >= 1` the device
/// cannot meet the deadline on any band and `None` is returned.
pub fn min_bandwidth_lambert(sub: &CommSubproblem, i: usize) -> Option<f64> {
    let d = &sub.devices[i];
    let kappa = sub.kappa(i);
    let x = kappa / d.t_com;
    if x >= 1.0 {
        return None;
    }
    let w = lambert_w(-x * (-x).exp(), Branch::Secondary)?;
    let denom = d.t_com * w + kappa;
    (denom < 0.0).then(|| -sub.update_size * LN_2 / denom)
}

/// Derivative of the upload energy `P(b) t_com` with respect to `b`.
pub fn q_function(b: f64, sub: &CommSubproblem, i: usize) -> f64 {
    let d = &sub.devices[i];
    let u = sub.update_size * LN_2 / (d.t_com * b);
    sub.noise_psd * d.t_com / d.gain * expm1_minus_u_exp(u)
}

/// `(e^u - 1) - u e^u`, accurate for small `u` where the terms cancel.
fn expm1_minus_u_exp(u: f64) -> f64 {
    if u < 0.1 {
        // sum_{k>=2} u^k (1 - k) / k!
        let mut term = u; // u^k / k! at k = 1
        let mut acc = 0.0;
        for k in 2..20 {
            term *= u / k as f64;
            acc += (1.0 - k as f64) * term;
        }
        acc
    } else {
        let e = u.exp();
        (e - 1.0) - u * e
    }
}

/// Per-device band for a given price: root of `Q_i(b) + varpi = 0` on
/// `[b_min, B]`, clamped to the interval ends. Returns the bands and the
/// largest inner step count.
pub fn bandwidth_from_multiplier(varpi: f64, sub: &CommSubproblem) -> Result<(Vec<f64>, usize)> {
    let mut steps_max = 0;
    let mut out = Vec::with_capacity(sub.devices.len());
    for i in 0..sub.devices.len() {
        let (b, steps) = inner_root(varpi, sub, i)?;
        steps_max = steps_max.max(steps);
        out.push(b);
    }
    Ok((out, steps_max))
}

fn inner_root(varpi: f64, sub: &CommSubproblem, i: usize) -> Result<(f64, usize)> {
    inner_root_in(varpi, sub, i, sub.devices[i].b_min, sub.bandwidth_total)
}

/// Root search restricted to `[lo, hi]`, a sub-bracket of `[b_min, B]` known
/// to contain the root.
fn inner_root_in(
    varpi: f64,
    sub: &CommSubproblem,
    i: usize,
    mut lo: f64,
    mut hi: f64,
) -> Result<(f64, usize)> {
    if lo >= hi || q_function(lo, sub, i) + varpi >= 0.0 {
        return Ok((lo, 0));
    }
    if q_function(hi, sub, i) + varpi <= 0.0 {
        return Ok((hi, 0));
    }
    let mut steps = 0;
    loop {
        let mid = 0.5 * (lo + hi);
        steps += 1;
        if hi - lo <= REL_TOL * hi {
            return Ok((mid, steps));
        }
        if q_function(mid, sub, i) + varpi > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if steps >= INNER_MAX_ITERS {
            return Err(Error::BisectionStalled(INNER_MAX_ITERS));
        }
    }
}

/// Hierarchical bisection: outer search on the band price, inner per-device
/// root search. `trace` receives `(varpi, sum b)` per outer step.
pub fn solve_p4(sub: &CommSubproblem, mut trace: Option<&mut Vec<(f64, f64)>>) -> Result<CommSolution> {
    let total = sub.bandwidth_total;
    let required: f64 = sub.devices.iter().map(|d| d.b_min).sum();
    if required > total * (1.0 + 1e-12) {
        return Err(Error::InfeasibleBandwidth {
            required,
            available: total,
            shortfall: required - total,
        });
    }
    let range = sub.varpi_range();
    let (mut lo, mut hi) = range;
    let mut outer = 0;
    let mut inner_max = 0;
    // b_i(varpi) is non-increasing, so the roots at the current price bracket
    // ends also bracket every later inner search.
    let mut b_lo: Vec<f64> = sub.devices.iter().map(|d| d.b_min).collect();
    let mut b_hi = vec![total; sub.devices.len()];
    let (bandwidth, varpi) = if required >= total * (1.0 - 1e-12) {
        (b_lo, hi)
    } else {
        loop {
            let mid = 0.5 * (lo + hi);
            outer += 1;
            let mut b = Vec::with_capacity(sub.devices.len());
            for i in 0..sub.devices.len() {
                let (bi, steps) = inner_root_in(mid, sub, i, b_lo[i], b_hi[i])?;
                inner_max = inner_max.max(steps);
                b.push(bi);
            }
            let s: f64 = b.iter().sum();
            if let Some(t) = trace.as_deref_mut() {
                t.push((mid, s));
            }
            if (s - total).abs() <= REL_TOL * total || hi - lo <= REL_TOL * hi {
                break (b, mid);
            }
            if s > total {
                lo = mid;
                b_hi = b;
            } else {
                hi = mid;
                b_lo = b;
            }
            if outer >= OUTER_MAX_ITERS {
                return Err(Error::BisectionStalled(OUTER_MAX_ITERS));
            }
        }
    };
    let power: Vec<f64> = bandwidth
        .iter()
        .enumerate()
        .map(|(i, &b)| power_from_bandwidth(b, sub, i))
        .collect();
    Ok(CommSolution {
        objective: sub.energy(&bandwidth),
        bandwidth,
        power,
        varpi,
        varpi_range: range,
        outer_iterations: outer,
        inner_iterations_max: inner_max,
    })
}

/// Powers for a prescribed band split. Fails when a device would need more
/// than its maximum power.
pub fn fixed_bandwidth(sub: &CommSubproblem, bandwidth: &[f64]) -> Result<CommSolution> {
    let mut power = Vec::with_capacity(bandwidth.len());
    for (i, &b) in bandwidth.iter().enumerate() {
        let p = power_from_bandwidth(b, sub, i);
        if !(p <= sub.devices[i].max_power * (1.0 + 1e-9)) {
            return Err(Error::InfeasibleBandwidth {
                required: sub.devices[i].b_min,
                available: b,
                shortfall: sub.devices[i].b_min - b,
            });
        }
        power.push(p);
    }
    Ok(CommSolution {
        objective: sub.energy(bandwidth),
        bandwidth: bandwidth.to_vec(),
        power,
        varpi: f64::NAN,
        varpi_range: (f64::NAN, f64::NAN),
        outer_iterations: 0,
        inner_iterations_max: 0,
    })
}
