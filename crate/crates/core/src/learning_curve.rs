//! Learning-curve model linking training-data volume to learning error.
//!
//! Locally, a device that trains on `D` samples reaches error
//! `alpha * D^(-beta) - gamma`. Globally, after `N` aggregation rounds with
//! average local error `d`, the federated model reaches `exp(N (d - 1) / zeta)`.
//! Equating the global error with its target gives the error budget: the sum
//! of local errors every plan must hit.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Power-law curve `alpha * D^(-beta) - gamma` plus the global convergence
/// constants (`zeta`, number of rounds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub global_rounds: u32,
}

/// Fit of [`proxy_samples`], frozen. See `defaults_match_proxy_fit`.
pub const DEFAULT_ALPHA: f64 = 9.682_244_340_703_738;
pub const DEFAULT_BETA: f64 = 0.498_038_888_911_450_43;
pub const DEFAULT_GAMMA: f64 = 0.051_314_783_470_899_4;
pub const DEFAULT_ZETA: f64 = 100.0;
pub const DEFAULT_GLOBAL_ROUNDS: u32 = 200;

impl Default for CurveParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            gamma: DEFAULT_GAMMA,
            zeta: DEFAULT_ZETA,
            global_rounds: DEFAULT_GLOBAL_ROUNDS,
        }
    }
}

impl CurveParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, zeta: f64, global_rounds: u32) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            gamma,
            zeta,
            global_rounds,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("curve.alpha", self.alpha),
            ("curve.beta", self.beta),
            ("curve.gamma", self.gamma),
            ("curve.zeta", self.zeta),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, format!("must be positive, got {v}")));
            }
        }
        if self.global_rounds == 0 {
            return Err(Error::config("curve.global_rounds", "must be at least 1"));
        }
        Ok(())
    }

    /// Checks that the local error stays positive up to `max_data` samples.
    /// The curve is decreasing, so the largest amount is the binding one.
    pub fn check_range(&self, max_data: f64) -> Result<()> {
        let e = self.alpha * max_data.powf(-self.beta) - self.gamma;
        if e > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidCurveRange(format!(
                "error at {max_data} samples is {e}"
            )))
        }
    }

    fn raw_error(&self, total: f64) -> f64 {
        self.alpha * total.powf(-self.beta) - self.gamma
    }
}

/// Local error for a device holding `d_loc` real and `d_gen` synthesized samples.
pub fn local_error(d_loc: f64, d_gen: f64, params: &CurveParams) -> Result<f64> {
    let total = d_loc + d_gen;
    if total < 1.0 {
        return Err(Error::InvalidCurveRange(format!(
            "total data amount {total} is below one sample"
        )));
    }
    let e = params.raw_error(total);
    if e > 0.0 {
        Ok(e)
    } else {
        Err(Error::InvalidCurveRange(format!(
            "error at {total} samples is {e}"
        )))
    }
}

/// Mixed dataset size needed to reach `target_error`; inverse of [`local_error`].
pub fn required_mixed_size(target_error: f64, params: &CurveParams) -> Result<f64> {
    let shifted = target_error + params.gamma;
    if shifted <= 0.0 {
        return Err(Error::InvalidCurveRange(format!(
            "target error {target_error} is at or below -gamma"
        )));
    }
    Ok((shifted / params.alpha).powf(-1.0 / params.beta))
}

/// Global error after `global_rounds` with the given average local error.
pub fn global_error(avg_local_error: f64, params: &CurveParams) -> f64 {
    (params.global_rounds as f64 * (avg_local_error - 1.0) / params.zeta).exp()
}

/// Required sum of local errors so that the global error equals `delta_max`.
pub fn error_budget(device_count: usize, params: &CurveParams, delta_max: f64) -> f64 {
    let i = device_count as f64;
    i + params.zeta * i / params.global_rounds as f64 * delta_max.ln()
}

/// Rounds needed to push the global error down to `target_delta`.
pub fn rounds_to_error(target_delta: f64, avg_local_error: f64, params: &CurveParams) -> Result<f64> {
    if avg_local_error >= 1.0 {
        return Err(Error::DivergentTraining(avg_local_error));
    }
    Ok(params.zeta * (1.0 / target_delta).ln() / (1.0 - avg_local_error))
}

// ---------------------------------------------------------------------------
// Fitting

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSample {
    pub data_amount: u64,
    pub observed_error: f64,
}

impl FitSample {
    pub fn new(data_amount: u64, observed_error: f64) -> Result<Self> {
        if data_amount < 1 {
            return Err(Error::config("data_amount", "must be at least 1"));
        }
        if !(observed_error > 0.0 && observed_error < 1.0) {
            return Err(Error::config(
                "observed_error",
                format!("must lie in (0, 1), got {observed_error}"),
            ));
        }
        Ok(Self {
            data_amount,
            observed_error,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub residual_norm: f64,
}

impl FitResult {
    pub fn into_params(self, zeta: f64, global_rounds: u32) -> Result<CurveParams> {
        CurveParams::new(self.alpha, self.beta, self.gamma, zeta, global_rounds)
    }
}

const BETA_STARTS: [f64; 4] = [0.1, 0.3, 0.5, 0.8];

/// Least-squares fit of `alpha * d^(-beta) - gamma` to observed errors.
///
/// Each start seeds `alpha`/`gamma` by solving the linear problem at a fixed
/// `beta`, then runs Levenberg-Marquardt on all three parameters. The start
/// with the smallest residual wins.
pub fn fit_power_law(samples: &[FitSample]) -> Result<FitResult> {
    if samples.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "need at least 4 samples, got {}",
            samples.len()
        )));
    }
    let mut distinct: Vec<u64> = samples.iter().map(|s| s.data_amount).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 distinct data amounts, got {}",
            distinct.len()
        )));
    }
    let first = samples[0].observed_error;
    if samples.iter().all(|s| s.observed_error == first) {
        return Err(Error::DegenerateFit(
            "all observed errors are equal; decay exponent is unidentifiable".into(),
        ));
    }

    let d: Vec<f64> = samples.iter().map(|s| s.data_amount as f64).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.observed_error).collect();

    let mut best: Option<([f64; 3], f64)> = None;
    for &b0 in &BETA_STARTS {
        let Some((a0, g0)) = linear_given_beta(&d, &y, b0) else {
            continue;
        };
        let p = levenberg_marquardt(&d, &y, [a0, b0, g0]);
        let sse = sum_sq(&d, &y, &p);
        if sse.is_finite() && best.as_ref().is_none_or(|(_, s)| sse < *s) {
            best = Some((p, sse));
        }
    }
    let (p, sse) =
        best.ok_or_else(|| Error::DegenerateFit("no start produced a finite fit".into()))?;
    Ok(FitResult {
        alpha: p[0],
        beta: p[1],
        gamma: p[2],
        residual_norm: sse.sqrt(),
    })
}

fn model(d: f64, p: &[f64; 3]) -> f64 {
    p[0] * d.powf(-p[1]) - p[2]
}

fn sum_sq(d: &[f64], y: &[f64], p: &[f64; 3]) -> f64 {
    d.iter()
        .zip(y)
        .map(|(&di, &yi)| {
            let r = model(di, p) - yi;
            r * r
        })
        .sum()
}

/// With `beta` fixed the model is linear in (`alpha`, `gamma`).
fn linear_given_beta(d: &[f64], y: &[f64], beta: f64) -> Option<(f64, f64)> {
    let n = d.len() as f64;
    let x: Vec<f64> = d.iter().map(|di| di.powf(-beta)).collect();
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let det = n * sxx - sx * sx;
    if det.abs() <= f64::EPSILON * n * sxx {
        return None;
    }
    let alpha = (n * sxy - sx * sy) / det;
    let intercept = (sy - alpha * sx) / n;
    Some((alpha, -intercept))
}

fn levenberg_marquardt(d: &[f64], y: &[f64], mut p: [f64; 3]) -> [f64; 3] {
    let mut lambda = 1e-3;
    let mut sse = sum_sq(d, y, &p);
    for _ in 0..2000 {
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for (&di, &yi) in d.iter().zip(y) {
            let pw = di.powf(-p[1]);
            let r = p[0] * pw - p[2] - yi;
            let j = [pw, -p[0] * pw * di.ln(), -1.0];
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        for _ in 0..40 {
            let mut m = jtj;
            for (k, row) in m.iter_mut().enumerate() {
                row[k] += lambda * jtj[k][k].max(1e-300);
            }
            let Some(step) = solve3(m, [-jtr[0], -jtr[1], -jtr[2]]) else {
                lambda *= 10.0;
                continue;
            };
            let cand = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
            let cand_sse = sum_sq(d, y, &cand);
            if cand_sse.is_finite() && cand_sse <= sse {
                let rel = step
                    .iter()
                    .zip(&p)
                    .map(|(s, v)| s.abs() / v.abs().max(1e-12))
                    .fold(0.0, f64::max);
                p = cand;
                sse = cand_sse;
                lambda = (lambda * 0.1).max(1e-15);
                improved = true;
                if rel < 1e-15 {
                    return p;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved || sse == 0.0 {
            break;
        }
    }
    p
}

fn solve3(m: [[f64; 3]; 3], rhs: [f64; 3]) -> Option<[f64; 3]> {
    let det3 = |a: &[[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let det = det3(&m);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let mut out = [0.0; 3];
    for (col, o) in out.iter_mut().enumerate() {
        let mut mc = m;
        for row in 0..3 {
            mc[row][col] = rhs[row];
        }
        *o = det3(&mc) / det;
    }
    Some(out)
}

/// Synthetic proxy-task measurements the default curve was fitted on:
/// a decade-spanning sweep of data amounts with 1% multiplicative noise.
pub fn proxy_samples() -> Vec<FitSample> {
    const TRUE: [f64; 3] = [9.75, 0.5, 0.05];
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let noise = Normal::new(0.0, 0.01).expect("valid normal");
    [250u64, 500, 1000, 2000, 4000, 8000, 16000]
        .iter()
        .flat_map(|&d| std::iter::repeat_n(d, 3))
        .map(|d| {
            let clean = model(d as f64, &TRUE);
            FitSample {
                data_amount: d,
                observed_error: clean * (1.0 + noise.sample(&mut rng)),
            }
        })
        .collect()
}

/// Reads a CSV with header `data_amount,observed_error`.
pub fn read_fit_samples(path: &Path) -> Result<Vec<FitSample>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize::<FitSample>() {
        let s = row?;
        out.push(FitSample::new(s.data_amount, s.observed_error)?);
    }
    Ok(out)
}
