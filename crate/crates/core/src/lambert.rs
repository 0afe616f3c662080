//! Real branches of the Lambert W function (inverse of `w * exp(w)`).
//!
//! Only `x >= -1/e` has real values. The principal branch `W0` maps onto
//! `[-1, inf)`, the secondary branch `W-1` covers `x in [-1/e, 0)` and maps
//! onto `(-inf, -1]`. Both are refined with Halley iteration.

use std::f64::consts::E;

const MAX_HALLEY_STEPS: usize = 50;
const RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Principal,
    Secondary,
}

/// Evaluates `W(x)` on the requested real branch. Returns `None` outside the
/// branch's real domain.
pub fn lambert_w(x: f64, branch: Branch) -> Option<f64> {
    let branch_point = -1.0 / E;
    if !x.is_finite() || x < branch_point {
        return None;
    }
    if branch == Branch::Secondary && x >= 0.0 {
        return None;
    }
    if x == branch_point {
        return Some(-1.0);
    }
    if x == 0.0 {
        return Some(0.0);
    }
    let w0 = initial_guess(x, branch);
    Some(halley(x, w0, branch))
}

fn initial_guess(x: f64, branch: Branch) -> f64 {
    // Series in p = sqrt(2 (e x + 1)) around the branch point.
    let p = (2.0 * (E * x + 1.0)).max(0.0).sqrt();
    match branch {
        Branch::Principal => {
            if x < -0.25 {
                -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
            } else if x < 3.0 {
                // log1p keeps the guess sane near zero and for moderate x.
                let l = x.ln_1p();
                l * (1.0 - l.ln_1p() / (2.0 + l))
            } else {
                let l1 = x.ln();
                let l2 = l1.ln();
                l1 - l2 + l2 / l1
            }
        }
        Branch::Secondary => {
            if x < -0.25 {
                -1.0 - p - p * p / 3.0 - 11.0 / 72.0 * p * p * p
            } else {
                let l1 = (-x).ln();
                let l2 = (-l1).ln();
                l1 - l2 + l2 / l1
            }
        }
    }
}

fn halley(x: f64, mut w: f64, branch: Branch) -> f64 {
    for _ in 0..MAX_HALLEY_STEPS {
        let ew = w.exp();
        let f = w * ew - x;
        if f.abs() <= RESIDUAL_TOL * x.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        let wp1 = w + 1.0;
        if wp1.abs() < 1e-300 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let mut next = w - f / denom;
        // Stay on the requested side of w = -1.
        match branch {
            Branch::Principal if next < -1.0 => next = (w - 1.0) / 2.0,
            Branch::Secondary if next > -1.0 => next = (w - 1.0) / 2.0,
            _ => {}
        }
        if (next - w).abs() <= 4.0 * f64::EPSILON * w.abs().max(1.0) {
            w = next;
            break;
        }
        w = next;
    }
    w
}
