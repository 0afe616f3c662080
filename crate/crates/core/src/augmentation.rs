//! Category-wise split of a device's synthesized-data budget.
//!
//! Maximizing the entropy of the mixed dataset fills the emptiest categories
//! first up to a common water level `pi`: `gen_c = clamp(pi - loc_c, 0, budget)`.
//! The level is exact here: `sum_c max(pi - loc_c, 0)` is piecewise linear in
//! `pi`, so sorting the local counts locates the active segment directly.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system_model::{largest_remainder, Allocation, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAllocation {
    pub local_counts: Vec<u64>,
    pub gen_counts: Vec<u64>,
    pub budget: u64,
    pub water_level: f64,
}

/// Shannon entropy (bits) of the mixed category distribution.
pub fn data_entropy(local_counts: &[u64], gen_counts: &[f64]) -> f64 {
    let totals: Vec<f64> = local_counts
        .iter()
        .zip(gen_counts)
        .map(|(&l, &g)| l as f64 + g)
        .collect();
    let sum: f64 = totals.iter().sum();
    if !(sum > 0.0) {
        return 0.0;
    }
    totals
        .iter()
        .filter(|&&t| t > 0.0)
        .map(|&t| {
            let p = t / sum;
            -p * p.log2()
        })
        .sum()
}

/// Continuous entropy-maximizing split and its water level.
pub fn optimal_augmentation(local_counts: &[u64], budget: f64) -> (Vec<f64>, f64) {
    if local_counts.is_empty() {
        return (Vec::new(), 0.0);
    }
    let budget = budget.max(0.0);
    let mut sorted: Vec<f64> = local_counts.iter().map(|&l| l as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let mut prefix = 0.0;
    let mut pi = sorted[0];
    for k in 0..sorted.len() {
        prefix += sorted[k];
        pi = (budget + prefix) / (k + 1) as f64;
        if k + 1 == sorted.len() || pi <= sorted[k + 1] {
            break;
        }
    }
    let gen = local_counts
        .iter()
        .map(|&l| (pi - l as f64).clamp(0.0, budget))
        .collect();
    (gen, pi)
}

/// Whole-sample version of a continuous split that sums to `budget`.
pub fn integerize(continuous: &[f64], budget: u64) -> Result<Vec<u64>> {
    if let Some(v) = continuous.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidAllocation(format!(
            "negative or undefined category amount {v}"
        )));
    }
    let sum: f64 = continuous.iter().sum();
    if (sum - budget as f64).abs() > 1e-6 {
        return Err(Error::InvalidAllocation(format!(
            "category amounts sum to {sum}, expected {budget}"
        )));
    }
    Ok(largest_remainder(continuous, budget))
}

pub fn solve_p8(local_counts: &[u64], budget: u64) -> Result<CategoryAllocation> {
    if local_counts.is_empty() {
        return Err(Error::InvalidAllocation("no categories".into()));
    }
    let (gen, pi) = optimal_augmentation(local_counts, budget as f64);
    Ok(CategoryAllocation {
        local_counts: local_counts.to_vec(),
        gen_counts: integerize(&gen, budget)?,
        budget,
        water_level: pi,
    })
}

/// Category with the fewest local samples, lowest index on ties.
pub fn least_populated(local_counts: &[u64]) -> usize {
    local_counts
        .iter()
        .enumerate()
        .min_by_key(|&(i, &c)| (c, i))
        .map_or(0, |(i, _)| i)
}

/// Writes `device_id,category,d_loc,d_gen` rows for every device and category.
pub fn write_augmentation_csv<W: Write>(
    scenario: &Scenario,
    alloc: &Allocation,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["device_id", "category", "d_loc", "d_gen"])?;
    for (dev, a) in scenario.devices.iter().zip(&alloc.devices) {
        for (c, &loc) in dev.category_counts.iter().enumerate() {
            let gen = a.category_gen.get(c).copied().unwrap_or(0);
            w.write_record([
                dev.id.to_string(),
                c.to_string(),
                loc.to_string(),
                gen.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
