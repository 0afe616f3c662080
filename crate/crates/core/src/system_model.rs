//! Device, channel and cost models, plus randomized scenario generation.
//!
//! Units are SI throughout: Hz, W, W/Hz, bits, seconds, CPU cycles. Channel
//! gains are linear power gains.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning_curve::CurveParams;

/// Relative slack allowed when a derived frequency lands on the device cap.
pub const FREQ_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub id: usize,
    /// Effective switched capacitance, J*s^2/cycle^3.
    pub energy_coeff: f64,
    pub max_freq: f64,
    pub channel_gain: f64,
    pub max_power: f64,
    pub local_count: u64,
    pub category_counts: Vec<u64>,
    pub distance_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub devices: Vec<DeviceProfile>,
    pub bandwidth_total: f64,
    pub noise_psd: f64,
    pub update_size: f64,
    pub workload_per_sample: f64,
    pub local_epochs: u32,
    pub t_max: f64,
    pub delta_max: f64,
    pub d_gen_max: f64,
    pub categories: usize,
    pub curve: CurveParams,
}

impl Scenario {
    /// `tau * omega`: cycles needed per sample per round.
    pub fn cycles_per_sample(&self) -> f64 {
        self.local_epochs as f64 * self.workload_per_sample
    }

    pub fn device_count(&self) -> usize {
        self.devices.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.devices.is_empty() {
            return Err(Error::config("devices", "scenario has no devices"));
        }
        for (name, v) in [
            ("bandwidth_total", self.bandwidth_total),
            ("noise_psd", self.noise_psd),
            ("update_size", self.update_size),
            ("workload_per_sample", self.workload_per_sample),
            ("t_max", self.t_max),
        ] {
            positive(name, v)?;
        }
        if self.local_epochs == 0 {
            return Err(Error::config("local_epochs", "must be at least 1"));
        }
        if !(self.delta_max > 0.0 && self.delta_max < 1.0) {
            return Err(Error::config("delta_max", "must lie in (0, 1)"));
        }
        if !(self.d_gen_max >= 0.0 && self.d_gen_max.is_finite()) {
            return Err(Error::config("d_gen_max", "must be non-negative"));
        }
        if self.categories == 0 {
            return Err(Error::config("categories", "must be at least 1"));
        }
        self.curve.validate()?;
        let mut largest_local = 0;
        for d in &self.devices {
            let f = |name: &str| format!("devices[{}].{name}", d.id);
            for (name, v) in [
                ("energy_coeff", d.energy_coeff),
                ("max_freq", d.max_freq),
                ("channel_gain", d.channel_gain),
                ("max_power", d.max_power),
                ("distance_km", d.distance_km),
            ] {
                positive(&f(name), v)?;
            }
            if d.channel_gain >= 1.0 {
                return Err(Error::config(f("channel_gain"), "must be below 1"));
            }
            if d.local_count == 0 {
                return Err(Error::config(f("local_count"), "must be positive"));
            }
            if d.category_counts.len() != self.categories {
                return Err(Error::config(
                    f("category_counts"),
                    format!("expected {} categories", self.categories),
                ));
            }
            if d.category_counts.iter().sum::<u64>() != d.local_count {
                return Err(Error::config(
                    f("category_counts"),
                    "counts must sum to local_count",
                ));
            }
            largest_local = largest_local.max(d.local_count);
        }
        self.curve
            .check_range(largest_local as f64 + self.d_gen_max)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(name, format!("must be positive, got {v}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceAllocation {
    /// Continuous synthesized-data amount from the solver.
    pub d_gen: f64,
    /// Whole samples actually requested from the generator, `ceil(d_gen)`.
    pub synth_count: u64,
    pub freq: f64,
    pub bandwidth: f64,
    pub power: f64,
    pub eta: f64,
    /// Per-category split of `synth_count`.
    pub category_gen: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub devices: Vec<DeviceAllocation>,
}

/// Rounds a continuous amount up to whole samples, ignoring float dust.
pub fn synth_count(d_gen: f64) -> u64 {
    let r = d_gen.round();
    if (d_gen - r).abs() <= 1e-9 * d_gen.abs().max(1.0) {
        r.max(0.0) as u64
    } else {
        d_gen.ceil().max(0.0) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceCosts {
    pub e_cmp: f64,
    pub e_com: f64,
    pub t_cmp: f64,
    pub t_com: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub energy_j: f64,
    pub latency_s: f64,
    pub uplink_bits: u64,
    pub per_device: Vec<DeviceCosts>,
}

// ---------------------------------------------------------------------------
// Cost models

/// Single-round training energy, `tau eps omega D f^2`.
pub fn compute_energy(
    dev: &DeviceProfile,
    total_data: f64,
    freq: f64,
    cycles_per_sample: f64,
) -> Result<f64> {
    if !(freq > 0.0) {
        return Err(Error::InvalidFrequency(freq));
    }
    if freq > dev.max_freq * (1.0 + FREQ_TOL) {
        return Err(Error::FrequencyExceeded {
            freq,
            max_freq: dev.max_freq,
        });
    }
    Ok(cycles_per_sample * dev.energy_coeff * total_data * freq * freq)
}

/// Single-round training latency, `tau omega D / f`.
pub fn compute_latency(
    _dev: &DeviceProfile,
    total_data: f64,
    freq: f64,
    cycles_per_sample: f64,
) -> Result<f64> {
    if !(freq > 0.0) {
        return Err(Error::InvalidFrequency(freq));
    }
    Ok(cycles_per_sample * total_data / freq)
}

/// Shannon rate `b log2(1 + g P / (N0 b))` in bits/s.
pub fn uplink_rate(bandwidth: f64, power: f64, gain: f64, noise_psd: f64) -> f64 {
    if bandwidth <= 0.0 || power <= 0.0 {
        return 0.0;
    }
    bandwidth * (gain * power / (noise_psd * bandwidth)).ln_1p() / std::f64::consts::LN_2
}

/// Upload latency and energy for an `update_size`-bit model update.
pub fn uplink_cost(
    update_size: f64,
    bandwidth: f64,
    power: f64,
    gain: f64,
    noise_psd: f64,
) -> Result<(f64, f64)> {
    let r = uplink_rate(bandwidth, power, gain, noise_psd);
    if !(r > 0.0) {
        return Err(Error::UnreachableServer);
    }
    let latency = update_size / r;
    Ok((latency, power * latency))
}

/// Linear gain of the `128.1 + 37.6 log10(R)` dB path-loss model (`R` in km).
pub fn path_loss_gain(distance_km: f64) -> f64 {
    let loss_db = 128.1 + 37.6 * distance_km.log10();
    10f64.powf(-loss_db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Aggregates per-device costs of one training round.
pub fn round_metrics(scenario: &Scenario, alloc: &Allocation) -> Result<RoundMetrics> {
    if alloc.devices.len() != scenario.devices.len() {
        return Err(Error::InvalidAllocation(format!(
            "{} device entries for {} devices",
            alloc.devices.len(),
            scenario.devices.len()
        )));
    }
    let cps = scenario.cycles_per_sample();
    let mut per_device = Vec::with_capacity(alloc.devices.len());
    for (dev, a) in scenario.devices.iter().zip(&alloc.devices) {
        let data = dev.local_count as f64 + a.d_gen;
        let e_cmp = compute_energy(dev, data, a.freq, cps)?;
        let t_cmp = compute_latency(dev, data, a.freq, cps)?;
        let (t_com, e_com) = uplink_cost(
            scenario.update_size,
            a.bandwidth,
            a.power,
            dev.channel_gain,
            scenario.noise_psd,
        )?;
        per_device.push(DeviceCosts {
            e_cmp,
            e_com,
            t_cmp,
            t_com,
        });
    }
    let energy_j = per_device.iter().map(|c| c.e_cmp + c.e_com).sum();
    let latency_s = per_device
        .iter()
        .map(|c| c.t_cmp + c.t_com)
        .fold(0.0, f64::max);
    let uplink_bits = scenario.update_size.round() as u64 * per_device.len() as u64;
    Ok(RoundMetrics {
        energy_j,
        latency_s,
        uplink_bits,
        per_device,
    })
}

// ---------------------------------------------------------------------------
// Partitioning

/// Integer vector summing exactly to `total`, closest to `values` in the
/// largest-remainder sense. Ties in the fractional part go to the lowest index.
pub fn largest_remainder(values: &[f64], total: u64) -> Vec<u64> {
    let mut out: Vec<u64> = values.iter().map(|v| v.max(0.0).floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut left = total.saturating_sub(assigned);
    if left == 0 {
        return out;
    }
    // Quantize fractions so float dust cannot reorder genuine ties.
    let mut order: Vec<(i64, usize)> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let frac = v.max(0.0) - v.max(0.0).floor();
            (-(frac * 1e9).round() as i64, i)
        })
        .collect();
    order.sort();
    let n = order.len();
    let mut k = 0;
    while left > 0 && n > 0 {
        out[order[k % n].1] += 1;
        left -= 1;
        k += 1;
    }
    out
}

/// Non-IID category counts: each device draws proportions from a symmetric
/// Dirichlet with concentration `z` and rounds them to `per_device_total`.
pub fn dirichlet_partition(
    concentration: f64,
    categories: usize,
    per_device_total: u64,
    device_count: usize,
    seed: u64,
) -> Result<Vec<Vec<u64>>> {
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(Error::config(
            "dirichlet_concentration",
            format!("must be positive, got {concentration}"),
        ));
    }
    if categories == 0 {
        return Err(Error::config("categories", "must be at least 1"));
    }
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| Error::config("dirichlet_concentration", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(device_count);
    for _ in 0..device_count {
        let draws: Vec<f64> = (0..categories).map(|_| gamma.sample(&mut rng)).collect();
        let sum: f64 = draws.iter().sum();
        let scaled: Vec<f64> = if sum > 0.0 {
            draws
                .iter()
                .map(|g| g / sum * per_device_total as f64)
                .collect()
        } else {
            // Every gamma draw underflowed: the limit is a one-hot vector.
            let hot = rng.random_range(0..categories);
            (0..categories)
                .map(|c| if c == hot { per_device_total as f64 } else { 0.0 })
                .collect()
        };
        out.push(largest_remainder(&scaled, per_device_total));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Scenario generation

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    fn check(&self, field: &str) -> Result<()> {
        if !(self.low.is_finite() && self.high.is_finite() && self.low <= self.high) {
            return Err(Error::config(field, "low must not exceed high"));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.low == self.high {
            self.low
        } else {
            rng.random_range(self.low..self.high)
        }
    }
}

/// How the configured noise density is to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseUnit {
    DbmPerHz,
    DbmPerMhz,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub devices: usize,
    pub radius_km: f64,
    pub min_distance_km: f64,
    pub bandwidth_total: f64,
    pub noise_dbm: f64,
    pub noise_unit: NoiseUnit,
    pub update_size: f64,
    pub workload_per_sample: f64,
    pub local_epochs: u32,
    pub t_max: f64,
    pub delta_max: f64,
    pub d_gen_max: f64,
    pub categories: usize,
    pub local_count: u64,
    pub dirichlet_concentration: f64,
    pub max_power_dbm: Range,
    pub max_freq: Range,
    pub energy_coeff: Range,
    pub curve: CurveParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            devices: 20,
            radius_km: 0.4,
            min_distance_km: 0.001,
            bandwidth_total: 20e6,
            noise_dbm: -174.0,
            noise_unit: NoiseUnit::DbmPerHz,
            update_size: 111.7e6,
            workload_per_sample: 5e6,
            local_epochs: 1,
            t_max: 60.0,
            delta_max: 0.2,
            d_gen_max: 5000.0,
            categories: 10,
            local_count: 1250,
            dirichlet_concentration: 0.4,
            max_power_dbm: Range::new(20.0, 23.0),
            max_freq: Range::new(1e9, 2e9),
            energy_coeff: Range::new(4e-27, 6e-27),
            curve: CurveParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn noise_psd(&self) -> f64 {
        let per_unit = dbm_to_watts(self.noise_dbm);
        match self.noise_unit {
            NoiseUnit::DbmPerHz => per_unit,
            NoiseUnit::DbmPerMhz => per_unit / 1e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.devices == 0 {
            return Err(Error::config("devices", "must be at least 1"));
        }
        for (name, v) in [
            ("radius_km", self.radius_km),
            ("min_distance_km", self.min_distance_km),
            ("bandwidth_total", self.bandwidth_total),
            ("update_size", self.update_size),
            ("workload_per_sample", self.workload_per_sample),
            ("t_max", self.t_max),
            ("dirichlet_concentration", self.dirichlet_concentration),
        ] {
            positive(name, v)?;
        }
        if self.min_distance_km > self.radius_km {
            return Err(Error::config(
                "min_distance_km",
                "must not exceed radius_km",
            ));
        }
        if !self.noise_dbm.is_finite() {
            return Err(Error::config("noise_dbm", "must be finite"));
        }
        if self.local_epochs == 0 {
            return Err(Error::config("local_epochs", "must be at least 1"));
        }
        if !(self.delta_max > 0.0 && self.delta_max < 1.0) {
            return Err(Error::config("delta_max", "must lie in (0, 1)"));
        }
        if !(self.d_gen_max >= 0.0 && self.d_gen_max.is_finite()) {
            return Err(Error::config("d_gen_max", "must be non-negative"));
        }
        if self.categories == 0 {
            return Err(Error::config("categories", "must be at least 1"));
        }
        if self.local_count == 0 {
            return Err(Error::config("local_count", "must be at least 1"));
        }
        self.max_power_dbm.check("max_power_dbm")?;
        self.max_freq.check("max_freq")?;
        self.energy_coeff.check("energy_coeff")?;
        if self.max_freq.low <= 0.0 {
            return Err(Error::config("max_freq", "must be positive"));
        }
        if self.energy_coeff.low <= 0.0 {
            return Err(Error::config("energy_coeff", "must be positive"));
        }
        self.curve.validate()
    }
}

/// Draws a scenario: devices placed uniformly over the annulus
/// `[min_distance_km, radius_km]` around the server, hardware parameters
/// uniform within their configured ranges, category counts from a
/// Dirichlet partition.
pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let partition = dirichlet_partition(
        config.dirichlet_concentration,
        config.categories,
        config.local_count,
        config.devices,
        seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
    )?;
    let r_min2 = config.min_distance_km * config.min_distance_km;
    let r_max2 = config.radius_km * config.radius_km;
    let devices = partition
        .into_iter()
        .enumerate()
        .map(|(id, category_counts)| {
            let u: f64 = rng.random();
            let distance_km = (r_min2 + u * (r_max2 - r_min2)).sqrt();
            let max_power = dbm_to_watts(config.max_power_dbm.sample(&mut rng));
            let max_freq = config.max_freq.sample(&mut rng);
            let energy_coeff = config.energy_coeff.sample(&mut rng);
            DeviceProfile {
                id,
                energy_coeff,
                max_freq,
                channel_gain: path_loss_gain(distance_km),
                max_power,
                local_count: config.local_count,
                category_counts,
                distance_km,
            }
        })
        .collect();
    let scenario = Scenario {
        devices,
        bandwidth_total: config.bandwidth_total,
        noise_psd: config.noise_psd(),
        update_size: config.update_size,
        workload_per_sample: config.workload_per_sample,
        local_epochs: config.local_epochs,
        t_max: config.t_max,
        delta_max: config.delta_max,
        d_gen_max: config.d_gen_max,
        categories: config.categories,
        curve: config.curve,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Writes the device table as CSV.
pub fn write_device_csv<W: Write>(scenario: &Scenario, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "id",
        "energy_coeff",
        "max_freq",
        "gain",
        "max_power",
        "local_count",
        "distance_km",
    ])?;
    for d in &scenario.devices {
        w.write_record([
            d.id.to_string(),
            d.energy_coeff.to_string(),
            d.max_freq.to_string(),
            d.channel_gain.to_string(),
            d.max_power.to_string(),
            d.local_count.to_string(),
            d.distance_km.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dev(eps: f64, fmax: f64) -> DeviceProfile {
        DeviceProfile {
            id: 0,
            energy_coeff: eps,
            max_freq: fmax,
            channel_gain: 4.85e-12,
            max_power: 0.15,
            local_count: 1250,
            category_counts: vec![1250],
            distance_km: 0.4,
        }
    }

    #[test]
    fn compute_energy_cases() {
        let d = dev(5e-27, 2e9);
        let e = compute_energy(&d, 1250.0, 1e9, 5e6).unwrap();
        assert!((e - 31.25).abs() < 1e-12);
        assert_eq!(compute_energy(&d, 0.0, 1e9, 5e6).unwrap(), 0.0);
        let e2 = compute_energy(&d, 2500.0, 1e9, 5e6).unwrap();
        assert!((e2 - 2.0 * e).abs() < 1e-12);
        assert!(matches!(
            compute_energy(&d, 1250.0, 3e9, 5e6),
            Err(Error::FrequencyExceeded { .. })
        ));
    }

    #[test]
    fn compute_latency_cases() {
        let d = dev(5e-27, 2e9);
        assert!((compute_latency(&d, 1250.0, 1e9, 5e6).unwrap() - 6.25).abs() < 1e-12);
        assert_eq!(compute_latency(&d, 0.0, 1e9, 5e6).unwrap(), 0.0);
        assert!((compute_latency(&d, 1250.0, 0.5e9, 5e6).unwrap() - 12.5).abs() < 1e-12);
        assert!(matches!(
            compute_latency(&d, 1250.0, 0.0, 5e6),
            Err(Error::InvalidFrequency(_))
        ));
    }

    #[test]
    fn uplink_rate_cases() {
        // g P / (N0 b) = 255 -> log2(256) = 8 bits/Hz
        let n0 = 1e-20;
        let b = 1e6;
        let g = 1e-12;
        let p = 255.0 * n0 * b / g;
        assert!((uplink_rate(b, p, g, n0) - 8e6).abs() < 1e-6);
        assert_eq!(uplink_rate(b, 0.0, g, n0), 0.0);
        assert!(uplink_rate(b, 0.2, g, n0) > uplink_rate(b, 0.1, g, n0));
    }

    #[test]
    fn uplink_cost_cases() {
        // Pick power so the rate is exactly 1 Mbit/s on 1 MHz: SNR = 1.
        let (b, g, n0) = (1e6, 1e-12, 1e-16);
        let p = n0 * b / g;
        assert!((uplink_rate(b, p, g, n0) - 1e6).abs() < 1e-6);
        let (t, e) = uplink_cost(1e6, b, p, g, n0).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
        assert!((e - p).abs() < 1e-15);
        let (t2, e2) = uplink_cost(2e6, b, p, g, n0).unwrap();
        assert!((t2 - 2.0 * t).abs() < 1e-12 && (e2 - 2.0 * e).abs() < 1e-15);
        assert!(matches!(
            uplink_cost(1e6, b, 0.0, g, n0),
            Err(Error::UnreachableServer)
        ));
    }

    #[test]
    fn uplink_cost_default_radio_numbers() {
        // Independent arithmetic: SNR = g P / (N0 b), rate = b log2(1 + SNR).
        let n0 = 10f64.powf(-20.4);
        let (s, b, p, g) = (111.7e6, 1e6, 0.15, 4.85e-12);
        let snr = 4.85e-12 * 0.15 / (n0 * 1e6);
        assert!((snr - 182.7397).abs() < 1e-3);
        let rate = 1e6 * (1.0 + snr).log2();
        let (t, e) = uplink_cost(s, b, p, g, n0).unwrap();
        assert!((t - s / rate).abs() < 1e-9);
        assert!((t - 14.8507).abs() < 1e-3);
        assert!((e - 0.15 * t).abs() < 1e-12);
    }

    #[test]
    fn path_loss_cases() {
        assert!((path_loss_gain(1.0) / 10f64.powf(-12.81) - 1.0).abs() < 1e-12);
        let g = path_loss_gain(0.4);
        let loss = 128.1 + 37.6 * 0.4f64.log10();
        assert!((loss - 113.137).abs() < 1e-3);
        assert!((g - 4.8557e-12).abs() < 1e-16);
        assert!(path_loss_gain(0.3) > path_loss_gain(0.31));
    }

    #[test]
    fn largest_remainder_rules() {
        assert_eq!(largest_remainder(&[0.0, 0.5, 1.5], 2), vec![0, 1, 1]);
        assert_eq!(largest_remainder(&[0.25; 4], 1), vec![1, 0, 0, 0]);
        assert_eq!(largest_remainder(&[3.0, 2.0], 5), vec![3, 2]);
    }

    #[test]
    fn dirichlet_partition_properties() {
        let a = dirichlet_partition(0.4, 10, 1250, 20, 7).unwrap();
        let b = dirichlet_partition(0.4, 10, 1250, 20, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|d| d.iter().sum::<u64>() == 1250));
        assert!(dirichlet_partition(0.0, 10, 1250, 20, 7).is_err());
        // Tiny concentration still yields valid counts.
        let t = dirichlet_partition(1e-4, 5, 100, 10, 3).unwrap();
        assert!(t.iter().all(|d| d.iter().sum::<u64>() == 100));
    }

    #[test]
    fn dirichlet_high_concentration_is_near_uniform() {
        // Dir(100 * 1_10): per-category sd of the proportion is about
        // sqrt(0.1 * 0.9 / 1001) ~ 0.0095, i.e. ~12 samples out of 1250, so
        // the largest of ten deviations stays well under 25 on average.
        let mut total = 0.0;
        for seed in 0..50 {
            let p = dirichlet_partition(100.0, 10, 1250, 1, seed).unwrap();
            let dev = p[0]
                .iter()
                .map(|&c| (c as f64 - 125.0).abs())
                .fold(0.0, f64::max);
            total += dev;
        }
        assert!(total / 50.0 <= 25.0, "mean max deviation {}", total / 50.0);
    }

    #[test]
    fn dirichlet_mean_proportion_unbiased() {
        let c = 10;
        let seeds = 200;
        let mut sums = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for seed in 0..seeds {
            let p = dirichlet_partition(0.4, c, 1250, 1, seed).unwrap();
            for k in 0..c {
                let x = p[0][k] as f64 / 1250.0;
                sums[k] += x;
                sq[k] += x * x;
            }
        }
        for k in 0..c {
            let mean = sums[k] / seeds as f64;
            let var = sq[k] / seeds as f64 - mean * mean;
            let se = (var / seeds as f64).sqrt();
            assert!((mean - 0.1).abs() <= 3.0 * se, "category {k}: {mean} +- {se}");
        }
    }

    #[test]
    fn default_scenario_ranges() {
        let s = generate_scenario(&ScenarioConfig::default(), 0).unwrap();
        assert_eq!(s.devices.len(), 20);
        for d in &s.devices {
            let dbm = 10.0 * d.max_power.log10() + 30.0;
            assert!((20.0..=23.0).contains(&dbm));
            assert!((1e9..=2e9).contains(&d.max_freq));
            assert!((4e-27..=6e-27).contains(&d.energy_coeff));
            assert!(d.distance_km <= 0.4 && d.distance_km >= 0.001);
            assert!((d.channel_gain - path_loss_gain(d.distance_km)).abs() <= 1e-20);
            assert_eq!(d.local_count, 1250);
        }
        assert_eq!(s.update_size, 111.7e6);
        assert_eq!(s.bandwidth_total, 20e6);
        assert!((s.noise_psd / 10f64.powf(-20.4) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scenario_generation_is_deterministic() {
        let cfg = ScenarioConfig::default();
        let a = serde_json::to_string(&generate_scenario(&cfg, 42).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_scenario(&cfg, 42).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_radius_bounds_gains() {
        let cfg = ScenarioConfig {
            radius_km: 0.001,
            min_distance_km: 0.001,
            ..Default::default()
        };
        let s = generate_scenario(&cfg, 3).unwrap();
        let bound = path_loss_gain(0.001);
        assert!(s.devices.iter().all(|d| d.channel_gain >= bound * (1.0 - 1e-12)));
    }

    #[test]
    fn config_errors_name_field() {
        let cfg = ScenarioConfig {
            devices: 0,
            ..Default::default()
        };
        match generate_scenario(&cfg, 0) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "devices"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn noise_unit_variants() {
        let hz = ScenarioConfig::default();
        let mhz = ScenarioConfig {
            noise_unit: NoiseUnit::DbmPerMhz,
            ..Default::default()
        };
        assert!((hz.noise_psd() / mhz.noise_psd() - 1e6).abs() < 1e-3);
    }

    #[test]
    fn device_csv_header() {
        let s = generate_scenario(&ScenarioConfig::default(), 0).unwrap();
        let mut buf = Vec::new();
        write_device_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("id,energy_coeff,max_freq,gain,max_power,local_count,distance_km\n"));
        assert_eq!(text.lines().count(), 21);
    }

    #[test]
    fn synth_count_rounds_up() {
        assert_eq!(synth_count(0.0), 0);
        assert_eq!(synth_count(332.2), 333);
        assert_eq!(synth_count(333.000_000_000_01), 333);
        assert_eq!(synth_count(-1e-12), 0);
    }
}
