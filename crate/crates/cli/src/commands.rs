use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use fedaug_core::ce_optimizer::{complexity_report, write_trace_csv, CEConfig};
use fedaug_core::check::check_allocation;
use fedaug_core::augmentation::write_augmentation_csv;
use fedaug_core::harness::{
    gradient_similarity, metrics_at_target, plan, read_gradients, run_policy, write_trajectory_csv,
    Policy, PolicyRun, TargetOutcome,
};
use fedaug_core::learning_curve::{error_budget, fit_power_law, proxy_samples, read_fit_samples};
use fedaug_core::system_model::{generate_scenario, round_metrics, write_device_csv, Scenario};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{apply_to_scenario, parse_assignment, target, RunConfig, Target};
use crate::error::{CliError, Result};
use crate::Common;

/// Configuration file, then `--set` overrides in order, then the dedicated flags.
fn load(c: &Common) -> Result<(RunConfig, Vec<(String, String)>)> {
    let mut run = RunConfig::load(c.config.as_deref())?;
    let mut sets = Vec::new();
    for s in &c.set {
        let (k, v) = parse_assignment(s)?;
        run.apply(&k, &v)?;
        sets.push((k, v));
    }
    if let Some(seed) = c.seed {
        run.seed = seed;
    }
    if let Some(w) = c.workers {
        run.ce.workers = w;
    }
    run.ce.seed = run.seed;
    Ok((run, sets))
}

fn read_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let s: Scenario = serde_json::from_str(&text).map_err(|e| CliError::config("scenario", e.to_string()))?;
    s.validate()?;
    Ok(s)
}

/// The scenario file with scenario overrides applied, or a generated one.
fn scenario(run: &RunConfig, sets: &[(String, String)], path: Option<&Path>) -> Result<Scenario> {
    match path {
        Some(p) => {
            let mut s = read_scenario(p)?;
            for (k, v) in sets {
                if matches!(target(k), Target::Scenario(_)) {
                    s = apply_to_scenario(&s, k, v)?;
                }
            }
            Ok(s)
        }
        None => Ok(generate_scenario(&run.scenario, run.seed)?),
    }
}

/// Writes through a temporary file so readers never see a partial file.
fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(&dir.join(name), e))?;
    text.push('\n');
    write_file(dir, name, text.as_bytes())
}

fn write_with(dir: &Path, name: &str, f: impl FnOnce(&mut Vec<u8>) -> fedaug_core::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_file(dir, name, &buf)
}

fn policies(names: &[String]) -> Result<Vec<Policy>> {
    if names.is_empty() {
        return Ok(Policy::ALL.to_vec());
    }
    let mut out = Vec::new();
    for n in names {
        for part in n.split(',').filter(|p| !p.trim().is_empty()) {
            let p: Policy = part.trim().parse()?;
            if !out.contains(&p) {
                out.push(p);
            }
        }
    }
    Ok(out)
}

pub fn generate(c: &Common, devices: Option<&str>) -> Result<()> {
    let (mut run, _) = load(c)?;
    if let Some(d) = devices {
        run.apply("devices", d)?;
    }
    let s = generate_scenario(&run.scenario, run.seed)?;
    write_json(&c.out, "scenario.json", &s)?;
    write_with(&c.out, "devices.csv", |w| write_device_csv(&s, w))?;
    println!(
        "{:>4} {:>10} {:>10} {:>10} {:>12} {:>7}",
        "id", "dist_km", "f_max_GHz", "p_max_W", "eps", "d_loc"
    );
    for d in &s.devices {
        println!(
            "{:>4} {:>10.4} {:>10.4} {:>10.4} {:>12.4e} {:>7}",
            d.id,
            d.distance_km,
            d.max_freq / 1e9,
            d.max_power,
            d.energy_coeff,
            d.local_count
        );
    }
    Ok(())
}

pub fn solve(c: &Common, path: Option<&Path>, policy: &str) -> Result<()> {
    let policy: Policy = policy.parse()?;
    let (run, sets) = load(c)?;
    let s = scenario(&run, &sets, path)?;
    let (sol, alloc) = plan(policy, &s, &run.ce)?;
    let check = check_allocation(&s, &alloc, policy != Policy::Tfl);
    let round = round_metrics(&s, &alloc)?;
    let complexity = complexity_report(&run.ce, &s, &sol);
    write_json(&c.out, "allocation.json", &alloc)?;
    write_json(
        &c.out,
        "report.json",
        &json!({
            "policy": policy,
            "objective": sol.report,
            "round": { "energy_j": round.energy_j, "latency_s": round.latency_s, "uplink_bits": round.uplink_bits },
            "check": check,
            "complexity": complexity,
        }),
    )?;
    write_with(&c.out, "trace.csv", |w| write_trace_csv(&sol.trace, w))?;
    write_with(&c.out, "augmentation.csv", |w| write_augmentation_csv(&s, &alloc, w))?;
    println!("policy          {policy}");
    println!("energy_j        {}", round.energy_j);
    println!("latency_s       {} (deadline {}, gap {:.3e})", check.max_latency_s, s.t_max, check.latency_gap_rel);
    println!("global_error    {} (target {}, gap {:.3e})", check.global_error, s.delta_max, check.error_gap_rel);
    println!("iterations      {} (converged: {})", sol.report.iterations, sol.report.converged);
    println!("feasible        {}", check.feasible);
    if !check.feasible {
        for v in &check.violations {
            eprintln!("violation: {} device {:?} value {} limit {}", v.constraint, v.device, v.value, v.limit);
        }
    }
    Ok(())
}

fn run_all(policies: &[Policy], s: &Scenario, ce: &CEConfig) -> Vec<(Policy, fedaug_core::Result<PolicyRun>)> {
    policies
        .par_iter()
        .map(|&p| (p, run_policy(p, s, ce, ce.seed)))
        .collect()
}

pub fn simulate(c: &Common, path: Option<&Path>, names: &[String]) -> Result<()> {
    let policies = policies(names)?;
    let (run, sets) = load(c)?;
    let s = scenario(&run, &sets, path)?;
    let mut summary = BTreeMap::new();
    for (p, result) in run_all(&policies, &s, &run.ce) {
        match result {
            Ok(r) => {
                write_with(&c.out, &format!("trajectory_{}.csv", p.name()), |w| {
                    write_trajectory_csv(&r.trajectory, w)
                })?;
                let at = metrics_at_target(&r.trajectory, s.delta_max);
                let entry = fedaug_core::harness::summarize(&s, std::slice::from_ref(&r))
                    .remove(p.name())
                    .expect("summary for the run");
                println!("{:<11} round {:>12.6} J   to target {}", p.name(), r.round.energy_j, target_text(&at));
                summary.insert(p.name().to_string(), serde_json::to_value(entry).expect("summary serializes"));
            }
            Err(e) => {
                eprintln!("{}: {e}", p.name());
                println!("{:<11} infeasible", p.name());
                summary.insert(p.name().to_string(), json!({ "infeasible": e.to_string() }));
            }
        }
    }
    write_json(&c.out, "summary.json", &summary)
}

fn target_text(t: &TargetOutcome) -> String {
    match t {
        TargetOutcome::Reached(m) => format!("{:.6} J in {} rounds", m.energy_j, m.rounds),
        TargetOutcome::NotReached => "not reached".into(),
    }
}

pub fn fit(c: &Common, input: Option<&Path>) -> Result<()> {
    let samples = match input {
        Some(p) => read_fit_samples(p)?,
        None => proxy_samples(),
    };
    let f = fit_power_law(&samples)?;
    write_json(&c.out, "fit.json", &f)?;
    println!("alpha {}\nbeta {}\ngamma {}\nresidual_norm {}", f.alpha, f.beta, f.gamma, f.residual_norm);
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    field: String,
    value: String,
    policy: &'static str,
    status: String,
    error_budget: f64,
    round_energy_j: Option<f64>,
    round_latency_s: Option<f64>,
    mean_local_error: Option<f64>,
    final_error: Option<f64>,
    energy_to_target_j: Option<f64>,
    rounds_to_target: Option<u32>,
}

pub fn sweep(c: &Common, path: Option<&Path>, field: &str, values: &str, names: &[String]) -> Result<()> {
    let values: Vec<String> = values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(CliError::config("values", "sweep needs at least one value"));
    }
    let policies = if names.is_empty() {
        vec![Policy::Fimi]
    } else {
        policies(names)?
    };
    let (run, sets) = load(c)?;
    let base = path.map(|p| scenario(&run, &sets, Some(p))).transpose()?;
    // Resolve every point first so a bad field or value fails before any solve.
    let points = values
        .iter()
        .map(|v| {
            let mut r = run.clone();
            r.apply(field, v)?;
            r.ce.seed = r.seed;
            let s = match &base {
                Some(b) if matches!(target(field), Target::Scenario(_)) => apply_to_scenario(b, field, v)?,
                Some(b) => b.clone(),
                None => generate_scenario(&r.scenario, r.seed)?,
            };
            Ok((v.clone(), r, s))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<SweepRow>> = points
        .par_iter()
        .map(|(v, r, s)| {
            let budget = error_budget(s.device_count(), &s.curve, s.delta_max);
            run_all(&policies, s, &r.ce)
                .into_iter()
                .map(|(p, res)| match res {
                    Ok(run) => {
                        let at = metrics_at_target(&run.trajectory, s.delta_max);
                        let (e, n) = match at {
                            TargetOutcome::Reached(m) => (Some(m.energy_j), Some(m.rounds)),
                            TargetOutcome::NotReached => (None, None),
                        };
                        SweepRow {
                            field: field.to_string(),
                            value: v.clone(),
                            policy: p.name(),
                            status: "ok".into(),
                            error_budget: budget,
                            round_energy_j: Some(run.round.energy_j),
                            round_latency_s: Some(run.round.latency_s),
                            mean_local_error: Some(run.trajectory.mean_local_error),
                            final_error: run.trajectory.points.last().map(|q| q.delta),
                            energy_to_target_j: e,
                            rounds_to_target: n,
                        }
                    }
                    Err(err) => SweepRow {
                        field: field.to_string(),
                        value: v.clone(),
                        policy: p.name(),
                        status: format!("infeasible: {err}"),
                        error_budget: budget,
                        round_energy_j: None,
                        round_latency_s: None,
                        mean_local_error: None,
                        final_error: None,
                        energy_to_target_j: None,
                        rounds_to_target: None,
                    },
                })
                .collect()
        })
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows.iter().flatten() {
        w.serialize(row).map_err(|e| CliError::io(&c.out.join("sweep.csv"), e))?;
        println!(
            "{}={} {:<11} {}",
            row.field,
            row.value,
            row.policy,
            row.round_energy_j.map_or(row.status.clone(), |e| format!("{e:.6} J"))
        );
    }
    let bytes = w.into_inner().map_err(|e| CliError::io(&c.out.join("sweep.csv"), e))?;
    write_file(&c.out, "sweep.csv", &bytes)
}

pub fn similarity(c: &Common, reference: &Path, device: &Path) -> Result<()> {
    let a = read_gradients(reference)?;
    let b = read_gradients(device)?;
    let v = gradient_similarity(&a, &b)?;
    write_json(&c.out, "similarity.json", &json!({ "similarity": v }))?;
    println!("{v}");
    Ok(())
}

