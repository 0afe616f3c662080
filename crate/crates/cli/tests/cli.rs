use std::path::Path;
use std::process::{Command, Output};

use fedaug_core::system_model::{Allocation, Scenario};
use serde_json::Value;

fn fedaug(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedaug"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_default_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&fedaug(&a, &["generate", "--seed", "7"])), 0);
    assert_eq!(code(&fedaug(&b, &["generate", "--seed", "7"])), 0);
    let text = std::fs::read_to_string(a.join("scenario.json")).unwrap();
    assert_eq!(text, std::fs::read_to_string(b.join("scenario.json")).unwrap());
    let s: Scenario = serde_json::from_str(&text).unwrap();
    assert_eq!(s.devices.len(), 20);
    assert_eq!(serde_json::to_string_pretty(&s).unwrap() + "\n", text);
    for d in &s.devices {
        assert!((1e9..=2e9).contains(&d.max_freq));
        assert!(d.distance_km <= 0.4);
    }
}

#[test]
fn zero_devices_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fedaug(tmp.path(), &["generate", "--devices", "0"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("devices"));
}

#[test]
fn usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&fedaug(tmp.path(), &["launch"])), 2);
    assert_eq!(code(&fedaug(tmp.path(), &["generate", "--set", "novalue"])), 3);
    let o = fedaug(tmp.path(), &["generate", "--set", "t_maximum=3"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("t_maximum"));
    assert_eq!(code(&fedaug(tmp.path(), &["solve", "--policy", "SEMI"])), 3);
}

#[test]
fn solve_writes_tight_feasible_allocation() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = ["solve", "--seed", "3", "--set", "devices=5"];
    let o = fedaug(&a, &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(code(&fedaug(&b, &args)), 0);
    for f in ["allocation.json", "report.json", "trace.csv", "augmentation.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report = json(&a.join("report.json"));
    assert_eq!(report["check"]["feasible"], Value::Bool(true));
    assert!(report["check"]["latency_gap_rel"].as_f64().unwrap() <= 1e-6);
    let text = std::fs::read_to_string(a.join("allocation.json")).unwrap();
    let alloc: Allocation = serde_json::from_str(&text).unwrap();
    assert_eq!(alloc.devices.len(), 5);
    assert_eq!(serde_json::to_string_pretty(&alloc).unwrap() + "\n", text);
    let aug = std::fs::read_to_string(a.join("augmentation.csv")).unwrap();
    assert!(aug.starts_with("device_id,category,d_loc,d_gen\n"));
}

#[test]
fn unreachable_target_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fedaug(tmp.path(), &["solve", "--set", "devices=4", "--set", "delta_max=1e-9"]);
    assert_eq!(code(&o), 4);
    let msg = stderr(&o);
    assert!(msg.contains("outside feasible range ["), "{msg}");
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "seed = 1\n[scenario]\ndevices = 4\nt_max = 50.0\n[ce]\nmax_iters = 20\n").unwrap();
    let out = tmp.path().join("o");
    let o = fedaug(&out, &["generate", "--config", cfg.to_str().unwrap(), "--set", "devices=3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = json(&out.join("scenario.json"));
    assert_eq!(s["devices"].as_array().unwrap().len(), 3);
    assert_eq!(s["t_max"].as_f64(), Some(50.0));
    std::fs::write(&cfg, "[scenario]\nbogus = 1\n").unwrap();
    assert_eq!(code(&fedaug(&out, &["generate", "--config", cfg.to_str().unwrap()])), 3);
}

#[test]
fn solve_from_scenario_file_with_override() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = tmp.path().join("g");
    assert_eq!(code(&fedaug(&gen, &["generate", "--set", "devices=3", "--seed", "4"])), 0);
    let path = gen.join("scenario.json");
    let out = tmp.path().join("s");
    let o = fedaug(&out, &["solve", "--scenario", path.to_str().unwrap(), "--set", "t_max=45"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&out.join("report.json"))["check"]["t_max"].as_f64(), Some(45.0));
    let o = fedaug(&out, &["solve", "--scenario", path.to_str().unwrap(), "--set", "radius_km=1"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn sweep_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&fedaug(tmp.path(), &["sweep", "--field", "t_max", "--values", ""])), 3);
    assert_eq!(code(&fedaug(tmp.path(), &["sweep", "--field", "t_maxx", "--values", "3"])), 3);
    assert_eq!(code(&fedaug(tmp.path(), &["sweep", "--field", "t_max", "--values", "fast"])), 3);
}

fn sweep_rows(out: &Path, field: &str, values: &str) -> Vec<Vec<String>> {
    let o = fedaug(out, &["sweep", "--seed", "2", "--set", "devices=4", "--field", field, "--values", values]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut r = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(&header[..6], ["field", "value", "policy", "status", "error_budget", "round_energy_j"]);
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn sweep_deadline_lowers_energy() {
    let tmp = tempfile::tempdir().unwrap();
    let rows = sweep_rows(tmp.path(), "t_max", "30,45,60");
    assert_eq!(rows.iter().map(|r| r[1].as_str()).collect::<Vec<_>>(), ["30", "45", "60"]);
    let energy: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    assert!(energy[1] <= energy[0] && energy[2] <= energy[1], "{energy:?}");
}

#[test]
fn sweep_target_raises_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let rows = sweep_rows(tmp.path(), "delta_max", "0.15,0.2,0.25");
    let budget: Vec<f64> = rows.iter().map(|r| r[4].parse().unwrap()).collect();
    assert!(budget[0] < budget[1] && budget[1] < budget[2], "{budget:?}");
}

#[test]
fn simulate_writes_every_policy() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fedaug(tmp.path(), &["simulate", "--seed", "1", "--set", "devices=4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = json(&tmp.path().join("summary.json"));
    let keys: Vec<&String> = summary.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["FIMI", "HDC", "TFL", "UNIFORM_BW"]);
    let traj = std::fs::read_to_string(tmp.path().join("trajectory_FIMI.csv")).unwrap();
    assert!(traj.starts_with("round,delta,cum_energy_j,cum_latency_s,cum_uplink_bits\n"));
}

#[test]
fn fit_from_file() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("obs.csv");
    let mut text = String::from("data_amount,observed_error\n");
    for k in 1..=10u64 {
        let d = 100 * k;
        text.push_str(&format!("{d},{}\n", 2.0 * (d as f64).powf(-0.4) - 0.1));
    }
    std::fs::write(&csv, text).unwrap();
    let o = fedaug(tmp.path(), &["fit", "--input", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let f = json(&tmp.path().join("fit.json"));
    assert!((f["alpha"].as_f64().unwrap() - 2.0).abs() < 1e-6);
    assert!((f["beta"].as_f64().unwrap() - 0.4).abs() < 1e-6);
    let missing = tmp.path().join("none.csv");
    assert_eq!(code(&fedaug(tmp.path(), &["fit", "--input", missing.to_str().unwrap()])), 7);
}

#[test]
fn similarity_command() {
    let tmp = tempfile::tempdir().unwrap();
    let g = tmp.path().join("g.json");
    std::fs::write(&g, "[[1.0, 0.0], [0.0, 2.0]]").unwrap();
    let h = tmp.path().join("h.json");
    std::fs::write(&h, "[[0.0, 3.0], [0.0, 1.0]]").unwrap();
    let o = fedaug(tmp.path(), &["similarity", "--reference", g.to_str().unwrap(), "--device", h.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "0.75");
}
