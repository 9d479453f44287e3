use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

const TWO_PARAM: &str = r#"{"family":"bloch","theta":[0,0,0],"active":[1,2]}"#;
const THREE_PARAM: &str = r#"{"family":"bloch","theta":[0,0,0],"active":[1,2,3]}"#;
const TIGHT: &str = r#"{"K":9,"max_iters":20000,"eps_stop":1e-13}"#;

fn qestopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qestopt")).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("qestopt-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

/// CSV rows as maps from header name to field.
fn csv_rows(text: &str) -> Vec<std::collections::HashMap<String, String>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| header.iter().zip(l.split(',')).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

fn num(row: &std::collections::HashMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or_else(|_| panic!("{key} = '{}'", row[key]))
}

#[test]
fn optimize_origin_writes_four() {
    let path = scratch("origin.json");
    let out = qestopt(&["optimize", "--model", TWO_PARAM, "--k", "3", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!((run["final_objective"].as_f64().unwrap() - 4.0).abs() < 1e-6);
    assert_eq!(run["stop_reason"], "converged");
    assert_eq!(run["povm"]["elements"].as_array().unwrap().len(), 3);
}

#[test]
fn optimize_reads_model_files() {
    let path = scratch("model.json");
    std::fs::write(&path, THREE_PARAM).unwrap();
    let out = qestopt(&["optimize", "--model", path.to_str().unwrap(), "--k", "4", "--restarts", "4"]);
    assert_eq!(out.status.code(), Some(0));
    assert!((stdout_json(&out)["final_objective"].as_f64().unwrap() - 9.0).abs() < 1e-5);
}

#[test]
fn single_outcome_exits_one() {
    let out = qestopt(&["optimize", "--model", TWO_PARAM, "--k", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("singular"));
}

#[test]
fn iteration_budget_exits_two() {
    let out = qestopt(&["optimize", "--model", TWO_PARAM, "--k", "3", "--opt", r#"{"max_iters":2}"#]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stdout_json(&out)["stop_reason"], "max_iters");
}

#[test]
fn invalid_input_exits_one() {
    assert_eq!(qestopt(&["optimize", "--model", r#"{"family":"bloch","theta":[2,0,0]}"#]).status.code(), Some(1));
    assert_eq!(qestopt(&["optimize", "--model", TWO_PARAM, "--opt", r#"{"unknown":1}"#]).status.code(), Some(1));
    assert_eq!(qestopt(&["optimize", "--model", "/nonexistent/model.json"]).status.code(), Some(1));
}

#[test]
fn dimension_cap_from_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_qestopt"))
        .args(["bounds", "--model", TWO_PARAM, "--copies", "3", "--bounds", "none"])
        .env("QEST_DIM_CAP", "4")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cap 4"));
}

#[test]
fn dephasing_optimum_matches_nh_command() {
    let model = r#"{"family":"dephasing","theta":[0.5],"copies":2}"#;
    let opt = qestopt(&["optimize", "--model", model, "--k", "6", "--restarts", "4"]);
    assert_eq!(opt.status.code(), Some(0));
    let bounds = qestopt(&["bounds", "--model", model]);
    assert!(bounds.status.success());
    let objective = stdout_json(&opt)["final_objective"].as_f64().unwrap();
    let nh = stdout_json(&bounds)["nh"].as_f64().unwrap();
    assert!((objective - nh).abs() < 1e-5, "objective {objective} nh {nh}");
}

#[test]
fn two_copy_sweep_tracks_nh() {
    let path = scratch("sweep.csv");
    let args = [
        "sweep", "--model", TWO_PARAM, "--grid", "theta1=0,0.25,0.5", "--copies", "2", "--restarts", "10",
        "--opt", TIGHT, "--out", path.to_str().unwrap(),
    ];
    let out = qestopt(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "theta,epsilon,M,K,K_star,objective,sld,holevo,nh,iterations,seed");
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 3);
    for row in &rows {
        assert!((num(row, "objective") - num(row, "nh")).abs() < 1e-5, "{row:?}");
        assert_eq!(row["epsilon"], "");
        assert_eq!(row["M"], "2");
    }
}

#[test]
fn sweeps_are_byte_identical() {
    let args = ["sweep", "--model", TWO_PARAM, "--grid", "theta1=0:0.6:3", "--copies", "1,2", "--restarts", "2", "--seed", "7"];
    let first = qestopt(&args);
    let second = qestopt(&args);
    assert!(first.status.success());
    assert_eq!(first.stdout, second.stdout);
    let rows = csv_rows(&String::from_utf8(first.stdout).unwrap());
    let order: Vec<(&str, &str)> = rows.iter().map(|r| (r["theta"].as_str(), r["M"].as_str())).collect();
    assert_eq!(order, [("0", "1"), ("0", "2"), ("0.300000000", "1"), ("0.300000000", "2"), ("0.600000000", "1"), ("0.600000000", "2")]);
    assert!(rows.iter().all(|r| r["seed"] == "7"));
}

#[test]
fn dephasing_sweep_holevo_column() {
    let out = qestopt(&[
        "sweep", "--model", r#"{"family":"dephasing","theta":[0.5]}"#, "--grid", "epsilon=0.1:0.9:5", "--bounds", "sld,holevo",
    ]);
    assert!(out.status.success());
    let rows = csv_rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(rows.len(), 5);
    for row in &rows {
        let eps = num(row, "epsilon");
        assert_eq!(row["theta"], "");
        assert_eq!(row["nh"], "");
        assert!((num(row, "holevo") - (2.0 + 2.0 * (2.0 * eps - 1.0).abs())).abs() < 1e-8, "{row:?}");
    }
}

#[test]
fn three_param_two_copy_sweep_point() {
    let out = qestopt(&["sweep", "--model", THREE_PARAM, "--grid", "theta1=0", "--copies", "2", "--restarts", "10"]);
    assert!(out.status.success());
    let row = &csv_rows(&String::from_utf8(out.stdout).unwrap())[0];
    assert!((num(row, "objective") - num(row, "nh")).abs() < 1e-3, "{row:?}");
}

#[test]
fn sweep_spec_file_with_k_star() {
    let path = scratch("spec.json");
    let spec = format!(r#"{{"model": {TWO_PARAM}, "grid": {{"coordinate": "theta1", "values": [0.0]}}, "opt": {{"K": 6, "restarts": 4}}, "find_k_star": true, "bounds": {{"nh": false}}}}"#);
    std::fs::write(&path, spec).unwrap();
    let out = qestopt(&["sweep", "--spec", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let row = &csv_rows(&String::from_utf8(out.stdout).unwrap())[0];
    assert_eq!(row["K_star"], "3");
    assert_eq!(row["nh"], "");
    assert_eq!(row["sld"], "2.00000000");
}

#[test]
fn invalid_sweep_grid_exits_one() {
    let out = qestopt(&["sweep", "--model", TWO_PARAM, "--grid", "theta1=0,1.5"]);
    assert_eq!(out.status.code(), Some(1));
    let out = qestopt(&["sweep", "--model", TWO_PARAM, "--grid", "phi=0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn analytic_trine() {
    let out = qestopt(&["analytic", "trine", "--phi1", "0.0"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    assert!((v["objective"].as_f64().unwrap() - 4.0).abs() < 1e-12);
    assert!(v["optimality_residual"].as_f64().unwrap() < 1e-10);
}

#[test]
fn analytic_three_outcome_at_max_q1() {
    let out = qestopt(&["analytic", "three_outcome", "--r", "0.9", "--q1", "max"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    let objective = v["objective"].as_f64().unwrap();
    assert!((objective - v["optimal_value"].as_f64().unwrap()).abs() < 1e-9);
    let hi = v["feasible_interval"][1].as_f64().unwrap();
    let p1 = v["solution"]["p"][0].as_f64().unwrap();
    assert!((1.0 - 2.0 * p1 - hi).abs() < 1e-9);
}

#[test]
fn analytic_three_outcome_infeasible() {
    let out = qestopt(&["analytic", "three_outcome", "--r", "0.9", "--q1", "0.99"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("feasible interval"));
}

#[test]
fn analytic_randomized_pvm_weights() {
    let out = qestopt(&["analytic", "randomized_pvm", "--r", "0.6"]);
    assert!(out.status.success());
    let v = stdout_json(&out);
    let mut w: Vec<f64> = v["weights"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    w.sort_by(f64::total_cmp);
    assert!((w[0] - 0.8 / 1.8).abs() < 1e-12 && (w[1] - 1.0 / 1.8).abs() < 1e-12, "{w:?}");
}

#[test]
fn analytic_tetra_and_two_copy() {
    let v = stdout_json(&qestopt(&["analytic", "tetra", "--alpha", "0.3", "--beta", "-0.2", "--gamma", "1"]));
    assert!((v["objective"].as_f64().unwrap() - 9.0).abs() < 1e-12);
    assert!(v["optimality_residual"].as_f64().unwrap() < 1e-10);
    let v = stdout_json(&qestopt(&["analytic", "two_copy", "--symmetric", "0.4"]));
    assert!((v["objective"].as_f64().unwrap() - 1.5).abs() < 1e-12);
    let out = qestopt(&["analytic", "pentagon"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_reports_and_detects_faults() {
    let good = qestopt(&["verify", "--only", "completeness,ordering,8"]);
    assert!(good.status.success(), "{}", String::from_utf8_lossy(&good.stderr));
    let report = stdout_json(&good);
    assert_eq!(report["passed"], true);
    assert_eq!(report["criteria"].as_array().unwrap().len(), 3);
    assert!(String::from_utf8_lossy(&good.stderr).contains("PASS [completeness]"));

    let bad = qestopt(&["verify", "--only", "completeness", "--corrupt-renormalization"]);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(stdout_json(&bad)["criteria"][0]["passed"], false);
}
