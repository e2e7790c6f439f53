use std::process::{Command, Output};

use serde_json::Value;

fn cvqkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvqkd"))
        .args(args)
        .env_remove("CVQKD_THREADS")
        .output()
        .expect("binary runs")
}

fn json(args: &[&str]) -> Value {
    let out = cvqkd(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid json")
}

#[test]
fn keyrate_at_half_loss() {
    let v = json(&["keyrate", "--loss", "0.5", "--d", "2.1"]);
    let rate = v["rate"].as_f64().unwrap();
    assert!((rate / 0.0667 - 1.0).abs() <= 0.10, "{rate}");
    for key in ["rate", "selected_mass", "d", "eta", "grid", "converged"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["converged"], Value::Bool(true));
}

#[test]
fn lossless_rate_exceeds_half_loss() {
    let full = json(&["keyrate", "--eta", "1", "--d", "2.1"])["rate"].as_f64().unwrap();
    let half = json(&["keyrate", "--eta", "0.5", "--d", "2.1"])["rate"].as_f64().unwrap();
    assert!(full > half);
}

#[test]
fn loss_and_eta_give_identical_output() {
    let a = cvqkd(&["keyrate", "--loss", "0.25", "--n-e", "201", "--n-x", "401"]);
    let b = cvqkd(&["keyrate", "--eta", "0.75", "--n-e", "201", "--n-x", "401"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn simulate_is_byte_identical() {
    let args = ["simulate", "--loss", "0.5", "--d", "2.1", "--n", "1000000", "--seed", "7"];
    let a = cvqkd(&args);
    let b = cvqkd(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);

    let mut threaded = vec!["--threads", "2"];
    threaded.extend_from_slice(&args);
    let c = cvqkd(&threaded);
    let mut single = vec!["--threads", "1"];
    single.extend_from_slice(&args);
    assert_eq!(c.stdout, cvqkd(&single).stdout);
    assert_eq!(a.stdout, c.stdout);

    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    let stats = &v["stats"];
    let n_total = stats["n_total"].as_u64().unwrap();
    assert_eq!(n_total, 1_000_000);
    assert_eq!(
        stats["x_basis"]["n"].as_u64().unwrap() + stats["y_basis"]["n"].as_u64().unwrap(),
        n_total
    );
    assert_eq!(v["rate_check"]["agrees"], Value::Bool(true));
    assert_eq!(v["error_check"]["agrees"], Value::Bool(true));
}

#[test]
fn event_log_schema() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("events.csv");
    let out = cvqkd(&[
        "simulate", "--eta", "0.5", "--n", "1000", "--seed", "1", "--events", events.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&events).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "amp_q,amp_p,basis,bit,x_out,eve_correct,selected");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 1000);
    let selected: u64 = rows
        .iter()
        .map(|r| r.split(',').nth(6).unwrap().parse::<u64>().unwrap())
        .sum();
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(selected, v["stats"]["n_selected"].as_u64().unwrap());
}

#[test]
fn map_csv_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.csv");
    let out = cvqkd(&[
        "map", "--eta", "0.5", "--n-e", "11", "--n-x", "21", "-o", path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "E,x,delta_I");
    assert_eq!(text.lines().count() - 1, 11 * 21);
}

#[test]
fn map_json_has_boundary() {
    let v = json(&["map", "--eta", "0.5", "--n-e", "5", "--n-x", "9", "--format", "json"]);
    assert_eq!(v["boundary"].as_array().unwrap().len(), 5);
    assert_eq!(v["boundary"][0], Value::Null);
    assert_eq!(v["values"].as_array().unwrap().len(), 45);
}

#[test]
fn optimize_reports_optimum_and_reference() {
    let v = json(&["optimize", "--eta", "0.5", "--n-e", "201", "--n-x", "401"]);
    let d_star = v["d_star"].as_f64().unwrap();
    assert!((1.9..=2.3).contains(&d_star), "{d_star}");
    assert!(v["result"]["rate"].as_f64().unwrap() >= v["reference"]["rate"].as_f64().unwrap());
    assert_eq!(v["reference"]["d"].as_f64().unwrap(), 2.1);
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(&cfg, "# 75 % loss\nloss = 0.75\nn-e = 201\nn-x = 401\n").unwrap();
    let from_file = cvqkd(&["--config", cfg.to_str().unwrap(), "keyrate"]);
    let from_flags = cvqkd(&["keyrate", "--eta", "0.25", "--n-e", "201", "--n-x", "401"]);
    assert!(from_file.status.success());
    assert_eq!(from_file.stdout, from_flags.stdout);

    // command-line channel replaces the file's
    let overridden = cvqkd(&["--config", cfg.to_str().unwrap(), "keyrate", "--eta", "0.5"]);
    let v: Value = serde_json::from_slice(&overridden.stdout).unwrap();
    assert_eq!(v["eta"].as_f64().unwrap(), 0.5);
}

#[test]
fn argument_errors_exit_2() {
    for args in [
        vec!["keyrate", "--eta", "0.5", "--loss", "0.5"],
        vec!["keyrate", "--bogus"],
        vec!["keyrate"],
        vec!["keyrate", "--eta", "2"],
        vec!["simulate", "--eta", "0.5", "--format", "csv"],
    ] {
        assert_eq!(cvqkd(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn unwritable_output_fails_with_path() {
    let out = cvqkd(&["keyrate", "--eta", "0.5", "--n-e", "11", "--n-x", "11", "-o", "/nonexistent/dir/out.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/dir/out.json"));
}

#[test]
fn coarse_grid_reports_non_convergence() {
    let out = cvqkd(&["keyrate", "--eta", "0.5", "--n-e", "3", "--n-x", "3"]);
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["converged"], Value::Bool(false));
}
