use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pbec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbec"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn json_ok(args: &[&str]) -> Value {
    let out = pbec(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_of(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("error JSON on stderr");
    serde_json::from_str(line).unwrap()
}

fn csv_rows(path: &Path) -> (String, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn steady_reproduces_zero_delay_values() {
    let low = json_ok(&["steady", "--target-n", "4620"]);
    assert!((low["g2_zero"]["normal"].as_f64().unwrap() - 2.0).abs() < 0.1);
    let high = json_ok(&["steady", "--target-n", "17100"]);
    assert!((high["g2_zero"]["normal"].as_f64().unwrap() - 1.3).abs() < 0.1);
    for key in ["n", "m_up", "n2", "nm", "m2"] {
        assert!(high[key].is_number(), "{key}");
    }
}

#[test]
fn steady_without_pump_is_empty() {
    let v = json_ok(&["steady", "--gamma-up", "0"]);
    assert_eq!(v["n"].as_f64(), Some(0.0));
    assert!(v["g2_zero"]["normal"].is_null());
}

#[test]
fn steady_writes_the_report_to_out() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("steady.json");
    let v = json_ok(&["steady", "--target-n", "1e4", "--out", path.to_str().unwrap()]);
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v, saved);
}

#[test]
fn params_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.conf");
    std::fs::write(&path, "M = 100\nkappa_GHz = 1\ngamma_up_GHz = 0.4\nB_em_GHz = 0.04\nB_abs_GHz = 7e-4\n").unwrap();
    let p = path.to_str().unwrap();
    let base = json_ok(&["steady", "--params", p]);
    assert_eq!(base["params"]["molecules"].as_f64(), Some(100.0));
    let over = json_ok(&["steady", "--params", p, "--kappa-GHz", "2"]);
    assert_eq!(over["params"]["kappa"].as_f64(), Some(2.0));
    assert!(over["n"].as_f64().unwrap() < base["n"].as_f64().unwrap());
}

#[test]
fn g2_fit_recovers_relaxation_time() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g2.csv");
    let v = json_ok(&["g2", "--target-n", "17100", "--tau-max-ns", "30", "--out", path.to_str().unwrap()]);
    let fit = &v["fit"];
    assert_eq!(fit["model"], "damped_oscillation");
    let tau_c = fit["tau_c"].as_f64().unwrap();
    assert!((2.0..=8.0).contains(&tau_c), "{tau_c}");
    let (re, im) = (v["eigen"]["lambda_real"].as_f64().unwrap(), v["eigen"]["lambda_imag"].as_f64().unwrap());
    assert!((fit["lambda_real"].as_f64().unwrap() - re).abs() <= 0.01 * re.abs());
    assert!((fit["lambda_imag"].as_f64().unwrap() - im).abs() <= 0.01 * im);
    let (header, rows) = csv_rows(&path);
    assert_eq!(header, "tau_ns,g2");
    assert_eq!(rows.len(), 301);
}

#[test]
fn orderings_differ_by_inverse_photon_number() {
    let normal = json_ok(&["g2", "--target-n", "4620", "--ordering", "normal"]);
    let direct = json_ok(&["g2", "--target-n", "4620", "--ordering", "direct"]);
    let n = normal["moments"]["n"].as_f64().unwrap();
    let gap = direct["g2_zero"].as_f64().unwrap() - normal["g2_zero"].as_f64().unwrap();
    assert!((gap - 1.0 / n).abs() < 1e-12, "{gap} vs {}", 1.0 / n);
}

#[test]
fn overdamped_curve_does_not_oscillate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g2.csv");
    json_ok(&["g2", "--target-n", "2000", "--out", path.to_str().unwrap()]);
    let (_, rows) = csv_rows(&path);
    // two real exponentials cross g2 = 1 at most once
    let crossings = rows.windows(2).filter(|w| (w[0][1] - 1.0).signum() != (w[1][1] - 1.0).signum()).count();
    assert!(crossings <= 1, "{crossings}");
}

#[test]
fn numerical_and_closed_form_curves_agree() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    json_ok(&["g2", "--target-n", "1e4", "--out", a.to_str().unwrap()]);
    json_ok(&["g2", "--target-n", "1e4", "--numerical", "--out", b.to_str().unwrap()]);
    let (_, ra) = csv_rows(&a);
    let (_, rb) = csv_rows(&b);
    for (x, y) in ra.iter().zip(&rb) {
        assert!((x[1] - y[1]).abs() <= 1e-9 * x[1]);
    }
}

#[test]
fn sweep_rows_and_frequency_at_ten_thousand() {
    let out = pbec(&["sweep", "--n-list", "10000"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n_infty,gamma_up_GHz,omega2_GHz,lambda_real_GHz,g2_zero");
    assert_eq!(lines.len(), 2);
    let omega: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
    assert!((omega - 0.76).abs() <= 0.05 * 0.76, "{omega}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let status = pbec(&["sweep", "--n-min", "1e4", "--n-max", "2.5e4", "--points", "12", "--out", path.to_str().unwrap()]);
    assert!(status.status.success());
    let (_, rows) = csv_rows(&path);
    assert_eq!(rows.len(), 12);
    assert!(rows.windows(2).all(|w| w[1][2] > w[0][2]));
}

#[test]
fn oracle_passes_above_threshold_and_is_deterministic() {
    let args = ["oracle", "--preset", "oracle-m100", "--trajectories", "400", "--seed", "9"];
    let a = pbec(&args);
    let b = pbec(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["pass"], true);
    assert!(v["moment_deltas"]["n"].as_f64().unwrap() < 0.05);
}

#[test]
fn oracle_below_threshold_reports_closure_as_informational() {
    let v = json_ok(&["oracle", "--preset", "below-threshold", "--trajectories", "400"]);
    assert_eq!(v["above_threshold"], false);
    let checks = v["checks"].as_array().unwrap();
    let closure = checks.iter().find(|c| c["name"] == "closure_moments").unwrap();
    assert_eq!(closure["informational"], true);
}

#[test]
fn oracle_single_molecule_identities_hold() {
    let v = json_ok(&["oracle", "--preset", "trivial-m1", "--trajectories", "400"]);
    assert_eq!(v["lattice"]["molecules"].as_u64(), Some(1));
    assert_eq!(v["truncation"]["pair_excited"].as_f64(), Some(0.0));
    assert!(v["stationary_residual"].as_f64().unwrap() < 1e-10);
}

#[test]
fn oracle_rejects_macroscopic_molecule_numbers() {
    let out = pbec(&["oracle", "--preset", "fig4", "--target-n", "1e4"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_of(&out)["error"]["kind"], "validation");
}

#[test]
fn spectrum_curve_peaks_at_the_cutoff_and_fits_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("spectrum.csv");
    let p = path.to_str().unwrap();
    let out = pbec(&["spectrum", "curve", "--n", "5e4", "--out", p]);
    assert!(out.status.success());
    let (header, rows) = csv_rows(&path);
    assert_eq!(header, "wavelength_nm,intensity");
    let peak = rows.iter().max_by(|a, b| a[1].total_cmp(&b[1])).unwrap();
    assert!((peak[0] - 571.3).abs() < 0.1, "{}", peak[0]);
    let v = json_ok(&["spectrum", "fit", "--data", p]);
    let n = v["n_condensate"].as_f64().unwrap();
    assert!((n - 5e4).abs() <= 0.01 * 5e4, "{n}");
}

#[test]
fn critical_number_of_the_experimental_trap() {
    let v = json_ok(&["spectrum", "critical-number"]);
    let nc = v["critical_number"].as_f64().unwrap();
    assert!((nc - 80660.0).abs() <= 0.01 * 80660.0, "{nc}");
}

#[test]
fn validation_errors_exit_with_one() {
    let out = pbec(&["steady", "--kappa-GHz=-1"]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_of(&out);
    assert_eq!(e["error"]["kind"], "validation");
    assert_eq!(e["error"]["exit_code"], 1);

    let out = pbec(&["steady", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_of(&out)["error"]["kind"], "usage");
}

#[test]
fn io_errors_exit_with_three() {
    let out = pbec(&["steady", "--params", "/nonexistent/model.conf"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_of(&out)["error"]["kind"], "io");
}
