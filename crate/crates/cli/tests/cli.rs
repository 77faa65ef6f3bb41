use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dicke_hfb::analysis::sweep;
use dicke_hfb::{ModelParams, SolverConfig};
use serde_json::Value;
use tempfile::TempDir;

const HEADER: &str = "y,coherent_photons,incoherent_photons,pop_c1,pop_c2,fano,log_negativity,re_omega1,im_omega1,re_omega_cav,im_omega_cav,re_omega2,im_omega2,converged";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dicke-hfb"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn config(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run_with(cmd: &str, cfg: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn solve_without_pump_is_vacuum() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "c.json", r#"{"pump_amplitude": 0}"#);
    let o = run_with("solve", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["observables"]["coherent_photons"], 0.0);
    assert_eq!(doc["convergence"]["converged"], true);
}

#[test]
fn solve_near_threshold_has_large_fluctuations() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "c.json", r#"{"atom_number": 10000, "coupling": 2.0}"#);
    let o = run_with("solve", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(doc["observables"]["incoherent_photons"].as_f64().unwrap() > 10.0);
    assert_eq!(doc["moments"]["operators"][1], "a_dag");
}

#[test]
fn solve_writes_out_file_and_honours_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "c.json", r#"{"coupling": 1.0}"#);
    let out = dir.path().join("state.json");
    let o = run_with("solve", &cfg, &["--mode", "bogoliubov", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["solver"]["mode"], "bogoliubov");

    let o = run_with("solve", &cfg, &["--seed", "11"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["solver"]["init"]["kind"], "random");
    assert_eq!(doc["solver"]["init"]["seed"], 11);
}

#[test]
fn malformed_config_reports_position() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "c.json", "{\n  \"coupling\": 1.0,\n  \"mixing\": oops\n}");
    let o = run_with("solve", &cfg, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let cfg = config(&dir, "d.json", r#"{"coupling": 1.0, "mixng": 0.2}"#);
    let o = run_with("solve", &cfg, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("mixng"));
}

#[test]
fn invalid_values_and_usage_are_config_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "c.json", r#"{"coupling": 1.0, "atom_number": 1}"#);
    assert_eq!(run_with("solve", &cfg, &[]).status.code(), Some(1));
    let cfg = config(&dir, "d.json", r#"{"init": "random"}"#);
    assert_eq!(run_with("solve", &cfg, &[]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["solve", "--config", "/nonexistent/c.json"]).status.code(), Some(1));
}

#[test]
fn non_convergence_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "c.json", r#"{"atom_number": 1000, "coupling": 2.05, "max_iterations": 2}"#);
    let o = run_with("solve", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn normal_phase_sweep() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "c.json", r#"{"y_grid": [0.0, 0.6, 1.2]}"#);
    let o = run_with("sweep", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().next().unwrap(), HEADER);
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert_eq!(r.len(), 14);
        assert!(r[1].parse::<f64>().unwrap().abs() < 1e-20, "{}", r[1]);
        assert_eq!(r[13], "true");
    }
    let re_omega1: f64 = rows[0][7].parse().unwrap();
    assert!((re_omega1 - 1.0).abs() < 1e-10);
}

#[test]
fn sweep_csv_round_trips_exactly() {
    let dir = TempDir::new().unwrap();
    let grid = [1.0, 1.5, 1.9];
    let cfg = config(&dir, "c.json", r#"{"atom_number": 500, "y_grid": [1.0, 1.5, 1.9]}"#);
    let o = run_with("sweep", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let params = ModelParams {
        atom_number: 500.0,
        ..Default::default()
    };
    let sw = sweep(&params, &SolverConfig::default(), &grid).unwrap();
    for (row, p) in csv_rows(&stdout(&o)).iter().zip(&sw.points) {
        let obs = p.observables.as_ref().unwrap();
        let s = p.spectrum.unwrap();
        let expected = [
            p.y,
            obs.coherent_photons,
            obs.incoherent_photons,
            obs.depletion_populations[1],
            obs.depletion_populations[2],
            obs.fano,
            obs.log_negativity,
            s.omega1.re,
            s.omega1.im,
            s.cavity.re,
            s.cavity.im,
            s.omega2.re,
            s.omega2.im,
        ];
        for (cell, v) in row.iter().zip(expected) {
            assert_eq!(cell.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{cell} vs {v}");
        }
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "c.json", r#"{"atom_number": 200, "y_min": 1.5, "y_max": 2.3, "y_points": 9}"#);
    let a = run_with("sweep", &cfg, &[]);
    let b = run_with("sweep", &cfg, &[]);
    assert_eq!(a.stdout, b.stdout);
    let cfg = config(
        &dir,
        "d.json",
        r#"{"atom_numbers": [50, 100, 200], "window_lo": 0.05, "window_hi": 0.3, "collapse_points": 6}"#,
    );
    let a = run_with("collapse", &cfg, &["--jobs", "1"]);
    let b = run_with("collapse", &cfg, &["--jobs", "3"]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn scaling_needs_enough_atom_numbers() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "c.json", r#"{"atom_numbers": [1e3, 1e4, 1e5]}"#);
    let o = run_with("scaling", &cfg, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("at least 4"), "{}", stderr(&o));

    let cfg = config(&dir, "d.json", r#"{"atom_numbers": [10, 20, 50, 100], "discard": 2}"#);
    let o = run_with("scaling", &cfg, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("after discarding"), "{}", stderr(&o));
}

#[test]
fn collapse_window_must_stay_on_one_side() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        &dir,
        "c.json",
        r#"{"atom_numbers": [1e3, 1e4, 1e5], "window_lo": -0.1, "window_hi": 0.1}"#,
    );
    let o = run_with("collapse", &cfg, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("crosses"), "{}", stderr(&o));
}

#[test]
fn synthetic_collapse_is_exact() {
    let dir = TempDir::new().unwrap();
    let curves = dir.path().join("curves.csv");
    let body = format!(
        r#"{{"atom_numbers": [1e3, 1e4, 1e5], "synthetic": true, "epsilon": 0.44, "curves_csv": {:?}}}"#,
        curves.to_str().unwrap()
    );
    let cfg = config(&dir, "c.json", &body);
    let o = run_with("collapse", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(doc["score"].as_f64().unwrap() < 1e-10);
    let scan = doc["scan"].as_array().unwrap();
    let best = scan
        .iter()
        .min_by(|a, b| a["score"].as_f64().unwrap().total_cmp(&b["score"].as_f64().unwrap()))
        .unwrap();
    assert_eq!(best["epsilon"], 0.4);
    let text = std::fs::read_to_string(curves).unwrap();
    assert_eq!(text.lines().next().unwrap(), "atom_number,x,phi");
    assert_eq!(text.lines().count(), 1 + 3 * 40);
}

#[test]
fn synthetic_collapse_recovers_exponent() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "c.json", r#"{"atom_numbers": [1e3, 1e4, 1e5], "synthetic": true}"#);
    let o = run_with("collapse", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((doc["epsilon"].as_f64().unwrap() - 0.44).abs() < 1e-6);
}
