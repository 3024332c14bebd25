use std::fs;
use std::path::Path;
use std::process::Command;

use adetc::cli::{run_cli, EXIT_CONFIG, EXIT_OK, EXIT_SIM};

const EXAMPLE1: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/example1.cfg");

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["adetc"];
    argv.extend_from_slice(args);
    let code = run_cli(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn value<'a>(report: &'a str, key: &str) -> &'a str {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(" = ")))
        .unwrap_or_else(|| panic!("no `{key}` in report"))
}

fn num(report: &str, key: &str) -> f64 {
    value(report, key).parse().unwrap()
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn bounds_for_example1() {
    let (code, out, _) = cli(&["bounds", EXAMPLE1]);
    assert_eq!(code, EXIT_OK);
    assert!((num(&out, "rho_min") - 4.0).abs() < 1e-9);
    assert!((num(&out, "kappa") - 5.0).abs() < 1e-12);
    assert!((num(&out, "sensor1.tau_star") - 1.0 / 6.0).abs() < 1e-15);
    assert!((num(&out, "sensor1.tau_tilde") - 0.05033261771338058).abs() < 1e-15);
    assert!((num(&out, "sensor1.delay_ceiling") - 1.0 / 6.0).abs() < 1e-15);
    assert_eq!(value(&out, "rho_admissible"), "true");
}

#[test]
fn run_writes_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let (code, out, _) = cli(&["--out-dir", a.to_str().unwrap(), "run", EXAMPLE1]);
    assert_eq!(code, EXIT_OK);
    // bound chain first, then the summary
    assert!(out.find("sensor1.tau_tilde").unwrap() < out.find("min_gap").unwrap());
    assert!(num(&out, "min_gap") >= 0.04);
    let (code, out, _) = cli(&["--quiet", "--out-dir", b.to_str().unwrap(), "run", EXAMPLE1]);
    assert_eq!(code, EXIT_OK);
    assert!(out.is_empty());
    for f in ["trace.csv", "events.log", "summary.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(a.join("trace.csv")).unwrap();
    assert!(csv.starts_with("t,x_1,V,eta,eps_hat_norm\n"));
}

#[test]
fn malformed_config_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_cfg(dir.path(), "bad.cfg", "plant = example1\nx0 = -10\nwhat = 3\n");
    let (code, _, err) = cli(&["run", &p]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("line 3"), "{err}");
    let (code, _, err) = cli(&["run", dir.path().join("missing.cfg").to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("cannot read"));
}

#[test]
fn small_mu_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_cfg(dir.path(), "mu.cfg", "plant = example1\nx0 = -10\nmu = 0.7\nrho = 4.1\n");
    let (code, _, err) = cli(&["bounds", &p]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("0.7"), "{err}");
}

#[test]
fn unwritable_output_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let (code, _, err) = cli(&["--quiet", "--out-dir", blocker.to_str().unwrap(), "run", EXAMPLE1]);
    assert_eq!(code, EXIT_SIM, "{err}");
}

#[test]
fn sweep_rows_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let (code, out, _) = cli(&["--out-dir", d, "sweep", EXAMPLE1, "--key", "mu", "--values", "0.75,0.82,0.9"]);
    assert_eq!(code, EXIT_OK);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("0.75,") && rows[2].starts_with("0.9,"));
    assert_eq!(fs::read_to_string(dir.path().join("sweep.csv")).unwrap(), out);

    let (code, out, _) = cli(&["--out-dir", d, "sweep", EXAMPLE1, "--key", "rho", "--values", "4.1,8.2"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.lines().skip(1).all(|r| r.ends_with(",ok")));

    assert_eq!(cli(&["--out-dir", d, "sweep", EXAMPLE1, "--key", "mu", "--values", ""]).0, EXIT_CONFIG);
    assert_eq!(cli(&["--out-dir", d, "sweep", EXAMPLE1, "--key", "mu"]).0, EXIT_CONFIG);
    assert_eq!(cli(&["--out-dir", d, "sweep", EXAMPLE1, "--key", "horizon", "--values", "1"]).0, EXIT_CONFIG);
    assert_eq!(cli(&["--out-dir", d, "sweep", EXAMPLE1, "--key", "mu", "--values", "0.6"]).0, EXIT_CONFIG);
}

#[test]
fn unknown_subcommand_exits_2() {
    assert_eq!(cli(&["frobnicate"]).0, EXIT_CONFIG);
}

#[test]
fn binary_reports_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_adetc");
    let st = Command::new(bin).args(["bounds", EXAMPLE1]).output().unwrap();
    assert_eq!(st.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&st.stdout).contains("kappa = "));
    let st = Command::new(bin).args(["bounds", "/nonexistent.cfg"]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
}
