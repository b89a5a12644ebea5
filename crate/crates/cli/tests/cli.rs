use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
[field]
points = 24

[system]
channels = 4

[scene]
n_theta = 3
n_r = 2

[mc]
n_mc = 300

[scan]
sigmas = [0.01, 0.03]
counts = [100, 300]
seeds = [1, 2]
nus = [1.5]
ell_scales = [0.5, 1.0]
matern_sigmas = [0.03, 0.05]
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gpr-clutter"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

#[test]
fn baseline_writes_echo_report_and_tables() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = run(&["baseline", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(matches!(code(&out), 0 | 1), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    for f in ["resolved_config.toml", "report.json", "table_1_baseline.txt", "table_1_baseline.csv", "table_6_stage_e.csv", "stage_metrics.csv"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let table = fs::read_to_string(out_dir.join("table_1_baseline.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "stage,metric,value,threshold,verdict");
    assert_eq!(lines.count(), 9);

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["command"], "baseline");
    assert_eq!(report["provenance"]["n_mc"], 300);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Table I"));
}

#[test]
fn echo_reloads_to_the_same_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    run(&["baseline", "-c", &cfg, "-o", first.to_str().unwrap(), "--set", "mc.seed=20260316"]);
    let echo = first.join("resolved_config.toml");
    assert!(fs::read_to_string(&echo).unwrap().contains("seed = 20260316"));
    run(&["baseline", "-c", echo.to_str().unwrap(), "-o", second.to_str().unwrap()]);
    assert_eq!(
        fs::read_to_string(&echo).unwrap(),
        fs::read_to_string(second.join("resolved_config.toml")).unwrap()
    );
    // same config and seed reproduce the report byte for byte
    assert_eq!(
        fs::read_to_string(first.join("report.json")).unwrap(),
        fs::read_to_string(second.join("report.json")).unwrap()
    );
}

#[test]
fn invalid_config_exits_2_before_computing() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[field]\nsigma_g = -0.1\n");
    let out_dir = dir.path().join("out");
    let out = run(&["baseline", "-c", &cfg, "-o", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("MaternParams"));
    assert!(!out_dir.exists());
}

#[test]
fn parse_failures_exit_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "[mc\nseed = ");
    let out = run(&["baseline", "-c", &cfg, "-o", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("config.toml"));

    let unknown = write_config(dir.path(), "[mc]\nsamples = 10\n");
    let out = run(&["baseline", "-c", &unknown, "-o", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 2);

    let out = run(&["baseline", "-c", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&run(&["baseline"])), 2);
    assert_eq!(code(&run(&["frobnicate", "-c", "x.toml"])), 2);
    assert_eq!(code(&run(&[])), 2);
}

#[test]
fn bad_override_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = run(&["baseline", "-c", &cfg, "--set", "mc.n_mc"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn empty_report_list_prints_notice() {
    let out = run(&["report"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("no reports to render"));
}

#[test]
fn report_rerenders_saved_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let first = run(&["baseline", "-c", &cfg, "-o", out_dir.to_str().unwrap()]);
    let again = dir.path().join("again");
    let out = run(&[
        "report",
        "--input",
        out_dir.join("report.json").to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), code(&first));
    assert_eq!(
        fs::read_to_string(out_dir.join("table_1_baseline.csv")).unwrap(),
        fs::read_to_string(again.join("table_1_baseline.csv")).unwrap()
    );

    let garbage = dir.path().join("garbage.json");
    fs::write(&garbage, "{not json").unwrap();
    assert_eq!(code(&run(&["report", "-i", garbage.to_str().unwrap()])), 2);
}

#[test]
fn modal_writes_plot_series() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = run(&["modal", "-c", &cfg, "-o", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));

    let closure = fs::read_to_string(out_dir.join("closure_curve.csv")).unwrap();
    assert_eq!(
        closure.lines().next().unwrap(),
        "Q,global_closure,local_closure_center,local_closure_left,local_closure_right,r_eff_Q,kl_energy_Q"
    );
    let energy = fs::read_to_string(out_dir.join("kl_energy.csv")).unwrap();
    let rows: Vec<&str> = energy.lines().collect();
    assert_eq!(rows[0], "q,kl_energy");
    assert_eq!(rows.len(), 1 + 24);
    let last: f64 = rows[24].split(',').nth(1).unwrap().parse().unwrap();
    assert!((last - 1.0).abs() < 1e-12);
    assert!(out_dir.join("table_7_modal.csv").exists());
}

#[test]
fn scans_write_their_tables() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    for (cmd, table) in [
        ("scan-sigma", "table_2_sigma_scan.csv"),
        ("scan-nmc", "table_3_nmc_scan.csv"),
        ("scan-seed", "table_4_seed_scan.csv"),
        ("scan-matern", "table_5_matern_groups.csv"),
    ] {
        let out_dir = dir.path().join(cmd);
        let out = run(&[cmd, "-c", &cfg, "-o", out_dir.to_str().unwrap()]);
        assert!(matches!(code(&out), 0 | 1), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(out_dir.join(table).exists(), "{cmd} missing {table}");
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
        assert!(report["scan"]["trends"].as_array().is_some_and(|t| !t.is_empty()));
    }
}
