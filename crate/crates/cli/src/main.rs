//! `gpr-clutter` command-line harness.
//!
//! Every run subcommand loads a TOML config (defaults fill the gaps), applies
//! `--set key=value` overrides, validates, writes `resolved_config.toml`, runs,
//! then writes `report.json` plus text/CSV tables into `--out`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpr_clutter::config::ExperimentConfig;
use gpr_clutter::experiment::{provenance, run_baseline, run_modal};
use gpr_clutter::modal::write_closure_csv;
use gpr_clutter::report::{exit_code, render_tables, render_text, RunReport, Table, EXIT_ERROR};
use gpr_clutter::scan::{run_matern_scan, run_nmc_scan, run_seed_scan, run_sigma_scan};
use gpr_clutter::Error;

#[derive(Parser)]
#[command(name = "gpr-clutter", version, about = "Clutter-covariance validation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stage A–E consistency checks under one config.
    Baseline(RunArgs),
    /// Perturbation-strength scan over `scan.sigmas`.
    ScanSigma(RunArgs),
    /// Monte Carlo sample-size scan over `scan.counts`.
    ScanNmc(RunArgs),
    /// Seed robustness over `scan.seeds`.
    ScanSeed(RunArgs),
    /// Matérn grid over `scan.nus` × `scan.ell_scales` × `scan.matern_sigmas`.
    ScanMatern(RunArgs),
    /// KL truncation and closure errors.
    Modal(RunArgs),
    /// Re-render tables from saved `report.json` files.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; an empty file means all defaults.
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Override a config key, e.g. `--set mc.seed=7`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Saved run reports. Repeatable.
    #[arg(long, short)]
    input: Vec<PathBuf>,
    /// Also write the tables here.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Stage { partial, .. } = &e {
                if !partial.is_empty() {
                    let tables = vec![gpr_clutter::report::table_all_metrics(partial)];
                    eprint!("completed stages before the failure:\n{}", render_text(&tables));
                }
            }
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}

fn dispatch(command: Command) -> gpr_clutter::Result<i32> {
    let (name, args) = match command {
        Command::Report(args) => return report(&args),
        Command::Baseline(a) => ("baseline", a),
        Command::ScanSigma(a) => ("scan-sigma", a),
        Command::ScanNmc(a) => ("scan-nmc", a),
        Command::ScanSeed(a) => ("scan-seed", a),
        Command::ScanMatern(a) => ("scan-matern", a),
        Command::Modal(a) => ("modal", a),
    };
    // validation happens inside load, before anything is computed
    let config = ExperimentConfig::load(&args.config, &args.overrides)?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("resolved_config.toml"), config.echo()?)?;

    let mut run = RunReport {
        command: name.to_string(),
        provenance: provenance(&config)?,
        stages: Vec::new(),
        scan: None,
        modal: None,
    };
    let s = &config.scan;
    match name {
        "baseline" => run.stages = run_baseline(&config)?,
        "scan-sigma" => run.scan = Some(run_sigma_scan(&config, &s.sigmas)?),
        "scan-nmc" => run.scan = Some(run_nmc_scan(&config, &s.counts)?),
        "scan-seed" => run.scan = Some(run_seed_scan(&config, &s.seeds)?),
        "scan-matern" => run.scan = Some(run_matern_scan(&config, &s.nus, &s.ell_scales, &s.matern_sigmas)?),
        "modal" => {
            let modal = run_modal(&config)?;
            write_series(&args.out, &modal)?;
            run.modal = Some(modal);
        }
        _ => unreachable!(),
    }

    fs::write(args.out.join("report.json"), run.to_json()?)?;
    let tables = render_tables(&run);
    save_tables(&tables, &args.out)?;
    print!("{}", render_text(&tables));
    let code = exit_code(std::slice::from_ref(&run));
    println!("\n{name}: {}", if code == 0 { "PASS" } else { "FAIL" });
    Ok(code)
}

/// Closure-vs-Q and KL-energy-vs-Q plot series.
fn write_series(out: &Path, modal: &gpr_clutter::experiment::ModalSummary) -> gpr_clutter::Result<()> {
    write_closure_csv(&modal.curve, fs::File::create(out.join("closure_curve.csv"))?)?;
    let mut w = csv::Writer::from_path(out.join("kl_energy.csv")).map_err(Error::from)?;
    w.write_record(["q", "kl_energy"])?;
    for (i, e) in modal.kl_energy.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{e:.17e}")])?;
    }
    w.flush()?;
    Ok(())
}

fn save_tables(tables: &[Table], out: &Path) -> gpr_clutter::Result<()> {
    for t in tables {
        t.save(out)?;
    }
    Ok(())
}

fn report(args: &ReportArgs) -> gpr_clutter::Result<i32> {
    let mut runs = Vec::new();
    for path in &args.input {
        let text = fs::read_to_string(path)?;
        let run = RunReport::from_json(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if !run.is_empty() {
            runs.push(run);
        }
    }
    let tables: Vec<Table> = runs.iter().flat_map(render_tables).collect();
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        save_tables(&tables, out)?;
    }
    print!("{}", render_text(&tables));
    Ok(exit_code(&runs))
}
