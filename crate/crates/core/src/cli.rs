//! Command-line front end.
//!
//! Exit codes: 0 success, 1 simulation or I/O failure, 2 configuration error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::engine::{run_with_design, Design, Trace};
use crate::plant::{preset, PlantModel};
use crate::protocol::fmt_f64;

pub const EXIT_OK: i32 = 0;
pub const EXIT_SIM: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Keys accepted by `sweep --key`.
pub const SWEEP_KEYS: &[&str] = &["mu", "rho", "tau_c", "eta0"];

#[derive(Debug, Parser)]
#[command(name = "adetc", version, about = "Event-triggered control with one-bit sensor messages")]
struct Cli {
    /// Directory for trace, event log and summary files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Suppress the report on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one experiment and write its artifacts.
    Run { config: PathBuf },
    /// Print the bound chain without simulating.
    Bounds { config: PathBuf },
    /// Re-run an experiment for several values of one key.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        key: String,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
}

struct Failure {
    code: i32,
    message: String,
}

fn config_err(message: impl ToString) -> Failure {
    Failure { code: EXIT_CONFIG, message: message.to_string() }
}

fn sim_err(message: impl ToString) -> Failure {
    Failure { code: EXIT_SIM, message: message.to_string() }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run { config } => cmd_run(&cli, config, out),
        Command::Bounds { config } => cmd_bounds(config, out),
        Command::Sweep { config, key, values } => cmd_sweep(&cli, config, key, values, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn prepare(path: &Path) -> Result<(ExperimentConfig, PlantModel, Design), Failure> {
    let cfg = ExperimentConfig::from_file(path).map_err(config_err)?;
    let model = preset(&cfg.sim.plant).map_err(config_err)?;
    let design = Design::new(&model, &cfg.sim).map_err(config_err)?;
    Ok((cfg, model, design))
}

fn resolve(out_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out_dir.join(p)
    }
}

fn write_file(path: &Path, body: &str) -> Result<(), Failure> {
    std::fs::write(path, body).map_err(|e| sim_err(format!("cannot write {}: {e}", path.display())))
}

fn write_artifacts(out_dir: &Path, cfg: &ExperimentConfig, trace: &Trace) -> Result<(), Failure> {
    std::fs::create_dir_all(out_dir).map_err(|e| sim_err(format!("cannot create {}: {e}", out_dir.display())))?;
    write_file(&resolve(out_dir, &cfg.outputs.trace_csv), &trace.to_csv())?;
    write_file(&resolve(out_dir, &cfg.outputs.event_log), &trace.event_log())?;
    let mut summary = trace.design.report();
    summary.push_str(&trace.summary_text());
    write_file(&resolve(out_dir, &cfg.outputs.summary), &summary)
}

fn cmd_run(cli: &Cli, path: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let (cfg, model, design) = prepare(path)?;
    if !cli.quiet {
        let _ = out.write_all(design.report().as_bytes());
        let _ = out.flush();
    }
    let trace = run_with_design(&model, &cfg.sim, design).map_err(sim_err)?;
    write_artifacts(&cli.out_dir, &cfg, &trace)?;
    if !cli.quiet {
        let _ = out.write_all(trace.summary_text().as_bytes());
    }
    Ok(())
}

fn cmd_bounds(path: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let (_, _, design) = prepare(path)?;
    let _ = out.write_all(design.report().as_bytes());
    Ok(())
}

fn cmd_sweep(cli: &Cli, path: &Path, key: &str, values: &[String], out: &mut dyn Write) -> Result<(), Failure> {
    if !SWEEP_KEYS.contains(&key) {
        return Err(config_err(format!("cannot sweep `{key}`; expected one of {}", SWEEP_KEYS.join(", "))));
    }
    let values: Vec<&str> = values.iter().map(|v| v.trim()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(config_err("sweep needs at least one value"));
    }
    let base = ExperimentConfig::from_file(path).map_err(config_err)?;
    let model = preset(&base.sim.plant).map_err(config_err)?;

    // every point is checked before any simulation starts
    let mut points = Vec::with_capacity(values.len());
    for v in &values {
        let mut cfg = base.clone();
        cfg.set(key, v).map_err(|m| config_err(format!("{key} = {v}: {m}")))?;
        cfg.finish().map_err(|e| config_err(format!("{key} = {v}: {e}")))?;
        let design = Design::new(&model, &cfg.sim).map_err(|e| config_err(format!("{key} = {v}: {e}")))?;
        points.push((*v, cfg, design));
    }

    let mut table = format!("{key},events,epochs,min_gap,final_norm,final_v,status\n");
    let mut failed = None;
    for (v, cfg, design) in points {
        match run_with_design(&model, &cfg.sim, design) {
            Ok(trace) => {
                let s = trace.summary();
                let gap = s.min_gap.map_or_else(|| "-".to_string(), fmt_f64);
                table.push_str(&format!(
                    "{v},{},{},{gap},{},{},ok\n",
                    trace.events.len(),
                    s.epochs,
                    fmt_f64(s.final_norm),
                    fmt_f64(s.final_v)
                ));
            }
            Err(e) => {
                table.push_str(&format!("{v},-,-,-,-,-,error\n"));
                failed.get_or_insert_with(|| format!("{key} = {v}: {e}"));
            }
        }
    }
    std::fs::create_dir_all(&cli.out_dir)
        .map_err(|e| sim_err(format!("cannot create {}: {e}", cli.out_dir.display())))?;
    write_file(&cli.out_dir.join("sweep.csv"), &table)?;
    if !cli.quiet {
        let _ = out.write_all(table.as_bytes());
    }
    match failed {
        Some(m) => Err(sim_err(m)),
        None => Ok(()),
    }
}
