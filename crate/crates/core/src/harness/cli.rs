//! The `fhn` command line.
//!
//! Exit codes: 0 success, 1 identity or run failure, 2 invalid config or
//! arguments, 3 numerical blow-up.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use super::config::Config;
use super::fit::fit_rate;
use super::identities::check_identities;
use super::output::{parse_table, write_ensemble, write_json, write_table, EnsembleData};
use super::sweep::{run_convergence_sweep, run_delta_study, run_macro, run_meso};
use crate::diagnostics::records_to_csv;
use crate::error::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BLOW_UP: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fhn", version, about = "FitzHugh-Nagumo particle and limit-system experiments")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Particle simulation.
    Meso {
        #[command(subcommand)]
        action: RunAction,
    },
    /// Grid solver for the limit system.
    Macro {
        #[command(subcommand)]
        action: RunAction,
    },
    /// eps-sweep against the limit system, with rate fits.
    Sweep(RunArgs),
    /// Randomized checks of the exact identities.
    Check {
        #[command(subcommand)]
        what: CheckWhat,
    },
    /// Log-log rate fit of the columns of an existing CSV.
    Fit(FitArgs),
}

#[derive(Debug, Subcommand)]
enum RunAction {
    Run(RunArgs),
}

#[derive(Debug, Subcommand)]
enum CheckWhat {
    Identities {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides `meso.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    /// Column holding eps.
    #[arg(long, default_value = "eps")]
    x: String,
    /// Columns to fit (default: every other column with positive values).
    #[arg(long, value_delimiter = ',')]
    metrics: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a Config,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_particles: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    backend: Option<&'a str>,
    files: Vec<&'a str>,
}

fn load_config(args: &RunArgs) -> Result<Config> {
    let mut cfg = match &args.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = args.seed {
        cfg.meso.seed = s;
    }
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn meso_run(args: &RunArgs) -> Result<i32> {
    let cfg = load_config(args)?;
    let run = run_meso(&cfg)?;
    prepare_out(&args.out)?;
    std::fs::write(args.out.join("diagnostics.csv"), records_to_csv(&run.records))?;
    write_ensemble(&args.out.join("ensemble_final.fhne"), &EnsembleData::from(&run.ensemble))?;
    let manifest = Manifest {
        command: "meso run",
        version: env!("CARGO_PKG_VERSION"),
        config: &cfg,
        n_particles: Some(run.ensemble.len()),
        backend: Some(run.ensemble.interaction().backend_name()),
        files: vec!["diagnostics.csv", "ensemble_final.fhne"],
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    Ok(EXIT_OK)
}

fn macro_run(args: &RunArgs) -> Result<i32> {
    let cfg = load_config(args)?;
    let traj = run_macro(&cfg, cfg.macro_.cells)?;
    prepare_out(&args.out)?;
    let rows: Vec<Vec<Option<f64>>> = traj
        .monitors
        .iter()
        .map(|m| {
            vec![
                Some(m.t),
                Some(m.l2),
                Some(m.h2),
                Some(m.energy_lhs),
                Some(m.energy_rhs),
                Some(if m.flagged { 1.0 } else { 0.0 }),
                Some(m.solver_iterations as f64),
            ]
        })
        .collect();
    write_table(
        &args.out.join("macro_monitors.csv"),
        &["t", "l2", "h2", "energy_lhs", "energy_rhs", "flagged", "solver_iterations"],
        &rows,
    )?;
    let st = &traj.final_state;
    let g = st.grid;
    let axes = ["x", "y", "z"];
    let mut header: Vec<&str> = axes[..g.dim].to_vec();
    header.extend(["rho0", "V", "W"]);
    let rows: Vec<Vec<Option<f64>>> = (0..g.len())
        .map(|c| {
            let x = g.center(c);
            let mut row: Vec<Option<f64>> = x[..g.dim].iter().map(|v| Some(*v)).collect();
            row.extend([Some(st.rho0.values[c]), Some(st.v.values[c]), Some(st.w.values[c])]);
            row
        })
        .collect();
    write_table(&args.out.join("macro_final.csv"), &header, &rows)?;
    let manifest = Manifest {
        command: "macro run",
        version: env!("CARGO_PKG_VERSION"),
        config: &cfg,
        n_particles: None,
        backend: None,
        files: vec!["macro_monitors.csv", "macro_final.csv"],
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct DeltaSummary {
    deltas: Vec<f64>,
    gaps: Vec<f64>,
    sup_h2: Vec<f64>,
}

fn sweep(args: &RunArgs) -> Result<i32> {
    let cfg = load_config(args)?;
    let report = run_convergence_sweep(&cfg, Some(&args.out))?;
    if !cfg.sweep.delta_list.is_empty() {
        let d = run_delta_study(&cfg)?;
        write_json(&args.out.join("delta_continuation.json"), &DeltaSummary { deltas: d.deltas, gaps: d.gaps, sup_h2: d.sup_h2 })?;
    }
    for r in &report.runs {
        println!(
            "eps {:<8} N {:<7} sup H {:.3e}  int D1 {:.3e}  int conc {:.3e}",
            r.eps, r.n_particles, r.sup_h_eps, r.d1_integral, r.conc_integral
        );
    }
    for (name, fit) in &report.fits {
        println!("slope {name:<20} {:.3}", fit.slope);
    }
    if !report.flagged.is_empty() {
        println!("not decreasing: {}", report.flagged.join(", "));
    }
    Ok(EXIT_OK)
}

fn identities(seed: u64, trials: usize, out: Option<&Path>) -> Result<i32> {
    let report = check_identities(seed, trials)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(dir) = out {
        prepare_out(dir)?;
        write_json(&dir.join("identities.json"), &report)?;
    }
    Ok(if report.passed() { EXIT_OK } else { EXIT_FAILURE })
}

fn fit(args: &FitArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&args.input)?;
    let (header, rows) = parse_table(&text)?;
    let xi = header
        .iter()
        .position(|h| *h == args.x)
        .ok_or_else(|| Error::InvalidInput(format!("no column `{}`", args.x)))?;
    let wanted: Vec<usize> = if args.metrics.is_empty() {
        (0..header.len()).filter(|&i| i != xi).collect()
    } else {
        args.metrics
            .iter()
            .map(|m| header.iter().position(|h| h == m).ok_or_else(|| Error::InvalidInput(format!("no column `{m}`"))))
            .collect::<Result<_>>()?
    };
    let mut fits = std::collections::BTreeMap::new();
    for i in wanted {
        let pairs: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((r[xi]?, r[i]?))).collect();
        match fit_rate(&pairs) {
            Ok(f) => {
                fits.insert(header[i].clone(), f);
            }
            Err(e) if !args.metrics.is_empty() => return Err(e),
            Err(_) => {}
        }
    }
    println!("{}", serde_json::to_string_pretty(&fits)?);
    if let Some(dir) = &args.out {
        prepare_out(dir)?;
        write_json(&dir.join("fit.json"), &fits)?;
    }
    Ok(EXIT_OK)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Meso { action: RunAction::Run(a) } => meso_run(a),
        Command::Macro { action: RunAction::Run(a) } => macro_run(a),
        Command::Sweep(a) => sweep(a),
        Command::Check { what: CheckWhat::Identities { seed, trials, out } } => identities(*seed, *trials, out.as_deref()),
        Command::Fit(a) => fit(a),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_blow_up() {
        EXIT_BLOW_UP
    } else if err.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_FAILURE
    }
}

/// Parses `argv` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(Error::Config(format!("cannot build a pool of {n} threads: {e}"))),
        },
        None => dispatch(&cli),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        let blow = Error::BlowUp { step: 1, time: 0.1, magnitude: 1e7 };
        assert_eq!(exit_code(&Error::Sweep { eps: 0.1, source: Box::new(blow) }), EXIT_BLOW_UP);
        assert_eq!(exit_code(&Error::HistoryGap("x".into())), EXIT_FAILURE);
    }

    #[test]
    fn bad_arguments_are_config_errors() {
        assert_eq!(run(["fhn", "frobnicate"]), EXIT_CONFIG);
        assert_eq!(run(["fhn", "sweep", "--config", "/nonexistent.json"]), EXIT_CONFIG);
        assert_eq!(run(["fhn", "check", "identities", "--trials", "0"]), EXIT_CONFIG);
    }
}
