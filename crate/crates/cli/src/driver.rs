//! Argument handling, `run.json` and sweeps.

use crate::commands::{format_checks, run, Command, Outcome, Setup};
use crate::config::{parse_sweep, RunConfig};
use crate::error::CliError;
use crate::io::write_json;
use clap::Parser;
use rayon::prelude::*;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Parser)]
#[command(name = "rupture-lab", version, about = "Radial rupture profiles: constants, profiles, diagnostics, bifurcation curves")]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// JSON config; defaults apply to every missing key.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if needed).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Fan the command over values: `a=1e-2,1e-3`, `tau=...`, `eps=...` or `b=...`.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Overrides `solver.rel_tol`.
    #[arg(long)]
    pub tol: Option<f64>,
}

/// Runs the parsed command and returns the process exit code.
pub fn execute(args: &Args) -> i32 {
    match try_execute(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn try_execute(args: &Args) -> Result<i32, CliError> {
    set_threads()?;
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = args.tol {
        cfg.solver.rel_tol = t;
    }
    let setup = Setup::new(&cfg)?;
    std::fs::create_dir_all(&args.out)?;
    let sweep = args.sweep.as_deref().map(parse_sweep).transpose()?;
    let code = match &sweep {
        None => {
            let outcome = run(args.command, &cfg, &args.out)?;
            report(args.command, &outcome);
            write_run_json(&args.out, args.command, &cfg, &setup, None)?;
            if outcome.failed_checks.is_empty() { 0 } else { 3 }
        }
        Some((key, values)) => {
            let cfgs = values.iter().map(|&v| cfg.with_sweep_value(key, v)).collect::<Result<Vec<_>, _>>()?;
            let items: Vec<(PathBuf, Result<Outcome, CliError>)> = cfgs
                .par_iter()
                .enumerate()
                .map(|(i, c)| {
                    let dir = args.out.join(format!("{key}_{i:03}"));
                    let r = run(args.command, c, &dir);
                    (dir, r)
                })
                .collect();
            let mut code = 0;
            let mut merged = Vec::new();
            for ((dir, r), &v) in items.iter().zip(values) {
                let name = dir.file_name().unwrap().to_string_lossy().to_string();
                match r {
                    Ok(o) => {
                        if !o.failed_checks.is_empty() && code == 0 {
                            code = 3;
                        }
                        merged.push(json!({ "key": key, "value": v, "dir": name, "summary": o.summary }));
                    }
                    Err(e) => {
                        eprintln!("error in {name}: {e}");
                        if code == 0 {
                            code = e.exit_code();
                        }
                        merged.push(json!({ "key": key, "value": v, "dir": name, "error": e.to_string() }));
                    }
                }
            }
            write_json(&args.out.join("sweep.json"), &merged)?;
            write_run_json(&args.out, args.command, &cfg, &setup, Some((key, values)))?;
            println!("{} sweep items written to {}", merged.len(), args.out.display());
            code
        }
    };
    Ok(code)
}

fn set_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("RUPTURE_LAB_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Validation(format!("RUPTURE_LAB_THREADS must be a positive integer, got `{v}`")))?;
        // Fails only if a pool already exists, which is harmless here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn report(cmd: Command, outcome: &Outcome) {
    if cmd == Command::Verify {
        print!("{}", format_checks(&outcome.summary));
    } else {
        println!("{}", serde_json::to_string_pretty(&outcome.summary).unwrap_or_default());
    }
}

fn write_run_json(
    out: &Path,
    cmd: Command,
    cfg: &RunConfig,
    setup: &Setup,
    sweep: Option<(&String, &Vec<f64>)>,
) -> Result<(), CliError> {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta: Value = json!({
        "command": cmd,
        "config": cfg,
        "derived": setup.constants,
        "sweep": sweep.map(|(k, v)| json!({ "key": k, "values": v })),
        "versions": { "rupture": rupture::VERSION, "rupture-lab": env!("CARGO_PKG_VERSION") },
        "created_unix": now,
    });
    write_json(&out.join("run.json"), &meta)
}
