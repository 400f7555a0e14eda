//! Batch front end: parse a run configuration, dispatch to the engine, and
//! emit report.json / summary.txt / trace.csv into the output directory.
//!
//! Exit status: 0 when all pass flags are true, 1 on numerical failure,
//! 2 on configuration errors.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

struct Args {
    config: PathBuf,
    out: PathBuf,
    threads: usize,
    seed: u64,
    tol_scale: f64,
}

fn parse_args() -> Result<Args, String> {
    let mut config = None;
    let mut out = PathBuf::from(".");
    let mut threads = std::env::var("NHOLO_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1usize);
    let mut seed = 0u64;
    let mut tol_scale = 1.0f64;
    let mut it = std::env::args().skip(1);
    while let Some(arg) = it.next() {
        let mut take = |name: &str| -> Result<String, String> {
            it.next().ok_or_else(|| format!("{name} needs a value"))
        };
        match arg.as_str() {
            "--config" => config = Some(PathBuf::from(take("--config")?)),
            "--out" => out = PathBuf::from(take("--out")?),
            "--threads" => {
                threads = take("--threads")?
                    .parse()
                    .map_err(|_| "--threads needs an integer".to_string())?
            }
            "--seed" => {
                seed = take("--seed")?
                    .parse()
                    .map_err(|_| "--seed needs an integer".to_string())?
            }
            "--tol-scale" => {
                tol_scale = take("--tol-scale")?
                    .parse()
                    .map_err(|_| "--tol-scale needs a number".to_string())?
            }
            "--help" | "-h" => {
                println!(
                    "usage: nholo --config PATH [--out DIR] [--threads N] [--seed N] [--tol-scale X]"
                );
                std::process::exit(0);
            }
            other => return Err(format!("unknown flag `{other}`")),
        }
    }
    Ok(Args {
        config: config.ok_or("--config is required")?,
        out,
        threads: threads.max(1),
        seed,
        tol_scale,
    })
}

fn main() -> ExitCode {
    let args = match parse_args() {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let cfg = match config::parse(&text) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let opts = runner::Options {
        out_dir: args.out,
        threads: args.threads,
        seed: args.seed,
        tol_scale: args.tol_scale,
    };
    match runner::run(&cfg, &opts) {
        Ok(report) => {
            for item in &report.items {
                println!(
                    "{:<32} max {:>12.4e}  {}",
                    item.equation_id,
                    item.max_abs,
                    if item.pass { "pass" } else { "FAIL" }
                );
            }
            if report.pass {
                println!("PASS");
                ExitCode::SUCCESS
            } else {
                println!("FAIL");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit as u8)
        }
    }
}
