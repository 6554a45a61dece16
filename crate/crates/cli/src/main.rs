//! `inviscid`: command-line driver for the inviscid-limit laboratory.
//!
//! Exit codes: 0 on success, 1 on validation or check failure, 2 when the
//! solver aborts. Every flag can also be set through an `INVISCID_*`
//! environment variable (`INVISCID_CONFIG`, `INVISCID_OUT`, `INVISCID_SEED`,
//! `INVISCID_JOBS`).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use inviscid_core::audit::write_csv;
use inviscid_core::harness::{cmd_check, cmd_report, cmd_run, cmd_sweep, RunConfig};
use inviscid_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "inviscid", version, about = "Inviscid-limit experiments over an oscillatory wall")]
struct Cli {
    /// JSON configuration file; defaults are used for anything it omits.
    #[arg(long, global = true, env = "INVISCID_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true, env = "INVISCID_OUT")]
    out: Option<PathBuf>,
    /// Random seed (overrides the configuration).
    #[arg(long, global = true, env = "INVISCID_SEED")]
    seed: Option<u64>,
    /// Worker threads for `sweep`.
    #[arg(long, global = true, env = "INVISCID_JOBS", default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Static checks: admissibility, ellipticity, profiles, corrector identities.
    Check,
    /// Integrate and audit one parameter point.
    Run,
    /// Run the configured sweep and fit the convergence rate.
    Sweep,
    /// Merge the records found in the output directory.
    Report,
    /// Print the effective configuration as JSON.
    Config,
}

fn load(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = load(cli)?;
    match cli.command {
        Command::Config => {
            println!("{}", cfg.to_json());
            Ok(true)
        }
        Command::Check => {
            let report = cmd_check(&cfg)?;
            for l in &report.lines {
                let mark = if l.pass { "ok  " } else { "FAIL" };
                println!("{mark} {:<40} {:>12.4e}  limit {:>10.3e}  {}", l.check, l.value, l.limit, l.detail);
            }
            std::fs::create_dir_all(&cfg.out)?;
            write_csv(&cfg.out.join("check.csv"), &report.lines)?;
            if let Some(f) = report.first_failure() {
                eprintln!("check failed: {} = {:e} (limit {:e}) {}", f.check, f.value, f.limit, f.detail);
                return Ok(false);
            }
            Ok(true)
        }
        Command::Run => {
            let o = cmd_run(&cfg)?;
            let r = &o.record;
            println!(
                "{} steps to t = {}: sup error {:.4e} (budget {:.4e}, ratio {:.4}), max closure {:.3e}, {:.1} s",
                r.steps, r.t_end, r.sup_error, r.budget, r.error_ratio, r.max_closure, o.manifest.elapsed_seconds
            );
            for w in &o.manifest.warnings {
                eprintln!("warning: {w}");
            }
            Ok(true)
        }
        Command::Sweep => {
            let o = cmd_sweep(&cfg, cli.jobs)?;
            for s in &o.skipped {
                eprintln!("skipped η = {:e}, ν = {:e}, δ = {:e}: {}", s.eta, s.nu, s.delta, s.reason);
            }
            let f = &o.fit;
            println!(
                "{} runs: slope {:.4}, M in [{:.4e}, {:.4e}] (max/min {:.3}), gradient slope {:.4}",
                f.points, f.slope, f.m_min, f.m_max, f.m_ratio, f.grad_slope
            );
            Ok(true)
        }
        Command::Report => {
            let r = cmd_report(&cfg.out)?;
            print!("{}", r.text);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Io(_) => 1,
                ref other => other.exit_code(),
            };
            ExitCode::from(code as u8)
        }
    }
}
