//! `dledger`: run scenarios, verify ledger dumps, print analytic predictions.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use dledger::export::{replay, DumpError};
use dledger::sim::{oracle, run_scenario, stats, MetricsLog, Scenario};

#[derive(Parser, Debug)]
#[command(name = "dledger", version, about = "DAG ledger simulator and verifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario file and write its outputs.
    Run {
        scenario: PathBuf,
        /// Overrides the seed given in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Outputs to write; repeat or separate with commas.
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Format::Csv, Format::Dot, Format::Dump])]
        format: Vec<Format>,
    },
    /// Replay a ledger dump and report the first violation.
    Verify { dump: PathBuf },
    /// Predicted tailing size, approvals to confirm and confirmation bound.
    Oracle {
        /// Number of entities.
        entities: usize,
        /// Confirmation threshold.
        w_confirm: u32,
        /// Approvals per record.
        approvals: usize,
        /// System-wide record rate, records per second.
        lambda: f64,
        /// Propagation delay, seconds.
        delay: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Dot,
    Dump,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DLEDGER_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run { scenario, seed, out_dir, format } => cmd_run(&scenario, seed, &out_dir, &format),
        Command::Verify { dump } => cmd_verify(&dump),
        Command::Oracle { entities, w_confirm, approvals, lambda, delay } => {
            cmd_oracle(entities, w_confirm, approvals, lambda, delay)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_run(path: &Path, seed: Option<u64>, out_dir: &Path, formats: &[Format]) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read scenario {}", path.display()))
        .map_err(usage)?;
    let mut scenario = Scenario::from_toml(&text)
        .with_context(|| format!("bad scenario {}", path.display()))
        .map_err(usage)?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))
        .map_err(usage)?;
    log::info!("running {} (seed {}, {} s simulated)", scenario.name, scenario.seed, scenario.duration);
    let started = std::time::Instant::now();
    let sim = run_scenario(&scenario).context("scenario failed").map_err(usage)?;
    log::info!("finished in {:.1?}", started.elapsed());

    let write = |name: &str, text: &str| -> Result<(), Failure> {
        let p = out_dir.join(name);
        std::fs::write(&p, text).with_context(|| format!("cannot write {}", p.display())).map_err(usage)
    };
    let node = sim.honest_nodes().first().copied().unwrap_or(0);
    for f in formats {
        match f {
            Format::Csv => {
                for (name, text) in sim.metrics().csv_files() {
                    write(name, &text)?;
                }
            }
            Format::Dot => write("ledger.dot", &sim.dot(node))?,
            Format::Dump => write("ledger.dump", &sim.dump(node))?,
        }
    }
    print_summary(sim.metrics(), &scenario, sim.peer(node).ledger().len());
    Ok(())
}

fn print_summary(m: &MetricsLog, s: &Scenario, stored: usize) {
    let half = s.duration / 2.0;
    let unconfirmed = MetricsLog::window(&m.unconfirmed_series(), half);
    let tailing = MetricsLog::window(&m.tailing_series(), half);
    let latency = m.confirmation_latencies(0.0, s.publish_until() - s.liveness_grace);
    println!("scenario            {} (seed {})", s.name, s.seed);
    println!("records published   {}", m.records.len());
    println!("records stored      {stored}");
    println!("mean unconfirmed    {:.2}", stats::mean(&unconfirmed));
    println!("mean tailing        {:.2}", stats::mean(&tailing));
    println!("mean confirmation   {:.3} s over {} records", stats::mean(&latency), latency.len());
    println!("peak unconf. depth  {}", m.peak_depth());
    println!("liveness violations {}", m.liveness_violations);
}

fn cmd_verify(path: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read dump {}", path.display()))
        .map_err(usage)?;
    let verification = |e: anyhow::Error| Failure { code: 1, error: e };
    let r = match replay(&text) {
        Ok(r) => r,
        Err(e @ (DumpError::Header { .. } | DumpError::Empty)) => {
            return Err(verification(anyhow::Error::new(e).context("not a ledger dump")))
        }
        Err(e) => return Err(usage(e.into())),
    };
    match r.violation {
        None => {
            println!("valid ({} records)", r.records);
            Ok(())
        }
        Some(v) => {
            println!("invalid: {v}");
            Err(verification(anyhow::anyhow!("verification failed")))
        }
    }
}

fn cmd_oracle(entities: usize, w: u32, approvals: usize, lambda: f64, delay: f64) -> Result<(), Failure> {
    if !(lambda.is_finite() && lambda > 0.0 && delay.is_finite() && delay >= 0.0) {
        return Err(usage(anyhow::anyhow!("lambda must be positive and the delay non-negative")));
    }
    let c = oracle::tailing_size(approvals, lambda, delay).map_err(|e| usage(e.into()))?;
    let conf = oracle::confirmation(entities, w, approvals, delay).map_err(|e| usage(e.into()))?;
    println!("C_pred {c:.4}");
    println!("A_pred {:.4}", conf.approvals_expected);
    println!("t_confirm_bound {:.4}", conf.time_bound);
    Ok(())
}
