use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ltqkd::config::RunConfig;
use ltqkd::optimize::optimize_rate;
use ltqkd::sweep::run_sweep;
use ltqkd::validation::run_validation;
use ltqkd::Error;

#[derive(Parser)]
#[command(
    name = "ltqkd",
    version,
    about = "Finite-key rates for the loss-tolerant three-state QKD protocol"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimised key rate over a range of distances, written as CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output file; falls back to output.path in the config, then stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Drop all statistical deviations.
        #[arg(long)]
        asymptotic: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the self-check suites and write a JSON report.
    Validate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimise a single distance and print the result with its trace.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        distance: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum Failure {
    Config(String),
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Config(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| {
            Failure::Runtime(format!("cannot create {}: {e}", p.display()))
        })?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load(config: &Path, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.optimizer.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Sweep {
            config,
            out,
            asymptotic,
            seed,
        } => {
            let mut cfg = load(&config, seed)?;
            cfg.run.asymptotic |= asymptotic;
            let table = run_sweep(&cfg)?;
            let target = out.or_else(|| cfg.output.path.clone());
            let mut w = open_out(target.as_deref())?;
            table.write_csv(&mut w)?;
            w.flush().map_err(|e| Failure::Runtime(e.to_string()))?;
        }
        Command::Validate { seed, out } => {
            let report = run_validation(seed)?;
            let mut w = open_out(out.as_deref())?;
            writeln!(w, "{}", report.to_json()).map_err(|e| Failure::Runtime(e.to_string()))?;
            w.flush().map_err(|e| Failure::Runtime(e.to_string()))?;
            if !report.passed {
                return Err(Failure::Validation("one or more suites failed".into()));
            }
        }
        Command::Optimize {
            config,
            distance,
            seed,
        } => {
            let cfg = load(&config, seed)?;
            let ev = cfg.evaluator()?.at_distance(distance);
            ev.channel
                .validate()
                .map_err(|e| Failure::Config(e.to_string()))?;
            let res = optimize_rate(&ev, &cfg.space, &cfg.optimizer)?;
            let out = serde_json::json!({
                "distance_km": distance,
                "rate": res.best.rate,
                "ell": res.best.ell,
                "ell_real": res.best.ell_real,
                "m0_lower": res.best.m0_l,
                "m1_lower": res.best.m1_l,
                "eph_upper": res.best.e_ph_u,
                "e_z": res.best.e_z,
                "aborted": res.best.aborted,
                "abort_reason": res.best.abort_reason.map(|a| a.as_str()),
                "params": res.best_params,
                "evaluations": res.evaluations,
                "trace": res.trace,
            });
            let mut w = open_out(None)?;
            writeln!(
                w,
                "{}",
                serde_json::to_string_pretty(&out).expect("serialisable")
            )
            .and_then(|_| w.flush())
            .map_err(|e| Failure::Runtime(e.to_string()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Validation(m)) => {
            eprintln!("validation failed: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
