use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmse_bounds_cli::commands::{self, Manifest};
use mmse_bounds_cli::output::Table;
use mmse_bounds_cli::validate;
use mmse_bounds_cli::{CliError, ExperimentConfig, Result};

/// Lower bounds on the MMSE of a binary attribute behind the Gaussian mechanism.
///
/// Log verbosity is read from `MMSE_BOUNDS_LOG` (error, warn, info, debug).
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Barron-constant bounds per noise level.
    BarronSweep(Common),
    /// Empirical loss minimization per noise level.
    Estimate(Common),
    /// Probabilistic MMSE lower bounds with the exact-MMSE oracle.
    Certify(Common),
    /// Run the self-check suites; prints one JSON line per suite.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; omitted means the default setting.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides the config.
    #[arg(long)]
    threads: Option<usize>,
    /// Also write a JSON run manifest here.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
                CliError::Io(io) => CliError::Config(format!("{}: {io}", p.display())),
                other => other,
            })?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        Ok(cfg)
    }

    fn sink(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(io::stdout().lock()),
        })
    }
}

fn run_table(name: &str, args: &Common, f: fn(&ExperimentConfig) -> Result<Table>) -> Result<()> {
    let cfg = args.config()?;
    let table = f(&cfg)?;
    table.write_csv(args.sink()?)?;
    if let Some(p) = &args.manifest {
        let file = BufWriter::new(File::create(p)?);
        serde_json::to_writer_pretty(file, &Manifest::new(name, &cfg))?;
    }
    Ok(())
}

fn run_validate(args: &Common) -> Result<()> {
    let cfg = args.config()?;
    let reports = validate::run_all(cfg.seed);
    let mut out = args.sink()?;
    for r in &reports {
        serde_json::to_writer(&mut out, r)?;
        writeln!(out)?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.suite).collect();
    writeln!(out, "{}", serde_json::json!({ "summary": true, "passed": failed.is_empty(), "failed_suites": failed }))?;
    out.flush()?;
    if failed.is_empty() { Ok(()) } else { Err(CliError::Validation(failed.join(", "))) }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("MMSE_BOUNDS_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::BarronSweep(a) => run_table("barron-sweep", a, commands::barron_sweep),
        Command::Estimate(a) => run_table("estimate", a, commands::estimate),
        Command::Certify(a) => run_table("certify", a, commands::certify_table),
        Command::Validate(a) => run_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
