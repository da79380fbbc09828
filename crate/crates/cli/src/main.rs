//! `optoreadout`: noise budgets, operating-point sweeps, single-shot
//! histograms and efficiency calibration from one TOML configuration.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 1 output failure.

mod commands;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use optoreadout::config::{OutputFormat, RunConfig, RunSection, TABLE_ONE_TOML};
use optoreadout::readout::Convention;
use sha2::{Digest, Sha256};

use commands::Run;

#[derive(Debug, Parser)]
#[command(name = "optoreadout", version, about = "Optically mediated qubit readout: budgets, sweeps, shots, calibration")]
struct Cli {
    /// TOML configuration; the bundled device configuration when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// RNG seed (overrides `run.seed`).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (overrides `run.out_dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Output format (overrides `run.format`).
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// SNR convention of the budget path (overrides `budget.convention`).
    #[arg(long, global = true, value_enum)]
    convention: Option<ConventionArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Efficiency budget at the configured operating point.
    Budget,
    /// Budget over the Γ_e × Γ_o grid.
    Sweep,
    /// Single-shot histograms, threshold fidelity and optional Rabi map.
    Shots,
    /// Quantum efficiency from SNR and dephasing versus drive voltage.
    Calibrate,
    /// Print the bundled configuration.
    DefaultConfig,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ConventionArg {
    Methods,
    Supplementary,
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Io(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
            Failure::Io(m) => write!(f, "output error: {m}"),
        }
    }
}

impl From<optoreadout::Error> for Failure {
    fn from(e: optoreadout::Error) -> Self {
        match e {
            optoreadout::Error::Config(m) => Failure::Config(m),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

fn load(cli: &Cli) -> Result<Run, Failure> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?,
        None => TABLE_ONE_TOML.to_owned(),
    };
    let mut cfg = RunConfig::from_toml_str(&text).map_err(|e| match e {
        optoreadout::Error::Config(m) => Failure::Config(m),
        other => Failure::Config(other.to_string()),
    })?;
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.run.out_dir = out.clone();
    }
    if let Some(f) = cli.format {
        cfg.run.format = match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Jsonl => OutputFormat::Jsonl,
        };
    }
    if let Some(w) = cli.workers {
        cfg.run.workers = Some(w);
    }
    if let Some(c) = cli.convention {
        cfg.budget.convention = match c {
            ConventionArg::Methods => Convention::Methods,
            ConventionArg::Supplementary => Convention::Supplementary,
        };
    }
    cfg.validate()?;
    let mut physics = cfg.clone();
    physics.run = RunSection::default();
    let config_sha256 = hex(&Sha256::digest(physics.to_toml_string().as_bytes()));
    Ok(Run { cfg, config_sha256 })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    if let Command::DefaultConfig = cli.command {
        print!("{TABLE_ONE_TOML}");
        return Ok(());
    }
    let run = load(cli)?;
    if let Some(n) = run.cfg.run.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(format!("worker pool: {e}")))?;
    }
    match cli.command {
        Command::Budget => commands::budget(&run),
        Command::Sweep => commands::sweep(&run),
        Command::Shots => commands::shots(&run),
        Command::Calibrate => commands::calibrate(&run),
        Command::DefaultConfig => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
