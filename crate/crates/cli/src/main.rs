//! `stratbl run <config> [--set key=value]...`
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver divergence or
//! numerical failure, 4 I/O error.

mod config;
mod snapshot;
mod studies;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver error: {0}")]
    Solver(stratbl::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<stratbl::Error> for CliError {
    fn from(e: stratbl::Error) -> Self {
        match e {
            stratbl::Error::Config(m) => CliError::Config(m),
            other => CliError::Solver(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(stratbl::Error::Compatibility(_) | stratbl::Error::Horizon(_)) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

#[derive(Parser)]
#[command(name = "stratbl", version, about = "Boundary-layer studies for fast internal waves")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the study described by a TOML config.
    Run {
        config: PathBuf,
        /// Override a config entry, e.g. `--set grid.neta=128`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let Cmd::Run { config, set } = cli.cmd;
    let res = config::RunConfig::load(&config, &set).and_then(|cfg| studies::run(&cfg));
    match res {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("stratbl: {}", e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code())
        }
    }
}
