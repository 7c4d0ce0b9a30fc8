mod args;
mod commands;

use std::fmt;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_GENERATION: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;
pub const EXIT_FINGERPRINT: u8 = 5;

impl CliError {
    pub fn new(code: u8, msg: impl Into<String>) -> Self {
        CliError {
            code,
            msg: msg.into(),
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::new(EXIT_USAGE, msg)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<roverplan::Error> for CliError {
    fn from(e: roverplan::Error) -> Self {
        use roverplan::Error as E;
        let code = match &e {
            E::Generation { .. } | E::SceneGeneration { .. } => EXIT_GENERATION,
            E::NonFinite { .. } => EXIT_NUMERIC,
            E::Fingerprint { .. } => EXIT_FINGERPRINT,
            E::Usage(_) | E::InvalidSpec(_) | E::Precondition(_) => EXIT_USAGE,
            _ => 1,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(1, e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::new(1, e.to_string())
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("RUST_LOG")
        .format_timestamp(None)
        .init();
}

/// Caps the rayon pool at `ROVER_THREADS` workers when set.
fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("ROVER_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::usage(format!(
            "ROVER_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::new(1, e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Plan(a) => commands::plan(a),
        Command::Viz(a) => commands::viz(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.code == EXIT_USAGE {
                eprintln!("Run `roverplan <COMMAND> --help` for usage.");
            }
            ExitCode::from(e.code)
        }
    }
}
