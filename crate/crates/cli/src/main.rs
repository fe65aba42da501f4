//! `pbec`: command-line front end for the photon-condensate fluctuation model.

mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind as ClapErrorKind;
use clap::Parser;
use pbec_core::ErrorKind;
use serde_json::json;

use crate::args::{Cli, Command, SpectrumCommand};

/// Why a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    Core(pbec_core::Error),
    /// Usage error reported before any computation.
    Usage(String),
    /// The command ran but its own checks did not hold.
    Checks(String),
}

impl From<pbec_core::Error> for Failure {
    fn from(e: pbec_core::Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Core(e) => match e.kind() {
                ErrorKind::Validation => 1,
                ErrorKind::Numerical => 2,
                ErrorKind::Io => 3,
            },
            Failure::Usage(_) | Failure::Checks(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Core(e) => match e.kind() {
                ErrorKind::Validation => "validation",
                ErrorKind::Numerical => "numerical",
                ErrorKind::Io => "io",
            },
            Failure::Usage(_) => "usage",
            Failure::Checks(_) => "checks",
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Core(e) => e.to_string(),
            Failure::Usage(m) | Failure::Checks(m) => m.clone(),
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Steady(a) => commands::steady(&a),
        Command::G2(a) => commands::g2(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Oracle(a) => commands::oracle(&a),
        Command::Spectrum { command } => match command {
            SpectrumCommand::Curve(a) => commands::spectrum_curve(&a),
            SpectrumCommand::Fit(a) => commands::spectrum_fit(&a),
            SpectrumCommand::CriticalNumber(a) => commands::critical_number(&a),
        },
    }
}

fn report(f: &Failure) -> ExitCode {
    let body = json!({ "error": { "kind": f.kind(), "message": f.message(), "exit_code": f.code() } });
    eprintln!("{body}");
    ExitCode::from(f.code())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion) => e.exit(),
        Err(e) => return report(&Failure::Usage(e.render().to_string().trim_end().to_string())),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(&f),
    }
}
