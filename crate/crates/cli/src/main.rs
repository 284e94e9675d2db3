//! `wiou`: regression simulations, gradient audits and gain-curve sweeps.
//!
//! Every command writes CSV artifacts plus a `manifest.json` into `--out`.
//! `wiou replay <manifest>` reruns a recorded command and checks that the
//! artifacts come out byte-for-byte identical.
//!
//! Exit codes: 0 success, 1 property failure, 2 usage error.

mod gain;
mod gradcheck;
mod manifest;
mod simulate;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use manifest::{Invocation, ReplayArgs, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "wiou", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the anchor/target regression simulation for a set of losses.
    Simulate(simulate::SimulateArgs),
    /// Compare tape gradients with central finite differences.
    GradCheck(gradcheck::GradCheckArgs),
    /// Tabulate the non-monotonic gradient gain.
    GainCurve(gain::GainArgs),
    /// Rerun the command recorded in a manifest and compare its artifacts.
    Replay(ReplayArgs),
}

/// Why a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or parameters.
    Usage(anyhow::Error),
    /// The command ran but a checked property does not hold.
    Property(String),
    /// I/O or other runtime trouble.
    Runtime(anyhow::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Property(_) | Failure::Runtime(_) => 1,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

pub fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

/// A finished run: the manifest to write and, optionally, a property that
/// failed.
pub struct Completed {
    pub manifest: RunManifest,
    pub failure: Option<String>,
}

/// Creates `dir` and writes `name` into it, returning the relative path.
pub fn write_artifact(dir: &Path, name: &str, bytes: &[u8]) -> Result<String, Failure> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), bytes)?;
    Ok(name.to_string())
}

/// Runs an invocation into `out` and writes its manifest.
pub fn execute(invocation: Invocation, out: &Path) -> Result<(), Failure> {
    let done = match &invocation {
        Invocation::Simulate(args) => simulate::run(args, out)?,
        Invocation::GradCheck(args) => gradcheck::run(args, out)?,
        Invocation::GainCurve(args) => gain::run(args, out)?,
    };
    done.manifest.write(out)?;
    match done.failure {
        Some(msg) => Err(Failure::Property(msg)),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => {
            let out = args.out.clone();
            execute(Invocation::Simulate(args), &out)
        }
        Command::GradCheck(args) => {
            let out = args.out.clone();
            execute(Invocation::GradCheck(args), &out)
        }
        Command::GainCurve(args) => {
            let out = args.out.clone();
            execute(Invocation::GainCurve(args), &out)
        }
        Command::Replay(args) => manifest::replay(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match &failure {
                Failure::Usage(e) => eprintln!("error: {e:#}"),
                Failure::Property(msg) => eprintln!("property failure: {msg}"),
                Failure::Runtime(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(failure.exit_code())
        }
    }
}
