//! Batch front end of `bvgrid`: loads a measure and functions, runs one
//! operation, writes `report.json` plus CSV dumps and turns the outcome of
//! the numeric checks into an exit status.
//!
//! Exit status 0 means every check passed, 2 that some check failed or a
//! numeric routine gave up, 1 a usage or parse error. Inputs are parsed in
//! full before anything is written, so a rejected run leaves no artifacts.

mod commands;
mod config;
mod inputs;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{Command, RunConfig, Tolerances};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Args(#[from] clap::Error),
    #[error(transparent)]
    Core(#[from] bvgrid::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use bvgrid::Error as E;
        match self {
            CliError::Usage(_) | CliError::Args(_) | CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                E::SolverDiverged { .. }
                | E::NotAdmissible(_)
                | E::EmptyRegion
                | E::Inconsistent(_)
                | E::NotStabilized { .. }
                | E::LpFailure(_) => 2,
                _ => 1,
            },
        }
    }
}

/// One numeric property: passes when `residual <= threshold`.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub residual: f64,
    pub threshold: f64,
}

impl Check {
    pub fn at_most(name: impl Into<String>, residual: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            passed: residual <= threshold,
            residual,
            threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MeasureSummary {
    pub shape: Vec<usize>,
    pub spacing: f64,
    pub total_mass: f64,
    pub support_cells: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: Command,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    pub measure: MeasureSummary,
    pub seed: u64,
    pub tolerances: Tolerances,
    pub results: serde_json::Value,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            2
        }
    }

    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// A file to be written under the output directory.
pub(crate) struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Runs one command and writes its artifacts under `config.out`.
pub fn run(config: &RunConfig) -> Result<Report, CliError> {
    config.validate()?;
    let inputs = inputs::Inputs::load(config)?;
    let (report, artifacts) = commands::dispatch(config, &inputs)?;
    std::fs::create_dir_all(&config.out).map_err(io_err(&config.out))?;
    for a in artifacts.iter().chain(std::iter::once(&Artifact {
        name: "report.json".into(),
        bytes: bvgrid::io::to_json(&report).into_bytes(),
    })) {
        let path = config.out.join(&a.name);
        std::fs::write(&path, &a.bytes).map_err(io_err(&path))?;
    }
    Ok(report)
}

/// Parses `args`, runs, reports on stderr and returns the exit status.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let config = match RunConfig::from_args(args) {
        Ok(c) => c,
        Err(CliError::Args(e)) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match run(&config) {
        Ok(report) => {
            for c in report.failed() {
                eprintln!(
                    "check failed: {}: residual {:e} exceeds {:e}",
                    c.name, c.residual, c.threshold
                );
            }
            report.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
