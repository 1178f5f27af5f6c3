//! Command-line runner: Green's function tables, covariance artifacts,
//! extreme-value experiments and the verification suite.

pub mod commands;
pub mod config;
pub mod verify;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use membrane_tree::linalg::DenseMatrix;
use serde::Serialize;

pub use config::{Cli, Command, Format, RunConfig};
pub use verify::{Hooks, VerifyReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_CAP: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid arguments: {0}")]
    Invalid(String),
    #[error("resource cap: {0}")]
    Cap(String),
    #[error("{0}")]
    Assertion(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Compute(membrane_tree::Error),
}

impl From<membrane_tree::Error> for CliError {
    fn from(e: membrane_tree::Error) -> Self {
        use membrane_tree::Error as E;
        match e {
            E::Degree(_) | E::InvalidArgument(_) | E::InvalidVertex { .. } | E::LawMismatch(_) | E::Regime { .. } => {
                CliError::Invalid(e.to_string())
            }
            E::CapExceeded { .. } | E::TreeTooLarge { .. } | E::StepBudget { .. } | E::Truncation { .. } => {
                CliError::Cap(e.to_string())
            }
            _ => CliError::Compute(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Cap(_) => EXIT_CAP,
            CliError::Assertion(_) | CliError::Io { .. } | CliError::Compute(_) => EXIT_ASSERTION,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Files written by a command.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
}

pub fn run(config: &RunConfig, hooks: &Hooks) -> CliResult<Artifacts> {
    config.validate()?;
    fs::create_dir_all(&config.out).map_err(|source| CliError::Io {
        path: config.out.clone(),
        source,
    })?;
    match config.command {
        Command::Greens => commands::greens(config),
        Command::Covariance => commands::covariance(config),
        Command::Extremes => commands::extremes(config),
        Command::Verify => {
            let (report, artifacts) = verify::run_verify(config, hooks)?;
            for c in &report.checks {
                println!("{:<8} {:<34} observed {:<12.6e} required {}", c.status, c.name, c.observed, c.required);
            }
            if report.passed {
                Ok(artifacts)
            } else {
                Err(CliError::Assertion(format!(
                    "{} of {} checks failed",
                    report.failures(),
                    report.checks.len()
                )))
            }
        }
    }
}

pub fn exit_code(result: &CliResult<Artifacts>) -> i32 {
    match result {
        Ok(_) => EXIT_OK,
        Err(e) => e.exit_code(),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| CliError::Compute(membrane_tree::Error::Internal(e.to_string())))?;
    out.write_all(b"\n").map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

/// Writes `stem.csv` or `stem.bin`; JSON requests fall back to CSV for matrices.
pub(crate) fn write_matrix(
    dir: &Path,
    stem: &str,
    matrix: &DenseMatrix,
    header: Option<&[String]>,
    format: Format,
) -> CliResult<PathBuf> {
    let path = match format {
        Format::Binary => dir.join(format!("{stem}.bin")),
        Format::Csv | Format::Json => dir.join(format!("{stem}.csv")),
    };
    let mut out = create(&path)?;
    match format {
        Format::Binary => membrane_tree::export::write_binary(&mut out, matrix),
        Format::Csv | Format::Json => membrane_tree::export::write_csv(&mut out, matrix, header),
    }
    .map_err(io_err(&path))?;
    out.flush().map_err(io_err(&path))?;
    Ok(path)
}
