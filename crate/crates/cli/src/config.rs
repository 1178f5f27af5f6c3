use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use membrane_tree::sampler::FieldLaw;
use serde::Serialize;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Greens,
    Covariance,
    Extremes,
    Verify,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
    Binary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    fn enabled(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Parser)]
#[command(name = "membrane-tree", version, about = "Membrane model on regular trees")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Closed-form and series values of the infinite-volume Green's function.
    Greens(Args),
    /// G_n, Gbar_n, E_n and a bound summary.
    Covariance(Args),
    /// Sample a field and report extreme-value statistics.
    Extremes(Args),
    /// Run the property suites.
    Verify(Args),
}

#[derive(Clone, Debug, clap::Args)]
pub struct Args {
    /// Branching degree.
    #[arg(long, default_value_t = 3)]
    pub m: u32,
    /// Ball radius; each command has its own default.
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated probe points.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-1,0,1,2")]
    pub theta: Vec<f64>,
    #[arg(long, default_value = "infinite", value_parser = parse_law)]
    pub law: FieldLaw,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Run the bound checks that need the large-degree regime.
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    pub large_m_assertions: Switch,
    /// Largest distance in the Green's function table.
    #[arg(long, default_value_t = 10)]
    pub max_d: u32,
    /// Largest N for dense matrices.
    #[arg(long = "cap-N", default_value_t = DEFAULT_CLI_CAP)]
    pub cap_n: usize,
    /// Write dense matrices; `off` computes the covariance summary on pair classes only.
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub matrices: Switch,
}

/// Dense work stays below `m = 3, n = 10` (`N = 3070`) unless raised.
pub const DEFAULT_CLI_CAP: usize = 4096;

fn parse_law(s: &str) -> Result<FieldLaw, String> {
    s.parse().map_err(|e: membrane_tree::Error| e.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub m: u32,
    pub n: u32,
    pub samples: usize,
    pub seed: u64,
    pub theta: Vec<f64>,
    pub law: FieldLaw,
    pub out: PathBuf,
    pub format: Format,
    pub large_m_assertions: bool,
    pub max_d: u32,
    pub cap_n: usize,
    pub matrices: bool,
}

impl RunConfig {
    pub fn new(command: Command, m: u32) -> Self {
        Self {
            command,
            m,
            n: default_n(command),
            samples: 1000,
            seed: 0,
            theta: membrane_tree::extremes::THETA_PROBES.to_vec(),
            law: FieldLaw::Infinite,
            out: PathBuf::from("."),
            format: Format::Csv,
            large_m_assertions: false,
            max_d: 10,
            cap_n: DEFAULT_CLI_CAP,
            matrices: true,
        }
    }

    pub fn from_cli(cli: Cli) -> Result<Self, CliError> {
        let (command, a) = match cli.command {
            Sub::Greens(a) => (Command::Greens, a),
            Sub::Covariance(a) => (Command::Covariance, a),
            Sub::Extremes(a) => (Command::Extremes, a),
            Sub::Verify(a) => (Command::Verify, a),
        };
        let config = Self {
            command,
            m: a.m,
            n: a.n.unwrap_or_else(|| default_n(command)),
            samples: a.samples,
            seed: a.seed,
            theta: a.theta,
            law: a.law,
            out: a.out,
            format: a.format,
            large_m_assertions: a.large_m_assertions.enabled(),
            max_d: a.max_d,
            cap_n: a.cap_n,
            matrices: a.matrices.enabled(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.m < 3 {
            return Err(CliError::Invalid(format!(
                "branching degree m = {} is not supported (need m >= 3)",
                self.m
            )));
        }
        if self.theta.is_empty() || self.theta.iter().any(|t| !t.is_finite()) {
            return Err(CliError::Invalid("theta must be a list of finite numbers".into()));
        }
        if self.command == Command::Extremes && self.samples < 100 {
            return Err(CliError::Invalid(format!(
                "extremes needs at least 100 samples, got {}",
                self.samples
            )));
        }
        Ok(())
    }
}

fn default_n(command: Command) -> u32 {
    match command {
        Command::Verify => 8,
        _ => 4,
    }
}
