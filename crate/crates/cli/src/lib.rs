//! Command-line front end: pipeline files in, reports and CSV out.

pub mod commands;
pub mod file;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use pipeyield_core::OptimizeMode;

pub use file::{parse_file, parse_pipeline, serialize_pipeline, OptimizationRecord, PipelineFile};
pub use report::{Cell, Format, Report, Section};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] pipeyield_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_ERROR,
        }
    }
}

/// Statistical timing, yield and sizing for pipelined circuits.
#[derive(Debug, Parser)]
#[command(name = "pipeyield", version, about)]
pub struct Cli {
    /// Report format.
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    pub format: Format,

    /// Worker threads for Monte-Carlo sampling (default: all cores).
    /// Results do not depend on this value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-stage and pipeline delay distributions.
    Analyze(AnalyzeArgs),
    /// Parametric yield at a target delay.
    Yield(YieldArgs),
    /// Permissible per-stage (mean, sigma) region over a sigma grid.
    Bounds(BoundsArgs),
    /// Monte-Carlo check of the analytical model.
    Mc(McArgs),
    /// Variability of a fixed-depth pipeline split into different stage counts.
    Sweep(SweepArgs),
    /// Yield-constrained sizing.
    Optimize(OptimizeArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub file: PathBuf,
}

#[derive(Debug, Args)]
pub struct YieldArgs {
    pub file: PathBuf,
    /// Target clock period (ps).
    #[arg(long)]
    pub target: f64,
    /// Treat stages as independent in both estimates, isolating the error of
    /// the max approximation from that of ignoring correlation.
    #[arg(long)]
    pub independent: bool,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    pub file: PathBuf,
    /// Target clock period (ps).
    #[arg(long)]
    pub target: f64,
    /// Target yield in (0, 1).
    #[arg(long = "yield")]
    pub yield_target: f64,
    /// Stage sigma values (ps): `start:stop:count` or a comma-separated list.
    #[arg(long, value_parser = parse_sigma_grid)]
    pub sigma_grid: SigmaGrid,
}

#[derive(Debug, Args)]
pub struct McArgs {
    pub file: PathBuf,
    /// Number of samples; accepts `100000` or `1e5`.
    #[arg(long, default_value = "100000", value_parser = parse_count)]
    pub samples: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Target clock period (ps).
    #[arg(long)]
    pub target: f64,
    /// Write an empirical vs analytical density histogram CSV here.
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Total logic depth shared out over the stages.
    #[arg(long, default_value_t = 120)]
    pub total_levels: usize,
    /// Stage counts; each must divide the total depth.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5,6,8,10,12,15,20")]
    pub stage_counts: Vec<usize>,
    /// Variation regimes: any of `random`, `inter`, `mixed`.
    #[arg(long, value_delimiter = ',', default_value = "random,inter,mixed")]
    pub regimes: Vec<String>,
    /// Gate sigma/mean ratio.
    #[arg(long, default_value_t = 0.1)]
    pub ratio: f64,
    /// Latch overhead per stage (ps).
    #[arg(long, default_value_t = 10.0)]
    pub latch_overhead: f64,
    /// Monte-Carlo samples per row; 0 skips the Monte-Carlo columns.
    #[arg(long, default_value = "100000", value_parser = parse_count)]
    pub samples: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    EnsureYield,
    MinArea,
}

impl From<ModeArg> for OptimizeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::EnsureYield => OptimizeMode::EnsureYield,
            ModeArg::MinArea => OptimizeMode::MinArea,
        }
    }
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    pub file: PathBuf,
    /// Target clock period (ps).
    #[arg(long)]
    pub target: f64,
    /// Target yield in (0, 1).
    #[arg(long = "yield")]
    pub yield_target: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::EnsureYield)]
    pub mode: ModeArg,
    /// Write the resized pipeline file here.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Confirm the achieved yield with this many Monte-Carlo samples.
    #[arg(long, value_parser = parse_count)]
    pub seed_verify: Option<u64>,
    /// Seed for the confirmation run.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Start from the balanced sizing instead of the sizes in the file.
    #[arg(long)]
    pub from_baseline: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaGrid(pub Vec<f64>);

fn parse_sigma_grid(s: &str) -> Result<SigmaGrid, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, stop, count] = parts.as_slice() else {
            return Err("expected start:stop:count".into());
        };
        let (start, stop) = (num(start)?, num(stop)?);
        let count = parse_count(count)? as usize;
        if count == 0 {
            return Err("count must be >= 1".into());
        }
        if count == 1 {
            return Ok(SigmaGrid(vec![start]));
        }
        let step = (stop - start) / (count - 1) as f64;
        return Ok(SigmaGrid(
            (0..count).map(|i| start + step * i as f64).collect(),
        ));
    }
    s.split(',')
        .map(num)
        .collect::<Result<Vec<_>, _>>()
        .map(SigmaGrid)
}

fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(n) = s.parse::<u64>() {
        return Ok(n);
    }
    match s.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.fract() == 0.0 && x <= u64::MAX as f64 => Ok(x as u64),
        _ => Err(format!("`{s}` is not a non-negative whole number")),
    }
}

/// Captured result of one invocation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Outcome {
    pub stdout: String,
    pub stderr: String,
    pub code: i32,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                Outcome {
                    stderr: text,
                    code: EXIT_USAGE,
                    ..Outcome::default()
                }
            } else {
                Outcome {
                    stdout: text,
                    code: EXIT_OK,
                    ..Outcome::default()
                }
            };
        }
    };
    let exec = || commands::execute(&cli);
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(exec),
            Err(e) => Err(CliError::Usage(format!("cannot start {n} threads: {e}"))),
        },
        None => exec(),
    };
    match result {
        Ok(out) => out,
        Err(e) => Outcome {
            stderr: format!("error: {e}\n"),
            code: e.exit_code(),
            ..Outcome::default()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_grid_forms() {
        assert_eq!(parse_sigma_grid("0:2:3").unwrap().0, vec![0.0, 1.0, 2.0]);
        assert_eq!(parse_sigma_grid("0.5,1.5").unwrap().0, vec![0.5, 1.5]);
        assert!(parse_sigma_grid("0:1").is_err());
    }

    #[test]
    fn counts_accept_exponents() {
        assert_eq!(parse_count("1e5").unwrap(), 100_000);
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-3").is_err());
    }
}
