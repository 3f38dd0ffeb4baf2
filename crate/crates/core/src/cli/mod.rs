//! The `rasa` command line: synthesis, two-stage training, evaluation,
//! Kaplan-Meier analysis, similarity maps and report cleaning.

mod commands;
mod config;
mod plot;
mod report;

pub use commands::{checkpoint_path, Stage};
pub use config::{AnalysisSettings, LlmSettings, Paths, RunConfig};
pub use plot::{km_csv, km_svg, steps};
pub use report::{format_mean_std, mean_std, MetricsReport, TrialMetrics};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::datamodel::DataError;
use crate::distill::DistillError;
use crate::reportprep::ReportError;
use crate::survstats::SurvError;
use crate::synthgen::SynthError;
use crate::tff::TffError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DEGENERATE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "rasa", version, about = "Report-guided self-distillation for survival analysis on slide feature bags")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration document (TOML); flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub trial: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub stage: Option<Stage>,
    /// Teacher checkpoint for student training and similarity maps.
    #[arg(long, global = true)]
    pub teacher: Option<PathBuf>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    #[arg(long = "p-aug", global = true)]
    pub p_aug: Option<f64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort in the manifest directory.
    Synth,
    /// Train the teacher or the student on one trial.
    Train,
    /// Test CI over the five trials.
    Evaluate,
    /// Median-split Kaplan-Meier curves and log-rank test.
    Km,
    /// Per-patch similarity to the key text feature.
    Simmap {
        #[arg(long = "case")]
        case_id: Option<String>,
        /// Comma-separated thresholds, e.g. `-1,0.5,0.9`.
        #[arg(long, allow_hyphen_values = true)]
        gammas: Option<String>,
    },
    /// Clean raw pathology reports.
    CleanReports {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        prompt: Option<PathBuf>,
        /// `mock` or `live`.
        #[arg(long)]
        provider: Option<String>,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Degenerate(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] TffError),
    #[error(transparent)]
    Distill(#[from] DistillError),
    #[error(transparent)]
    Stats(#[from] SurvError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

fn data_code(e: &DataError) -> i32 {
    match e {
        DataError::Io { .. } => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

fn model_code(e: &TffError) -> i32 {
    match e {
        TffError::Io { .. } => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

fn stats_code(e: &SurvError) -> i32 {
    match e {
        SurvError::Undefined(_) | SurvError::Empty => EXIT_DEGENERATE,
        _ => EXIT_USAGE,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
            CliError::Degenerate(_) => EXIT_DEGENERATE,
            CliError::Data(e) => data_code(e),
            CliError::Model(e) => model_code(e),
            CliError::Stats(e) => stats_code(e),
            CliError::Distill(e) => match e {
                DistillError::Io { .. } => EXIT_IO,
                DistillError::Data(d) => data_code(d),
                DistillError::Model(m) => model_code(m),
                DistillError::Stats(s) => stats_code(s),
                _ => EXIT_USAGE,
            },
            CliError::Synth(e) => match e {
                SynthError::Io { .. } => EXIT_IO,
                SynthError::Data(d) => data_code(d),
                _ => EXIT_USAGE,
            },
            CliError::Report(e) => match e {
                ReportError::Transport { .. } | ReportError::Cache { .. } => EXIT_IO,
                _ => EXIT_USAGE,
            },
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
