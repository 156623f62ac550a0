//! Command-line front end. Every command reads a flat config (see
//! [`RunConfig`]) and writes to an explicit `--out` path.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

mod commands;
mod config;

pub use commands::{parse_points, Command};
pub use config::{LevelParams, PathParams, RunConfig, VolumeParams};

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "hiermatch", version, about = "Hierarchical metric learning and coarse-to-fine matching")]
struct Args {
    #[command(subcommand)]
    command: Sub,
    /// Flat key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file, or directory for multi-file commands.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Train embedding heads; writes the heads file and `<out>.loss.csv`.
    Train,
    /// Match query points (or every pixel) from ref_image into tgt_image.
    Match,
    /// Dense optical flow from ref_image to tgt_image as a .flo file.
    Flow,
    /// PCK curve of a matches file against ground-truth correspondences.
    EvalPck,
    /// EPE and Fl outlier rates of a .flo file against ground truth.
    EvalFlow,
    /// Synthetic warped pair with ground truth, written into a directory.
    Synth,
    /// Two-stage subvolume search between voxel grids.
    Match3d,
    /// Per-level feature maps of ref_image, written into a directory.
    ExportFeatures,
}

impl From<&Sub> for Command {
    fn from(s: &Sub) -> Self {
        match s {
            Sub::Train => Command::Train,
            Sub::Match => Command::Match,
            Sub::Flow => Command::Flow,
            Sub::EvalPck => Command::EvalPck,
            Sub::EvalFlow => Command::EvalFlow,
            Sub::Synth => Command::Synth,
            Sub::Match3d => Command::Match3d,
            Sub::ExportFeatures => Command::ExportFeatures,
        }
    }
}

/// A failed invocation and its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(crate::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(e) => write!(f, "error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        match e {
            crate::Error::Parse { .. } | crate::Error::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code; diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn execute(args: &Args) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(p) => {
            if !p.exists() {
                return Err(CliError::Data(crate::Error::io(
                    p,
                    std::io::Error::from(std::io::ErrorKind::NotFound),
                )));
            }
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    cfg.check_paths().map_err(CliError::Data)?;
    let out = args
        .out
        .as_deref()
        .ok_or_else(|| CliError::Usage("--out is required".into()))?;
    commands::dispatch(Command::from(&args.command), &cfg, out)
}
