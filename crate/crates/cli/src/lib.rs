//! Command-line front end for the spine-fusion pipeline.
//!
//! The binary exposes one verb per pipeline stage (`synth`, `coarse`, `arap`,
//! `skinfit`, `cobb`), an end-to-end `pipeline` verb running one method arm,
//! and a `compare` verb running a batch of synthetic cases across all method
//! and landmark-subset combinations into a machine-readable report.
//!
//! Every stage writes its artifacts to disk, so any later stage can be re-run
//! from files alone; nothing is carried in memory between verbs.

use std::fmt;

pub mod cli;
pub mod compare;
pub mod pipeline;
pub mod report;
pub mod stages;

/// Process-level failure, carrying the exit code contract:
/// 2 for input problems, 3 for numerical ones, 4 for a batch that
/// finished with failed cells.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
    PartialBatch { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::PartialBatch { .. } => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Numerical(m) => f.write_str(m),
            CliError::PartialBatch { failed, total } => {
                write!(f, "comparison finished with {failed} of {total} cells failed")
            }
        }
    }
}

impl From<spinefuse_core::Error> for CliError {
    fn from(e: spinefuse_core::Error) -> Self {
        use spinefuse_core::Error as E;
        // chain the source errors into one line; `io error on x.json`
        // alone does not say *why*
        let mut message = e.to_string();
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            message.push_str(": ");
            message.push_str(&s.to_string());
            source = s.source();
        }
        match e {
            E::Structural(_) | E::Parameter(_) | E::Lookup(_) | E::Parse { .. } | E::Io { .. } => {
                CliError::Input(message)
            }
            E::Degenerate(_)
            | E::NotPositiveDefinite { .. }
            | E::UnderConstrained(_)
            | E::InsideTest(_) => CliError::Numerical(message),
        }
    }
}

/// I/O by the CLI itself (creating output directories, writing reports).
pub(crate) fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("io error on {}: {e}", path.display()))
}

/// Dispatches a parsed command line. The binary maps the error to an exit
/// code; tests can call this directly.
pub fn run(cli: cli::Cli) -> Result<(), CliError> {
    match cli.command {
        cli::Command::Synth(args) => stages::run_synth(&args),
        cli::Command::Coarse(args) => stages::run_coarse(&args),
        cli::Command::Arap(args) => stages::run_arap(&args),
        cli::Command::Skinfit(args) => stages::run_skinfit(&args),
        cli::Command::Cobb(args) => stages::run_cobb(&args),
        cli::Command::Pipeline(args) => pipeline::run_pipeline_verb(&args),
        cli::Command::Compare(args) => compare::run_compare_verb(&args),
    }
}
