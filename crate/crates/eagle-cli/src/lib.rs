//! Library surface of the command-line harness: configuration parsing,
//! checkpoint persistence, dataset plumbing, report writers, and the
//! subcommand implementations, all generic over the numeric precision.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod reports;

use eagle_core::{Error, Result};

/// Numeric mode, selected by the EAGLE_PRECISION environment variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

pub fn precision_from_env() -> Result<Precision> {
    match std::env::var("EAGLE_PRECISION") {
        Err(std::env::VarError::NotPresent) => Ok(Precision::F32),
        Ok(v) if v == "f32" => Ok(Precision::F32),
        Ok(v) if v == "f64" => Ok(Precision::F64),
        Ok(v) => Err(Error::InvalidArgument(format!(
            "EAGLE_PRECISION must be \"f32\" or \"f64\", got \"{v}\""
        ))),
        Err(e) => Err(Error::InvalidArgument(format!(
            "EAGLE_PRECISION is not valid unicode: {e}"
        ))),
    }
}

/// Process exit code taxonomy: 2 for configuration and feasibility errors,
/// 3 for data and artifact errors, 4 for numeric failures, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::Split(_) | Error::SearchInfeasible { .. } => 2,
        Error::DataFormat { .. }
        | Error::Io(_)
        | Error::Checkpoint { .. }
        | Error::CheckpointVersion { .. }
        | Error::Stat(_) => 3,
        Error::Numeric(_) => 4,
        _ => 1,
    }
}
