//! Scenario-driven front end for `matflow-core`.
//!
//! [`config`] parses scenario files, [`artifacts`] owns every on-disk format
//! and its reader, and [`commands`] implements `run`, `check`, `sweep` and
//! `report`. Exit codes: 0 pass, 1 a check failed, 2 configuration or input
//! error, 3 flow-construction failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod commands;
pub mod config;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("config error ({name}): {0}", name = .0.name())]
    Invalid(matflow_core::Error),
    #[error("flow construction failed ({name}): {0}", name = .0.name())]
    Construction(matflow_core::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Invalid(_) | CliError::Io(_) => 2,
            CliError::Construction(_) => 3,
        }
    }

    /// Sorts a library error into bad input versus a failed construction.
    pub fn classify(e: matflow_core::Error) -> CliError {
        use matflow_core::Error as E;
        match e {
            E::InvalidGrid(_)
            | E::NotConcave(_)
            | E::InvalidArgument(_)
            | E::TooFewSamples { .. }
            | E::Unsupported(_)
            | E::NegativeTime(_) => CliError::Invalid(e),
            _ => CliError::Construction(e),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
