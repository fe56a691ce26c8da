//! Pipeline behind the `qqr` command-line tool.
//!
//! Commands read a [`config::RunConfig`], run the estimators of
//! `qqr-core` and write CSV artifacts under the output directory.

pub mod commands;
pub mod config;
pub mod fixture;
pub mod roles;

use std::path::PathBuf;

use qqr_core::ErrorCategory;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] qqr_core::Error),
}

impl CliError {
    /// 2 for I/O and configuration, 3 for data preconditions, 4 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Config(_) => 2,
            CliError::Core(e) => match e.category() {
                ErrorCategory::Io => 2,
                ErrorCategory::Precondition => 3,
                ErrorCategory::Numerical => 4,
            },
        }
    }
}

macro_rules! core_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        })*
    };
}

core_from!(
    qqr_core::ingest::IngestError,
    qqr_core::stats::StatsError,
    qqr_core::qqr::QqrError,
    qqr_core::dfm::DfmError,
    qqr_core::bds::BdsError
);
