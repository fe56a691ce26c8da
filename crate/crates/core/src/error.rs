use thiserror::Error;

use crate::{
    bds::BdsError, dfm::DfmError, ingest::IngestError, qqr::QqrError, quantreg::QuantRegError, stats::StatsError,
};

/// Broad classes of failure, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Reading or writing files, malformed input files.
    Io,
    /// Inputs that violate an estimator's preconditions.
    Precondition,
    /// Numerical breakdown during estimation.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    QuantReg(#[from] QuantRegError),
    #[error(transparent)]
    Qqr(#[from] QqrError),
    #[error(transparent)]
    Dfm(#[from] DfmError),
    #[error(transparent)]
    Bds(#[from] BdsError),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Ingest(e) => e.category(),
            Error::Dfm(e) => e.category(),
            Error::Bds(BdsError::DegenerateVariance { .. }) => ErrorCategory::Numerical,
            _ => ErrorCategory::Precondition,
        }
    }
}
