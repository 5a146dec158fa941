use std::path::PathBuf;

use thiserror::Error;

use crate::costmodel::CostModelError;
use crate::grouping::GroupingError;
use crate::packing::PackingError;
use crate::pipesim::SimError;
use crate::schedule::ScheduleError;
use crate::workload::WorkloadError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    CostModel(#[from] CostModelError),
    #[error(transparent)]
    Grouping(#[from] GroupingError),
    #[error(transparent)]
    Packing(#[from] PackingError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;
pub const EXIT_IO: i32 = 5;

fn packing_code(e: &PackingError) -> i32 {
    match e {
        PackingError::InfeasibleBinCount { .. } => EXIT_SOLVER,
        PackingError::InBatch { source, .. } => packing_code(source),
        _ => EXIT_VALIDATION,
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: validation 3, solver 4, I/O 5.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Workload(WorkloadError::Io { .. }) | Error::Io { .. } => EXIT_IO,
            Error::Packing(p) => packing_code(p),
            Error::Schedule(ScheduleError::OrderInversion { .. }) => EXIT_SOLVER,
            Error::Sim(SimError::Schedule(ScheduleError::OrderInversion { .. })) => EXIT_SOLVER,
            Error::Workload(_)
            | Error::CostModel(_)
            | Error::Grouping(_)
            | Error::Schedule(_)
            | Error::Sim(_)
            | Error::Config(_) => EXIT_VALIDATION,
        }
    }
}
