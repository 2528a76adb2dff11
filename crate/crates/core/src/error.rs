use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("invalid workload: {0}")]
    Workload(String),
    #[error("unknown job {0}")]
    UnknownJob(u64),
    #[error("placement: {0}")]
    Placement(String),
    #[error("solver instance is infeasible: {0}")]
    Infeasible(String),
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
    #[error("invalid flow: {0}")]
    Flow(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("simulation invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit status: 2 for bad input, 3 for a broken invariant, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Topology(_) | Error::Workload(_) => 2,
            Error::Invariant(_) => 3,
            _ => 1,
        }
    }
}
