use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid law: {0}")]
    InvalidLaw(String),
    #[error("site {site} outside window [{lo}, {hi}]")]
    Window { site: i64, lo: i64, hi: i64 },
    #[error("environment cannot be extended to [{lo}, {hi}]: {reason}")]
    Extension { lo: i64, hi: i64, reason: String },
    #[error("left tail did not converge after {0} extensions (E log rho >= 0?)")]
    NonConvergent(u64),
    #[error("no ladder location within {0} sites (recurrent law?)")]
    ScanCap(u64),
    #[error("rejection budget of {0} restarts exhausted while sampling the conditioned left half")]
    RejectionBudget(u64),
    #[error("stability index not found below {0}")]
    NoStabilityIndex(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("schedule infeasible beyond k = {largest_feasible}")]
    InfeasibleSchedule { largest_feasible: usize },
    #[error("not enough ladder blocks: need {needed}, have {have}")]
    InsufficientBlocks { needed: usize, have: usize },
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
