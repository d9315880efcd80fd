use thiserror::Error;

/// Errors raised by the trial engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("OSFD day count {0} outside [1, 28] for a surviving patient")]
    DayOutOfRange(u32),

    #[error("unknown scenario label `{0}`")]
    UnknownScenario(String),

    #[error("degenerate parameter: {0}")]
    DegenerateParameter(String),

    #[error("posterior samples have unequal lengths ({0} vs {1})")]
    UnequalDraws(usize, usize),

    #[error("observed data has zero probability under the model: {0}")]
    ZeroProbability(String),

    #[error("information matrix is singular (condition number {0:.3e})")]
    SingularInformation(f64),

    #[error("calibration failed at interim {stage}: {reason}")]
    Calibration { stage: usize, reason: String },

    #[error("schedule has {schedule} interims but the trial has {trial} stages")]
    ScheduleMismatch { schedule: usize, trial: usize },

    #[error("boundary file: {0}")]
    BoundaryFormat(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
