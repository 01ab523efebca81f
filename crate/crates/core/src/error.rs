use thiserror::Error;

/// Errors raised by the simulator and the diagnostics built on it.
///
/// Variants fall into three families, see [`Error::class`]: precondition
/// violations (the caller asked for something the input does not satisfy),
/// numerical hard failures (an internal consistency check tripped), and
/// plain usage / IO problems.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid phase point: {0}")]
    InvalidState(String),
    #[error("rejection budget of {0} draws exceeded while sampling")]
    RejectionBudgetExceeded(u64),

    #[error("ball {ball} is not on a wall of axis {axis} (coordinate {coordinate})")]
    NotOnWall { ball: usize, axis: usize, coordinate: f64 },
    #[error("balls are not in contact (distance {distance}, expected {expected})")]
    NotInContact { distance: f64, expected: f64 },
    #[error("balls are receding (normal relative velocity {normal_speed})")]
    Receding { normal_speed: f64 },
    #[error("grazing impact at t = {time}: normal relative velocity {normal_speed}")]
    GrazingImpact { time: f64, normal_speed: f64 },
    #[error("an event was skipped during free flight of length {0}")]
    EventSkipped(f64),
    #[error("more than {limit} events within one time unit ending at t = {time}")]
    AccumulationSuspected { time: f64, limit: usize },
    #[error("events coincide within {gap} at t = {time}")]
    BranchAmbiguity { time: f64, gap: f64 },
    #[error("segment carries {0} branch warnings")]
    BranchWarningsPresent(usize),

    #[error("segment contains no ball-ball collision")]
    NoBallCollision,
    #[error("segment endpoint {endpoint} lies within {gap} of a collision")]
    EndpointAtCollision { endpoint: f64, gap: f64 },
    #[error("velocity reconstruction across window {window} failed for ball {ball}: error {error}")]
    Eq33Mismatch { window: usize, ball: usize, error: f64 },

    #[error("tangent map is singular at a grazing collision (normal speed {0})")]
    GrazingJacobian(f64),
    #[error("singular value {value} lies within a factor 10 of the rank threshold {threshold}")]
    RankIndeterminate { value: f64, threshold: f64 },
    #[error("hypothesis not met: {0}")]
    HypothesisNotMet(String),
    #[error("symbolic pattern not found: {0}")]
    PatternNotFound(String),

    #[error("ball-ball collision at t = {0} inside a stretch assumed collision-free")]
    BallCollisionEncountered(f64),
    #[error("axis {0} belongs to a parity set of the segment")]
    AxisInZ(usize),
    #[error("antipodal cylinder breached at t = {time} (distance {distance})")]
    AntipodalBreach { time: f64, distance: f64 },
    #[error("event streams disagree at index {index}: {detail}")]
    StreamMismatch { index: usize, detail: String },
    #[error("orbit is singular: {0}")]
    SingularOrbit(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("event log line {line}: {message}")]
    EventLog { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Precondition,
    HardFailure,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Eq33Mismatch { .. }
            | StreamMismatch { .. }
            | AccumulationSuspected { .. }
            | AntipodalBreach { .. }
            | EventSkipped(_) => ErrorClass::HardFailure,
            Config { .. } | EventLog { .. } | Io(_) | Json(_) => ErrorClass::Usage,
            _ => ErrorClass::Precondition,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
