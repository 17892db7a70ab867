use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NspError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NspError {
    #[error("window has {found} frames, expected {expected}")]
    WrongFrameCount { expected: usize, found: usize },
    #[error("window observed length is {found}, expected {expected}")]
    WrongObservedLength { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFiniteValue(String),
    #[error("window goal {goal:?} does not equal final frame position {last:?}")]
    GoalMismatch { goal: [f64; 2], last: [f64; 2] },
    #[error("frame ids are not uniformly spaced in window")]
    NonUniformFrames,

    #[error("invalid config value for `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("agent velocity is zero; direction undefined")]
    ZeroVelocity,
    #[error("no remaining time: t={t} >= T={horizon}")]
    TimeExhausted { t: usize, horizon: usize },
    #[error("relaxation time must be positive, got {0}")]
    NonPositiveTau(f64),
    #[error("two agents occupy the same position")]
    CoincidentAgents,
    #[error("agent coincides with an obstacle centroid")]
    CoincidentObstacle,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward requires a scalar output, got {0} elements")]
    NonScalarOutput(usize),
    #[error("goal network recurrent state used before reset")]
    UninitializedState,

    #[error("non-finite input to integrator")]
    NonFiniteInput,
    #[error("ultra-sampling requires ground-truth oracle positions")]
    MissingOracle,
    #[error("training produced a non-finite loss at stage {stage}, epoch {epoch}")]
    NonFiniteLoss { stage: String, epoch: usize },

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("frame ids for agent {agent} are not strictly increasing")]
    NonMonotoneFrames { agent: String },
    #[error("{path}:{line}: invalid scene label {label}")]
    InvalidLabel { path: String, line: usize, label: i64 },
    #[error("homography is singular (|det| = {0:e})")]
    SingularHomography(f64),
    #[error("degenerate projection: homogeneous coordinate {0:e}")]
    DegenerateProjection(f64),

    #[error("empty sample set")]
    EmptySampleSet,
    #[error("collision rate needs at least two agents, got {0}")]
    TooFewAgents(usize),
    #[error("scene cannot host the scenario: {0}")]
    InfeasibleScene(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl NspError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NspError::Io { path: path.into(), source }
    }

    pub(crate) fn config(key: &str, reason: impl Into<String>) -> Self {
        NspError::Config { key: key.to_string(), reason: reason.into() }
    }

    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            NspError::WrongFrameCount { .. } => "WrongFrameCount",
            NspError::WrongObservedLength { .. } => "WrongObservedLength",
            NspError::NonFiniteValue(_) => "NonFiniteValue",
            NspError::GoalMismatch { .. } => "GoalMismatch",
            NspError::NonUniformFrames => "NonUniformFrames",
            NspError::Config { .. } => "ConfigError",
            NspError::ZeroVelocity => "ZeroVelocity",
            NspError::TimeExhausted { .. } => "TimeExhausted",
            NspError::NonPositiveTau(_) => "NonPositiveTau",
            NspError::CoincidentAgents => "CoincidentAgents",
            NspError::CoincidentObstacle => "CoincidentObstacle",
            NspError::ShapeMismatch(_) => "ShapeMismatch",
            NspError::NonScalarOutput(_) => "NonScalarOutput",
            NspError::UninitializedState => "UninitializedState",
            NspError::NonFiniteInput => "NonFiniteInput",
            NspError::MissingOracle => "MissingOracle",
            NspError::NonFiniteLoss { .. } => "NonFiniteLoss",
            NspError::Parse { .. } => "ParseError",
            NspError::NonMonotoneFrames { .. } => "NonMonotoneFrames",
            NspError::InvalidLabel { .. } => "InvalidLabel",
            NspError::SingularHomography(_) => "SingularHomography",
            NspError::DegenerateProjection(_) => "DegenerateProjection",
            NspError::EmptySampleSet => "EmptySampleSet",
            NspError::TooFewAgents(_) => "TooFewAgents",
            NspError::InfeasibleScene(_) => "InfeasibleScene",
            NspError::Io { .. } => "IoError",
        }
    }
}
