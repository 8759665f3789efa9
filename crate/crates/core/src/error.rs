use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("empty vector")]
    Empty,

    #[error("time {t} outside signal domain [0, {horizon})")]
    Domain { t: f64, horizon: f64 },

    #[error("index {index} out of range for {len} vehicles")]
    Index { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// `vehicle` is the 1-based follower number.
    #[error("formation law violates {condition} at vehicle {vehicle} (value {value})")]
    Condition {
        condition: &'static str,
        vehicle: usize,
        value: f64,
    },

    #[error("matrix is not Hurwitz: diagonal entry {index} is {value}")]
    NotHurwitz { index: usize, value: f64 },

    #[error("certification failed at stage `{stage}`: {source}")]
    Certification {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite state at t = {t}: {state:?}")]
    NonFinite { t: f64, state: Vec<f64> },

    #[error(
        "step size fell below {min_step} at t = {t} after repeated rejections; \
         the fast subsystem is likely stiff, try a smaller fixed step"
    )]
    StepRejection { t: f64, min_step: f64 },

    #[error("trajectory is missing channel `{0}`")]
    MissingChannel(&'static str),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
