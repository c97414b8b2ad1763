use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The linear system of the occupancy/value equations is singular or
    /// badly conditioned for this policy, i.e. the policy does not absorb.
    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("negative occupancy {value:e} at index {index}")]
    NegativeOccupancy { index: usize, value: f64 },

    #[error("behavior policy assigns zero probability to observed action {action} in state {state}")]
    ZeroBehaviorProbability { state: usize, action: usize },

    #[error("empty episode batch")]
    EmptyBatch,

    #[error("non-finite estimate")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, Error>;
