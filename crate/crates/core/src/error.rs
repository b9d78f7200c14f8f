use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdeError {
    #[error("fractional order must lie in (0, 1], got {0}")]
    InvalidOrder(f64),

    #[error("gamma function domain error: argument {0} is not positive")]
    GammaDomain(f64),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("weight index out of range: {0}")]
    WeightIndex(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("non-finite adjoint at grid index {index}")]
    NonFiniteAdjoint { index: usize },

    #[error("non-finite cotangent at grid index {index}")]
    NonFiniteCotangent { index: usize },

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("non-finite value during fitting at epoch {epoch}")]
    FitDiverged { epoch: usize },

    #[error("trajectory mismatch: {0}")]
    TrajectoryMismatch(String),

    #[error("argument outside the series envelope: {0}")]
    RangeError(String),

    #[error("retained-slot underflow: releasing {release} with only {held} held")]
    SlotUnderflow { release: u64, held: u64 },
}

impl FdeError {
    /// True for failures caused by the numerics rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            FdeError::NonFiniteState { .. }
                | FdeError::NonFiniteAdjoint { .. }
                | FdeError::NonFiniteCotangent { .. }
                | FdeError::NonFiniteLoss(_)
                | FdeError::FitDiverged { .. }
        )
    }
}

pub type Result<T, E = FdeError> = std::result::Result<T, E>;
