use thiserror::Error;

/// Errors surfaced by the planning and training pipeline.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Every candidate control of the follower leads into a safety region.
    #[error("follower trapped: no feasible control from the current state")]
    FollowerTrapped,

    /// Rejection sampling gave up; the free space is too small for the rule.
    #[error("workspace too constrained: rejection sampling exceeded {0} attempts")]
    WorkspaceTooConstrained(usize),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("split would leave an empty part (n = {n}, fraction = {fraction})")]
    EmptySplit { n: usize, fraction: f64 },

    #[error("infeasible start state: {0}")]
    InfeasibleStart(String),

    #[error("model shape mismatch: expected architecture {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("non-finite model parameter at {0}")]
    NonFiniteParam(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown follower type id {0}")]
    UnknownType(u8),

    #[error("malformed data: {0}")]
    Malformed(String),
}
