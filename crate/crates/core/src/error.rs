use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("action {action} out of range (num_actions = {num_actions})")]
    ActionOutOfRange { action: usize, num_actions: usize },

    #[error("state {state} out of range (num_states = {num_states})")]
    StateOutOfRange { state: usize, num_states: usize },

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("chain is not ergodic: eigenvalue-1 multiplicity {multiplicity}")]
    NotErgodic { multiplicity: usize },

    #[error("feature matrix is rank deficient (min singular value {min_singular_value:e})")]
    RankDeficient { min_singular_value: f64 },

    #[error("TD drift matrix is not negative definite (lambda_A = {0:e})")]
    NonPositiveLambda(f64),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("linear solve failed: {0}")]
    SolveFailed(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
