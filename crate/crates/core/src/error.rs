use thiserror::Error;

/// Errors shared across the simulation and analysis modules.
#[derive(Debug, Error)]
pub enum KacError {
    #[error("invalid collision measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("total jump rate is zero")]
    ZeroTotalRate,

    #[error("negative rate: {0}")]
    NegativeRate(f64),

    #[error("invalid pair index ({i}, {j}) for {total} particles")]
    InvalidPair { i: usize, j: usize, total: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("enumeration budget exceeded: {used} > {budget}")]
    BudgetExceeded { used: u64, budget: u64 },

    #[error("negative time argument: {0}")]
    NegativeTime(f64),

    #[error("mixture is not normalized (total weight {0})")]
    NotNormalized(f64),

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("quadrature did not converge within the node budget (last change {0:e})")]
    QuadratureNotConverged(f64),

    #[error("Poisson tail {tail:e} exceeds tail_epsilon {epsilon:e} at k_max {k_max}")]
    TailUnreachable { tail: f64, epsilon: f64, k_max: usize },

    #[error("invalid series configuration: {0}")]
    InvalidConfig(String),

    #[error("rejection sampling acceptance rate {0:e} below 1e-4; bound too loose")]
    LowAcceptance(f64),

    #[error("invalid time grid: {0}")]
    InvalidTimeGrid(String),

    #[error("entropy estimator: {0}")]
    Estimator(String),

    #[error("point off the sphere: |x|^2 = {got}, expected {expected}")]
    OffSphere { got: f64, expected: f64 },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, KacError>;
