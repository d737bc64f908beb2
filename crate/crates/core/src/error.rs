use thiserror::Error;

/// Errors raised by the diffusion, scoring and metric routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum HoldError {
    #[error("invalid model order {order}: {reason}")]
    InvalidOrder { order: usize, reason: &'static str },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("forward matrix is not critically damped: ||(F - s*I)^n|| = {residual:e} exceeds {bound:e}")]
    NotCriticallyDamped { residual: f64, bound: f64 },

    #[error("time {t} is outside the domain of `{op}`")]
    Domain { op: &'static str, t: f64 },

    #[error("matrix is not positive definite even with diagonal floor {floor:e}")]
    NotPositiveDefinite { floor: f64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("at least {needed} training points are required, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("transfer function evaluated at its pole s = {re} + {im}i")]
    Pole { re: f64, im: f64 },

    #[error("integration diverged at step {step} (t = {t}): {reason}")]
    Divergence {
        step: usize,
        t: f64,
        reason: &'static str,
    },

    #[error("time grid is invalid: {0}")]
    InvalidGrid(String),
}

pub type Result<T, E = HoldError> = std::result::Result<T, E>;
