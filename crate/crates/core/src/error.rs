use thiserror::Error;

pub type Result<T> = std::result::Result<T, MechError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechError {
    #[error("domain error: {0}")]
    Domain(String),

    /// The net marginal cost `beta_i - p_i` handed to an inverse marginal is
    /// outside the marginal's range, so demand is unbounded or undefined.
    #[error("marginal {marginal} outside the range of the marginal utility ({detail})")]
    MarginalRange { marginal: f64, detail: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("integration left the interior region at t = {t}: {detail}")]
    Integration { t: f64, detail: String },

    #[error("insufficient data: {usable} usable samples, need at least {needed}")]
    InsufficientData { usable: usize, needed: usize },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("load error: {0}")]
    Load(String),
}
