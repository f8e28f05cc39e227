use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    #[error("reduced model is singular at tau = 1")]
    SingularDelay,

    #[error("reduced model requires beta = 1 (got {0})")]
    NonConservative(f64),

    #[error("mesh step {dt} is not commensurate with tau = {tau}")]
    IncommensurateMesh { tau: f64, dt: f64 },

    #[error("delay tau = {tau} must be smaller than the horizon T = {horizon}")]
    DelayExceedsHorizon { tau: f64, horizon: f64 },

    #[error("characteristic root search failed: {0}")]
    RootSearch(String),

    #[error("relaxation diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("all relaxation runs failed: {0}")]
    AllRunsFailed(String),

    #[error("no bifurcation threshold found in [{lo}, {hi}]")]
    ThresholdNotFound { lo: f64, hi: f64 },

    #[error("grid must be uniform (spacing {found} differs from {expected})")]
    NonUniformGrid { expected: f64, found: f64 },

    #[error("interfaces must be strictly increasing and above lambda_A")]
    MisorderedInterfaces,

    #[error("interface starvation: no trial from interface {index} reached the next one")]
    InterfaceStarvation { index: usize },

    #[error("simulation budget exhausted after {observed} of {requested} transitions")]
    BudgetExhausted { observed: usize, requested: usize },

    #[error("parse error at row {row}: {reason}")]
    Parse { row: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status: 1 numerical failure, 2 bad input, 3 starvation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InterfaceStarvation { .. } => 3,
            Error::RootSearch(_)
            | Error::Diverged { .. }
            | Error::AllRunsFailed(_)
            | Error::ThresholdNotFound { .. }
            | Error::BudgetExhausted { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
