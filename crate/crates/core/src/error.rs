use thiserror::Error;

/// Errors raised by the planner, the models and the evaluation harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The observed evidence has (numerically) zero likelihood under every latent value.
    #[error("degenerate evidence: total unnormalized posterior mass {mass:e} is below 1e-300")]
    DegenerateEvidence { mass: f64 },

    #[error("numerical differentiation produced a non-finite value at coordinate {coordinate}")]
    Differentiation { coordinate: usize },

    #[error("trajectory tree is structurally corrupt: {0}")]
    StructuralCorruption(String),

    #[error("rollout diverged at history \"{history}\", step {step}")]
    RolloutDivergence { history: String, step: usize },

    #[error("Q_uu is not positive definite at regularization {lambda:e}")]
    BackwardFailure { lambda: f64 },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
