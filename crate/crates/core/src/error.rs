use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("equilibrium sampler did not converge: {0}")]
    SamplerNotConverged(String),

    #[error("integration became non-finite at tau = {tau} ({what})")]
    NonFinite { tau: f64, what: String },

    #[error("time step {dt} fails the stability heuristic: {reason}")]
    UnstableStep { dt: f64, reason: String },

    #[error("homogeneous state is stable: pump ratio {0} <= 1 has no growing mode")]
    Stable(f64),

    #[error("growth-rate root search failed: {0}")]
    RootNotFound(String),

    #[error("no exponential stage detected: {0}")]
    NoExponentialStage(String),

    #[error("series is not yet stationary: {0}")]
    NotStationary(String),

    #[error("series never crosses {0} of its stationary value")]
    NeverCrosses(f64),

    #[error("degenerate statistics: {0}")]
    Degenerate(String),

    #[error("{failed} of {total} trajectories aborted; first failure: {first}")]
    TooManyAborts {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors that come from the physics (non-stationary series,
    /// stable parameters, diverging trajectories) rather than from I/O or
    /// malformed input.
    pub fn is_physics(&self) -> bool {
        !matches!(
            self,
            Error::Io(_) | Error::Config(_) | Error::Format(_) | Error::InvalidParams(_)
        )
    }
}
