use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("graph is not connected: left null vector of the Laplacian is not unique")]
    NotConnected,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("missing offset measurement for edge {from}->{to}")]
    MissingOffset { from: usize, to: usize },

    #[error("degenerate transform: delta_kappa * p = 0")]
    DegenerateTransform,

    #[error("unstable plant: spectral radius {0} >= 1")]
    UnstablePlant(f64),

    #[error("system does not synchronize: {0}")]
    NotSynchronizing(String),

    #[error("topology has no unique leader")]
    NoLeader,

    #[error("gradient undefined at zero norm")]
    ZeroNorm,

    #[error("no stable starting point found")]
    NoStableStart,

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("not enough samples: need at least {needed}, have {have}")]
    TooFewSamples { needed: usize, have: usize },

    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
}
