use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    Lattice(String),

    #[error("invalid potential: {0}")]
    Potential(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("solver failure: {0}")]
    Solver(String),

    /// A hypothesis of the checked statement does not hold for the inputs.
    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("degenerate eigenvalue: {0}")]
    Degenerate(String),

    #[error("cutoff {cutoff} is too small for lambda = {lambda}; use at least {suggested}")]
    CutoffTooSmall {
        cutoff: f64,
        lambda: f64,
        suggested: f64,
    },

    #[error("band tracking failed: {0}")]
    Tracking(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
