use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Library(#[from] bloch_dos::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use bloch_dos::Error as E;
        match self {
            CliError::Io(..) => 1,
            CliError::Config(_) => 2,
            CliError::Library(e) => match e {
                E::Lattice(_) | E::Potential(_) | E::Parameter(_) => 2,
                E::Solver(_) | E::Degenerate(_) | E::Tracking(_) => 3,
                E::Precondition(_) | E::CutoffTooSmall { .. } => 4,
            },
        }
    }
}
