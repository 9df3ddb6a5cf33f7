use std::path::Path;

/// Failures surfaced by the driver and CLI, each mapped to an exit status.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error(transparent)]
    Core(#[from] stacca_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// 2 for configuration problems, 3 for missing or corrupt files, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        use stacca_core::Error as C;
        match self {
            Error::Config(_) => 2,
            Error::Artifact(_) => 3,
            Error::Core(C::Config(_) | C::InvalidSpec(_) | C::GenerationFailed(_)) => 2,
            Error::Core(C::Numeric(_)) => 4,
            Error::Core(_) => 1,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        Error::Artifact(format!("{}: {e}", path.display()))
    }
}
