use ckm_core::CkmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] CkmError),

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 2 for bad configuration or arguments, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                CkmError::OutOfBounds { .. }
                | CkmError::ApInObstacle { .. }
                | CkmError::InvalidSpec(_)
                | CkmError::Assembly(_) => 2,
                _ => 1,
            },
            CliError::Runtime(_) => 1,
        }
    }
}
