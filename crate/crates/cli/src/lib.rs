//! Experiment driver behind the `iit` binary.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{cmd_analytic, cmd_gamma, cmd_solve, cmd_verify, Outcome};
pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] iit_core::Error),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use iit_core::Error as E;
        match self {
            Self::Config(_) => 2,
            Self::Model(E::Instability { .. } | E::Quadrature(_)) => 3,
            Self::Model(E::Io(_)) | Self::Io(_) => 1,
            Self::Model(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}
