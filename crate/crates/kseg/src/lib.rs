//! Filesystem and command-line layer over `kseg-core`: tensor container
//! files, synthetic datasets, zip checkpoints, run configuration, and the
//! drivers behind the `kseg` binary's subcommands.

pub mod checkpoint;
pub mod config;
pub mod container;
pub mod dataset;
pub mod driver;
pub mod evalrun;
pub mod render;

/// Top-level command failure, mapped onto the process exit code: config
/// errors exit 2, data errors 3, numerical failures 4.
#[derive(Debug, thiserror::Error)]
pub enum CmdError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CmdError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CmdError::Config(_) => 2,
            CmdError::Data(_) => 3,
            CmdError::Numerical(_) => 4,
        }
    }
}

impl From<config::ConfigError> for CmdError {
    fn from(e: config::ConfigError) -> Self {
        CmdError::Config(e.to_string())
    }
}

impl From<container::ContainerError> for CmdError {
    fn from(e: container::ContainerError) -> Self {
        CmdError::Data(e.to_string())
    }
}

impl From<dataset::DatasetError> for CmdError {
    fn from(e: dataset::DatasetError) -> Self {
        CmdError::Data(e.to_string())
    }
}

impl From<checkpoint::CheckpointError> for CmdError {
    fn from(e: checkpoint::CheckpointError) -> Self {
        CmdError::Data(e.to_string())
    }
}

impl From<kseg_core::train::TrainError> for CmdError {
    fn from(e: kseg_core::train::TrainError) -> Self {
        CmdError::Numerical(e.to_string())
    }
}
