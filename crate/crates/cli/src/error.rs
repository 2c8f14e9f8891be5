use std::fmt;

use hedonic_core::covmodel::CovError;
use hedonic_core::dataset::DatasetError;
use hedonic_core::model_io::ModelError;
use hedonic_core::synth::SynthError;

/// A failed command, classified by the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Bad input files, flags or configuration (exit code 2).
    Config(anyhow::Error),
    /// A model could not be fitted or evaluated (exit code 1).
    Model(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(_) => 1,
            CliError::Config(_) => 2,
        }
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        CliError::Config(anyhow::anyhow!("{msg}"))
    }

    pub fn model(msg: impl fmt::Display) -> Self {
        CliError::Model(anyhow::anyhow!("{msg}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (CliError::Config(e) | CliError::Model(e)) = self;
        write!(f, "{e:#}")
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Config(e.into())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Simulation(_) => CliError::Model(e.into()),
            _ => CliError::Config(e.into()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io { .. } | ModelError::Format { .. } | ModelError::Version { .. } | ModelError::Level(_) => {
                CliError::Config(e.into())
            }
            _ => CliError::Model(e.into()),
        }
    }
}

impl From<CovError> for CliError {
    fn from(e: CovError) -> Self {
        CliError::Model(e.into())
    }
}

/// Tags fit-stage errors as model failures.
pub trait ModelContext<T> {
    fn model_err(self, what: &str) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> ModelContext<T> for Result<T, E> {
    fn model_err(self, what: &str) -> CliResult<T> {
        self.map_err(|e| CliError::Model(e.into().context(what.to_string())))
    }
}

/// Wraps an I/O failure with the offending path.
pub fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::config(format!("cannot write {}: {e}", path.display()))
}
