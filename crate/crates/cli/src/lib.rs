//! Pipeline commands behind the `adrn` binary: simulate noise, train,
//! denoise, evaluate and render.

pub mod commands;
pub mod manifest;

pub use manifest::ExperimentManifest;

/// Process exit status for a successful command.
pub const EXIT_OK: i32 = 0;
/// Bad input: manifest, parameters, shapes or file formats.
pub const EXIT_VALIDATION: i32 = 2;
/// Failure while running: I/O or training divergence.
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("invalid argument: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] adrn_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Manifest(_) | CliError::Usage(_) => EXIT_VALIDATION,
            CliError::Core(e) if e.is_validation() => EXIT_VALIDATION,
            CliError::Core(_) => EXIT_RUNTIME,
        }
    }
}
