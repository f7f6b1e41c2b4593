//! Process-level error taxonomy.
//!
//! Every failure surfaced by the binary maps to one of three exit codes:
//! `0` for success, `2` for configuration or input problems, and `3` for
//! numerical failures inside a solve or optimization stage.

use mftd_core::lf::LfError;
use mftd_core::mapping::MappingError;
use mftd_core::vae::VaeError;

/// Everything that can go wrong at the pipeline/CLI level.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration file, command-line input, or malformed input data.
    #[error("configuration error: {0}")]
    Config(String),
    /// A numerical stage failed (optimizer divergence, singular system, ...).
    #[error("numerical failure in {stage}: {detail}")]
    Numeric { stage: String, detail: String },
    /// Filesystem or encoding trouble while reading inputs or writing artifacts.
    #[error("io error on {path}: {detail}")]
    Io { path: String, detail: String },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn numeric(stage: &str, detail: impl ToString) -> Self {
        CliError::Numeric {
            stage: stage.to_string(),
            detail: detail.to_string(),
        }
    }

    pub fn io(path: &std::path::Path, err: impl ToString) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            detail: err.to_string(),
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Numeric { .. } => 3,
        }
    }

    /// Wraps a low-fidelity optimizer error, keeping the config/numeric split.
    pub fn from_lf(stage: &str, err: LfError) -> Self {
        match err {
            LfError::InvalidConfig(msg) => CliError::config(format!("{stage}: {msg}")),
            other => CliError::numeric(stage, other),
        }
    }

    /// Wraps an autoencoder error, keeping the config/numeric split.
    pub fn from_vae(stage: &str, err: VaeError) -> Self {
        match err {
            VaeError::InvalidConfig(msg) => CliError::config(format!("{stage}: {msg}")),
            other => CliError::numeric(stage, other),
        }
    }

    /// Wraps a mapping error: malformed meshes are input problems, failed
    /// solves are numerical ones.
    pub fn from_mapping(stage: &str, err: MappingError) -> Self {
        match err {
            MappingError::SolveFailure(_) | MappingError::UvOutOfRange { .. } => {
                CliError::numeric(stage, err)
            }
            other => CliError::config(format!("{stage}: {other}")),
        }
    }
}
