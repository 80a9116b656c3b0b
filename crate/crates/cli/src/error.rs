use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed JSON or a value outside its documented range.
    #[error("{0}")]
    Input(String),

    /// The model or class was read but fails its checks.
    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Core(#[from] spectral_interp::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        use spectral_interp::Error as E;
        match self {
            CliError::Io { .. } | CliError::Input(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(E::NotMember(_) | E::InfeasibleClass(_) | E::UnsupportedClass(_)) => 2,
            CliError::Core(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Input(_) => "input",
            CliError::Validation(_) => "validation",
            CliError::Core(e) if e.is_numerical() => "numerical",
            CliError::Core(_) => "model",
        }
    }
}
