use std::path::{Path, PathBuf};

use lpcd_core::tensor::TensorError;
use lpcd_core::Error as CoreError;
use thiserror::Error;

/// Process exit codes; kept stable for scripting.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const MISSING_FILE: i32 = 3;
    pub const INVALID_CONFIG: i32 = 4;
    pub const SHAPE_MISMATCH: i32 = 5;
    pub const DATA_INTEGRITY: i32 = 6;
    pub const DIVERGED: i32 = 7;
}

pub const EXIT_CODES_HELP: &str = "\
Exit codes:
  0  success
  1  other failure (I/O, pixel stage)
  2  usage error (bad flags)
  3  missing input file
  4  invalid configuration or argument
  5  tensor shape mismatch
  6  corrupt data or failed integrity check
  7  training diverged (NaN loss)

Errors are printed to stderr as one line: error[<kind>]: <message>";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Short machine-readable kind and the matching exit code.
    pub fn kind(&self) -> (&'static str, i32) {
        let io_kind = |e: &std::io::Error| {
            if e.kind() == std::io::ErrorKind::NotFound {
                ("missing-file", exit::MISSING_FILE)
            } else {
                ("io", exit::OTHER)
            }
        };
        match self {
            CliError::Config(_) => ("invalid-config", exit::INVALID_CONFIG),
            CliError::Io { source, .. } => io_kind(source),
            CliError::Core(e) => match e {
                CoreError::Config(_) | CoreError::InvalidArgument(_) => ("invalid-config", exit::INVALID_CONFIG),
                CoreError::Io { source, .. } => io_kind(source),
                CoreError::Corrupt { .. } => ("data-integrity", exit::DATA_INTEGRITY),
                CoreError::Diverged { .. } => ("diverged", exit::DIVERGED),
                CoreError::PixelStage { .. } => ("pixel-stage", exit::OTHER),
                CoreError::Tensor(t) => match t {
                    TensorError::ShapeMismatch { .. } | TensorError::InvalidShape { .. } => ("shape-mismatch", exit::SHAPE_MISMATCH),
                    TensorError::Format(_) => ("data-integrity", exit::DATA_INTEGRITY),
                    TensorError::Io(e) => io_kind(e),
                    _ => ("invalid-config", exit::INVALID_CONFIG),
                },
            },
        }
    }

    /// The single stderr line printed on failure.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {msg}", self.kind().0)
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Core(e.into())
    }
}
