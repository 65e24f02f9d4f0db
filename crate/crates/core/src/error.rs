//! Crate-wide error type and the exit-code contract of the CLI.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate constellation: all points are zero")]
    DegenerateConstellation,

    #[error("unsupported modulation order m = {m}: square QAM requires even m >= 2")]
    UnsupportedOrder { m: u32 },

    #[error("invalid constellation: {0}")]
    InvalidConstellation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("sequence of {len} symbols is too short for a 2N+1 window with N = {half_window}")]
    InsufficientLength { len: usize, half_window: usize },

    #[error("empty batch: the mask selects no symbols")]
    DegenerateBatch,

    #[error("non-finite gradient in {param} at step {step}")]
    NonFiniteGradient { param: String, step: usize },

    #[error("training diverged (non-finite loss) at step {step}")]
    Diverged { step: usize },

    #[error("{path}, line {line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("missing artifacts: {0}")]
    MissingArtifacts(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 1 for config/file problems, 2 for runtime or
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UnsupportedOrder { .. }
            | Error::Config(_)
            | Error::Format { .. }
            | Error::MissingArtifacts(_)
            | Error::InvalidConstellation(_)
            | Error::Io(_) => 1,
            Error::DegenerateConstellation
            | Error::Shape(_)
            | Error::InsufficientLength { .. }
            | Error::DegenerateBatch
            | Error::NonFiniteGradient { .. }
            | Error::Diverged { .. } => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
