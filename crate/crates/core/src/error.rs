use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameter, shape mismatch or out-of-range setting.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation precondition (bad action index, stepping a finished episode).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed input file; `line` is 1-based.
    #[error("{source_name}:{line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A decision node whose winning feature weight is (numerically) zero has no crisp form.
    #[error("decision node {node} is degenerate: winning feature weight {weight:e} is too close to zero")]
    DegenerateNode { node: usize, weight: f64 },

    /// NaN or infinite values showed up during training.
    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("missing artifact {}: run `{producer}` first", path.display())]
    MissingArtifact { path: PathBuf, producer: String },

    /// Bad command-line or config usage, reported with exit code 2.
    #[error("usage error: {0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by how the tool was invoked rather than by a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Usage(_) | Error::Config(_))
    }
}
