use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("degenerate operator: {guarded} of {total} measurement entries have zero sensing weight")]
    DegenerateOperator { guarded: usize, total: usize },

    #[error("degenerate measurement: {0}")]
    DegenerateMeasurement(String),

    #[error("solver diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("denoiser plugin violated its contract: {0}")]
    PluginContract(String),

    #[error("calibration failed: every grid node was invalid")]
    CalibrationFailure,

    #[error("scenario {scenario}: {source}")]
    Scenario {
        scenario: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("malformed array header in {path}: {message}")]
    MalformedHeader { path: PathBuf, message: String },

    #[error("truncated array payload in {path}: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("unsupported element type `{0}`")]
    UnsupportedElementType(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::Parameter(_)
                | Error::Dimension(_)
                | Error::MalformedHeader { .. }
                | Error::Truncated { .. }
                | Error::UnsupportedElementType(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
