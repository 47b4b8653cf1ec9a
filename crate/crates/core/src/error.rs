use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("duplicate sensor id {0:?}")]
    DuplicateId(String),

    #[error("unknown sensor id {0:?}")]
    UnknownId(String),

    #[error("coordinate out of range for sensor {id:?}: lng={lng}, lat={lat}")]
    CoordinateRange { id: String, lng: f64, lat: f64 },

    #[error("sensor {0:?} lies outside the boundary polygon")]
    OutsideBoundary(String),

    #[error("non-uniform timestamp spacing at column {column}")]
    NonUniformSpacing { column: usize },

    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),

    #[error("degenerate kernel bandwidth (all sensors coincide along an axis)")]
    DegenerateBandwidth,

    #[error("only {available} sampleable cells for {requested} virtual sensors")]
    InsufficientMass { requested: usize, available: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("singular linear system")]
    Singular,

    #[error("duplicate interpolation center at ({0}, {1})")]
    DuplicateCenter(f64, f64),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("{available} interpolation centres cannot determine {required} polynomial terms")]
    TooFewCenters { available: usize, required: usize },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("empty evaluation set: {0}")]
    Empty(String),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input or configuration rather than
    /// a failure while running.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Parse { .. }
                | Error::DuplicateId(_)
                | Error::UnknownId(_)
                | Error::CoordinateRange { .. }
                | Error::OutsideBoundary(_)
                | Error::NonUniformSpacing { .. }
                | Error::Format { .. }
        )
    }
}
