use std::path::PathBuf;

use crate::domain::GroupLabel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// [`Error::kind`] returns the bare variant name; the CLI prints it as the
/// machine-readable prefix of its diagnostics.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite task feature {name} = {value}")]
    InvalidFeature { name: &'static str, value: f64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("no samples of group {0}")]
    MissingGroup(GroupLabel),

    #[error("sample {index}: {reason}")]
    InvalidSample { index: usize, reason: String },

    #[error("{0}")]
    DegenerateSplit(String),

    #[error("{path}: {reason}")]
    MalformedModel { path: String, reason: String },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("point ({x}, {y}, {z}) lies outside the workspace")]
    OutOfWorkspace { x: f64, y: f64, z: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("ground truth has zero variance")]
    ZeroVariance,

    #[error("resolution {resolution} must lie in (0, {radius})")]
    InvalidResolution { resolution: f64, radius: f64 },

    #[error("z slice {z} outside [0, {height}]")]
    SliceOutOfRange { z: f64, height: f64 },

    #[error("map carries no leaf ids; regions need a single-tree model")]
    NoLeafIds,

    #[error("map is layered; rendering needs a single z slice")]
    NotASlice,

    #[error("{0}")]
    InvalidParameter(String),

    #[error("{path}: {reason}")]
    Config { path: String, reason: String },

    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}", path = .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("run {run}: {source}")]
    Run {
        run: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Variant name, used as the error kind in CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidFeature { .. } => "InvalidFeature",
            Error::EmptyDataset => "EmptyDataset",
            Error::MissingGroup(_) => "MissingGroup",
            Error::InvalidSample { .. } => "InvalidSample",
            Error::DegenerateSplit(_) => "DegenerateSplit",
            Error::MalformedModel { .. } => "MalformedModel",
            Error::InsufficientSamples { .. } => "InsufficientSamples",
            Error::OutOfWorkspace { .. } => "OutOfWorkspace",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::ZeroVariance => "ZeroVariance",
            Error::InvalidResolution { .. } => "InvalidResolution",
            Error::SliceOutOfRange { .. } => "SliceOutOfRange",
            Error::NoLeafIds => "NoLeafIds",
            Error::NotASlice => "NotASlice",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::Config { .. } => "Config",
            Error::Csv { .. } => "Csv",
            Error::Io { .. } => "Io",
            Error::Run { source, .. } => source.kind(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
