use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the mapping pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("failed to parse {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("mesh has no vertices or faces")]
    EmptyMesh,

    #[error("face {face} is degenerate (area {area:e} m^2)")]
    DegenerateFace { face: usize, area: f64 },

    #[error("face {face} references vertex {index} but mesh has {count} vertices")]
    FaceIndexOutOfRange { face: usize, index: usize, count: usize },

    #[error("mesh is not watertight: edge ({0}, {1}) is shared by {2} faces")]
    NotWatertight(usize, usize, usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty point set")]
    EmptyPointSet,

    #[error("sensor pose produced no contact")]
    ContactMiss,

    #[error("no valid pixels to convert")]
    NoValidPixels,

    #[error("kernel matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("{count} observations exceed the full-GP cap of {cap}")]
    CapExceeded { count: usize, cap: usize },

    #[error("bad record file: {0}")]
    BadRecord(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{step}: {source}")]
    Step {
        step: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Wrap an error with the pipeline step that produced it.
    pub fn at_step(self, step: impl Into<String>) -> Self {
        Error::Step {
            step: step.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
