use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: i64, count: usize },

    #[error("face {face} is degenerate: {reason}")]
    DegenerateFace { face: usize, reason: &'static str },

    #[error("mesh is empty")]
    EmptyMesh,

    #[error("bounding box has zero extent on every axis")]
    DegenerateBounds,

    #[error("mesh is not watertight: {boundary_edges} boundary edges, {non_manifold_edges} non-manifold edges")]
    NotWatertight {
        boundary_edges: usize,
        non_manifold_edges: usize,
    },

    #[error("could only place {got} of {wanted} sample points")]
    BudgetShortfall { wanted: usize, got: usize },

    #[error("all sampling weights are zero")]
    ZeroWeights,

    #[error("weight vector has {got} entries, expected {expected}")]
    WeightCount { got: usize, expected: usize },

    #[error("invalid configuration at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("resolution mismatch: {left:?} vs {right:?}")]
    ResolutionMismatch { left: (usize, usize), right: (usize, usize) },

    #[error("grid value {value} at index {index} lies outside [0, 1]")]
    OutOfUnitRange { index: usize, value: f64 },

    #[error("mesh thickness plane is required when the thickness loss weight is positive")]
    MissingThicknessPlane,

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("bad binary header: {0}")]
    Format(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("experiment cell `{cell}` failed: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// The innermost error, looking through experiment cell wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Cell { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
