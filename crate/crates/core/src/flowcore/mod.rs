//! Flow-field data model: storage, NPY codec, resampling, flipping and visualization.

mod colorwheel;
mod field;
mod npy;

use std::path::Path;

pub use colorwheel::{flow_color, render_colorwheel, MagnitudeScale};
pub use field::FlowField;
pub use npy::{read_npy, write_npy};

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error("flow field dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("flow data has {actual} values, expected {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("flow component at index {index} is not finite")]
    NonFinite { index: usize },
    #[error("malformed npy file: {0}")]
    Format(String),
    #[error("unsupported npy dtype {0:?}, expected '<f4'")]
    UnsupportedDtype(String),
    #[error("unsupported npy shape {0:?}, expected (H, W, 2)")]
    Shape(Vec<usize>),
    #[error("npy payload has {actual} bytes, expected {expected}")]
    Length { expected: usize, actual: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Reads an NPY flow file from disk.
pub fn load_npy(path: impl AsRef<Path>) -> Result<FlowField, FlowError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| FlowError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_npy(&bytes)
}

/// Writes a flow field to disk in NPY format.
pub fn save_npy(path: impl AsRef<Path>, field: &FlowField) -> Result<(), FlowError> {
    let path = path.as_ref();
    std::fs::write(path, write_npy(field)).map_err(|source| FlowError::Io {
        path: path.display().to_string(),
        source,
    })
}
