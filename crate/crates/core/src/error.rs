use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid NIfTI file {path}: {reason}")]
    InvalidNifti { path: PathBuf, reason: String },

    #[error("unsupported NIfTI datatype code {code} in {path}")]
    UnsupportedDatatype { path: PathBuf, code: i16 },

    #[error("expected a 3D volume in {path}, header declares {ndim} dimensions")]
    NotThreeDimensional { path: PathBuf, ndim: i16 },

    #[error("non-finite voxel value at linear index {index} in {path}")]
    NonFiniteVoxel { path: PathBuf, index: usize },

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimsMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("crop box {0} is empty or outside the volume")]
    InvalidCropBox(String),

    #[error("mask has no foreground")]
    EmptyMask,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("kernel of width {width} exceeds every volume dimension {dims:?}; use a smaller sigma or pad the volume")]
    KernelTooLarge { width: usize, dims: [usize; 3] },

    #[error("value out of range: {0}")]
    OutOfRange(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn dims(left: &[usize], right: &[usize]) -> Self {
        Error::DimsMismatch { left: left.to_vec(), right: right.to_vec() }
    }
}
