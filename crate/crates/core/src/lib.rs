//! Volumetric toolkit for unlabeled TOF-MRA preprocessing.
//!
//! The crate covers projection-based in-plane cropping, multiscale Hessian
//! vesselness enhancement, coarse vessel segmentation by thresholding and
//! connected components, pretraining loss terms, and segmentation metrics
//! (Dice, centerline Dice, HD95).
//!
//! Numerical kernels are generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix the project-wide working type to `f32`;
//! tests and the loss/metric evaluators use `f64` where tolerances demand it.

pub mod coarse;
pub mod eigen;
pub mod error;
pub mod frangi;
pub mod hessian;
pub mod losses;
pub mod metrics;
pub mod nifti;
pub mod percentile;
pub mod projection;
pub mod scalar;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use volume::{BinaryMask3, Dims3, Image, Mask2, Spacing, SpatialMeta, Volume};

/// Working intensity volume (32-bit float).
pub type Volume3 = Volume<f32>;
/// Working 2D image (32-bit float).
pub type Image2 = Image<f32>;
/// Double-precision volume used by evaluators and oracles.
pub type Volume3d = Volume<f64>;
/// Hessian field at working precision.
pub type HessianField3 = hessian::HessianField<f32>;
/// Eigenvalue triple at working precision.
pub type EigenTriple3 = eigen::EigenTriple<f32>;
