//! Weakly supervised image quality assessment at desk scale.
//!
//! The crate covers the whole pipeline: generating synthetically distorted
//! image sets, scoring them with full-reference metrics, equalizing the score
//! distributions, training multi-task and single-output regressors on
//! pooled feature vectors, and evaluating with rank/linear correlation and
//! rater-reliability statistics.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pin the double-precision instantiations used by the pipeline.

pub mod cli;
pub mod distortion;
pub mod error;
pub mod evalstat;
pub mod features;
pub mod friqa;
pub mod imgcore;
pub mod neuro;
pub mod scalar;
pub mod scorepipe;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Planar RGB/gray raster with `f64` samples in `[0, 1]`.
pub type Image = imgcore::ImageBuffer<f64>;
/// Convolution kernel with `f64` weights.
pub type Kernel = imgcore::Kernel2D<f64>;
/// Feed-forward network in double precision.
pub type Network = neuro::NetworkModel<f64>;
/// Adam optimizer state matching [`Network`].
pub type Adam = neuro::AdamState<f64>;
/// Histogram-equalization transform over `f64` scores.
pub type HeTransform = scorepipe::HeTransform<f64>;
/// Five-parameter logistic mapping in double precision.
pub type LogisticFit = evalstat::LogisticFit<f64>;
/// CNN activation block in single precision, as stored on disk.
pub type ActivationBlock = features::ActivationBlock<f32>;
