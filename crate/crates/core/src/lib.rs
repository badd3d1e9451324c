//! Cylindrical shearlets for 3D+time data.
//!
//! The crate provides the discrete 4D cylindrical shearlet transform, a
//! separable Daubechies-2 baseline, a matrix-free cone/parallel-beam projector,
//! a primal-dual fixed-point reconstructor with a sparsity-driven regularization
//! controller, quality metrics, and N-term approximation benchmarks.

pub mod approx;
pub mod dirfilters;
pub mod dwt4;
pub mod error;
pub mod operator;
pub mod pdfp;
pub mod phantom;
pub mod projector;
pub mod quality;
pub mod pyramid;
pub mod shearlet;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{GridDims, Spectrum4, Volume3, Volume4};
