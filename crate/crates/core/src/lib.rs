//! Reconstruct the interior of a volume as a cloud of anisotropic 3D
//! Gaussians fit to axis-aligned 2D slices.
//!
//! Each Gaussian is evaluated on a slice through the exact factorization of
//! its density into a depth marginal and an in-plane conditional, which also
//! yields a tight per-slice candidate box for tiled rendering.

pub mod cli;
pub mod conditional;
pub mod data;
pub mod eigen;
pub mod error;
pub mod gaussian;
pub mod metrics;
pub mod raster;
pub mod simulation;
pub mod training;

pub use conditional::{Axis, CandidateBox, ExtentMode};
pub use error::{Error, Result};
pub use gaussian::{Bounds, CloudGradients, Gaussian3D, GaussianCloud, GaussianGrad, InitConfig};
pub use raster::{Method, RasterSettings, RenderedSlice, Selection, SliceSpec, TileBins};
