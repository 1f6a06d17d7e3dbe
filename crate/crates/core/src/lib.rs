//! Dual-domain metal artifact reduction for 2D fan-beam CT.
//!
//! The crate covers the full chain: scan geometry, a matched forward
//! projector and FBP, a polychromatic metal-artifact simulator, classical
//! sinogram completion (LI, NMAR), a small autodiff engine with U-Net style
//! networks, and the training / evaluation pipeline behind the `mar` CLI.

// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod image;
pub mod io;
pub mod mar;
pub mod nn;
pub mod physics;
pub mod pipeline;
pub mod projector;
pub mod rng;

pub use error::{MarError, Result};
pub use geometry::{FanBeamGeometry, ImageGrid, ScanGeometry};
pub use image::{Image, Sinogram, Unit};
