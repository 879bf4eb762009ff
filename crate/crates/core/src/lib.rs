//! Directional Hölder regularity of random surfaces observed on a regular grid.
//!
//! The crate simulates anisotropic fractional surfaces, estimates the angle
//! of anisotropy and the directional regularities from noisy replicates,
//! tests for anisotropy and smooths with a rotated, anisotropic kernel.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod angle;
pub mod aniso;
pub mod detection;
pub mod error;
pub mod fbm;
pub mod grid;
pub mod harness;
pub mod io;
pub mod regularity;
pub mod rng;
pub mod smoothing;

pub use error::{DiregError, Result};
