//! Sensor densification, graph-network imputation, reference-enhanced RBF
//! heatmaps and uncertainty overlays for sparse geospatial sensor data.
//!
//! The pipeline runs densify → graph → model/training → interpolate →
//! uncertainty → render; [`eval`] wires the stages into reproducible experiments.

// Parameter checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod densify;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod interpolate;
mod linalg;
pub mod model;
pub mod nn;
pub mod raster;
pub mod render;
pub mod training;
pub mod uncertainty;

pub use error::{Error, Result};
