//! Sampling training schemes for pixel-aligned implicit models, with the
//! geometry kernel, trainable occupancy fields, surface extraction and
//! metrics needed to evaluate them on synthetic thin-feature meshes.

pub mod config;
pub mod error;
pub mod extract;
pub mod field;
pub mod labeling;
pub mod mesh;
pub mod metrics;
mod par;
pub mod pfm;
pub mod pipeline;
pub mod schemes;
pub mod thickness;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
