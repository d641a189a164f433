//! Sparse-to-dense visual localization against a color-free 3D Gaussian
//! feature field.

pub mod error;
pub mod condenser;
pub mod field;
pub mod matcher;
pub mod pipeline;
pub mod pnp;
pub mod render;
pub mod scene;
