//! CPU splat rasterizer for feature, depth and opacity maps, with analytic
//! feature gradients for field fitting.

pub mod dump;
mod raster;
mod splat;

pub use raster::{
    render, render_with_feature_gradients, PreparedView, RawRender, RenderOptions, RenderOutput, ALPHA_CLAMP,
    MIN_TRANSMITTANCE,
};
#[cfg(test)]
pub(crate) use raster::normalize_rows;
pub use splat::{project_gaussian, Splat2D, BLUR_PX2, CUTOFF_SIGMA};

#[cfg(test)]
mod tests;
