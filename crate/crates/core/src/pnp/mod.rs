//! Robust camera pose from 2D–3D correspondences.

mod p3p;
mod ransac;
mod refine;

use nalgebra::{Matrix2x6, Vector2, Vector3};

use crate::scene::{skew, Camera, Pose, MIN_DEPTH};

pub use p3p::p3p;
pub use ransac::{ransac_pnp, PnPResult, RansacOptions};
pub use refine::{refine_robust, RefineOptions, RefineResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence2D3D {
    pub pixel: Vector2<f64>,
    pub world: Vector3<f64>,
    pub weight: f64,
}

impl Correspondence2D3D {
    pub fn new(pixel: Vector2<f64>, world: Vector3<f64>) -> Self {
        Self { pixel, world, weight: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    Huber,
    Cauchy,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustKernel {
    pub kind: KernelKind,
    /// Scale in pixels.
    pub delta: f64,
}

impl Default for RobustKernel {
    fn default() -> Self {
        Self::huber(5.0)
    }
}

impl RobustKernel {
    pub fn huber(delta: f64) -> Self {
        Self { kind: KernelKind::Huber, delta }
    }

    pub fn cauchy(delta: f64) -> Self {
        Self { kind: KernelKind::Cauchy, delta }
    }

    pub fn none() -> Self {
        Self { kind: KernelKind::None, delta: 1.0 }
    }

    /// Loss of a residual norm `s ≥ 0`.
    pub fn rho(&self, s: f64) -> f64 {
        let d = self.delta;
        match self.kind {
            KernelKind::Huber if s > d => d * (s - 0.5 * d),
            KernelKind::Huber | KernelKind::None => 0.5 * s * s,
            KernelKind::Cauchy => 0.5 * d * d * (s * s / (d * d)).ln_1p(),
        }
    }

    /// IRLS weight `rho'(s) / s`.
    pub fn weight(&self, s: f64) -> f64 {
        let d = self.delta;
        match self.kind {
            KernelKind::Huber if s > d => d / s,
            KernelKind::Huber | KernelKind::None => 1.0,
            KernelKind::Cauchy => 1.0 / (1.0 + s * s / (d * d)),
        }
    }
}

/// `u − π(R P + t)` or `None` when the point is not in front of the camera.
#[inline]
pub fn reproj_residual(pose: &Pose, c: &Correspondence2D3D, camera: &Camera) -> Option<Vector2<f64>> {
    let p = pose.transform(&c.world);
    if p.z <= MIN_DEPTH {
        return None;
    }
    Some(c.pixel - Vector2::new(camera.fx * p.x / p.z + camera.cx, camera.fy * p.y / p.z + camera.cy))
}

/// Pixel residual norms; points behind the camera give `+∞`.
pub fn reproj_residuals(pose: &Pose, correspondences: &[Correspondence2D3D], camera: &Camera) -> Vec<f64> {
    correspondences
        .iter()
        .map(|c| reproj_residual(pose, c, camera).map_or(f64::INFINITY, |r| r.norm()))
        .collect()
}

/// Jacobian of `u − π(R P + t)` with respect to a left increment
/// `[omega; upsilon]` applied as `exp(xi) ∘ pose`, at `xi = 0`.
pub fn residual_jacobian(pose: &Pose, world: &Vector3<f64>, camera: &Camera) -> Option<Matrix2x6<f64>> {
    let p = pose.transform(world);
    if p.z <= MIN_DEPTH {
        return None;
    }
    let iz = 1.0 / p.z;
    let dpi = nalgebra::Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * p.x * iz * iz,
        0.0,
        camera.fy * iz,
        -camera.fy * p.y * iz * iz,
    );
    let mut dp = nalgebra::Matrix3x6::zeros();
    dp.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&p)));
    dp.fixed_view_mut::<3, 3>(0, 3).copy_from(&nalgebra::Matrix3::identity());
    Some(-(dpi * dp))
}
