use nalgebra::{Matrix2, Matrix2x3, Vector2};

use crate::scene::{Camera, GaussianPrimitive, Pose, MIN_DEPTH};

/// Low-pass dilation added to every projected covariance, in px².
pub const BLUR_PX2: f64 = 0.3;

/// Footprint cutoff in Mahalanobis units: weights beyond 3σ are zero.
pub const CUTOFF_SIGMA: f64 = 3.0;

/// Screen-space footprint of one primitive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Inverse covariance `[a, b, c]` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub primitive_index: usize,
    /// Half extents of the 3σ ellipse along x and y.
    pub radius: [f64; 2],
}

impl Splat2D {
    /// Mahalanobis power `dᵀ Σ⁻¹ d` at a pixel center.
    #[inline]
    pub fn power(&self, px: f64, py: f64) -> f64 {
        let dx = px - self.mean2d.x;
        let dy = py - self.mean2d.y;
        self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy
    }

    /// Inclusive pixel-index bounds of the footprint, clipped to the image.
    /// `None` when it misses the image entirely.
    pub fn pixel_bounds(&self, width: usize, height: usize) -> Option<[usize; 4]> {
        let x0 = (self.mean2d.x - self.radius[0]).ceil().max(0.0);
        let x1 = (self.mean2d.x + self.radius[0]).floor().min(width as f64 - 1.0);
        let y0 = (self.mean2d.y - self.radius[1]).ceil().max(0.0);
        let y1 = (self.mean2d.y + self.radius[1]).floor().min(height as f64 - 1.0);
        (x0 <= x1 && y0 <= y1).then_some([x0 as usize, x1 as usize, y0 as usize, y1 as usize])
    }
}

/// EWA projection of a primitive. Returns `None` when the mean is behind the
/// camera or the 3σ footprint misses every pixel.
pub fn project_gaussian(
    primitive: &GaussianPrimitive,
    primitive_index: usize,
    camera: &Camera,
    pose: &Pose,
) -> Option<Splat2D> {
    let pc = pose.transform(&primitive.position_f64());
    if pc.z <= MIN_DEPTH {
        return None;
    }
    let iz = 1.0 / pc.z;
    let jac = Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * pc.x * iz * iz,
        0.0,
        camera.fy * iz,
        -camera.fy * pc.y * iz * iz,
    );
    let cov_cam = pose.rotation * primitive.covariance() * pose.rotation.transpose();
    let mut cov2d = jac * cov_cam * jac.transpose();
    cov2d[(0, 1)] = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(1, 0)] = cov2d[(0, 1)];
    cov2d[(0, 0)] += BLUR_PX2;
    cov2d[(1, 1)] += BLUR_PX2;
    let det = cov2d.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [cov2d[(1, 1)] / det, -cov2d[(0, 1)] / det, cov2d[(0, 0)] / det];
    let mean2d = Vector2::new(camera.fx * pc.x * iz + camera.cx, camera.fy * pc.y * iz + camera.cy);
    let splat = Splat2D {
        mean2d,
        cov2d,
        conic,
        depth: pc.z,
        opacity: primitive.opacity as f64,
        primitive_index,
        radius: [CUTOFF_SIGMA * cov2d[(0, 0)].sqrt(), CUTOFF_SIGMA * cov2d[(1, 1)].sqrt()],
    };
    splat.pixel_bounds(camera.width, camera.height)?;
    Some(splat)
}
