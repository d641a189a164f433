use nalgebra::{Vector2, Vector3};

use super::Pose;
use crate::error::GeometryError;

/// Minimum camera-frame depth for a point to count as in front of the camera.
pub const MIN_DEPTH: f64 = 1e-6;

/// Pinhole intrinsics. Pixel centers sit at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        let cam = Self { fx, fy, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    /// Square pixels, principal point at the image center, focal length
    /// `focal_ratio * width`.
    pub fn centered(width: usize, height: usize, focal_ratio: f64) -> Self {
        let f = focal_ratio * width as f64;
        Self {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidCamera(format!("{self:?}")))
        }
    }

    /// Pixel of a camera-frame point, or `None` when it lies behind the
    /// camera.
    pub fn project_cam(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= MIN_DEPTH {
            return None;
        }
        Some(Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Normalized image-plane ray `K⁻¹ [u, v, 1]`.
    pub fn unproject(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0)
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= -0.5 && pixel.y >= -0.5 && pixel.x < self.width as f64 - 0.5 && pixel.y < self.height as f64 - 0.5
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Same optics at `1/factor` resolution.
    pub fn downscaled(&self, factor: usize) -> Self {
        let s = factor as f64;
        Self {
            fx: self.fx / s,
            fy: self.fy / s,
            cx: (self.cx + 0.5) / s - 0.5,
            cy: (self.cy + 0.5) / s - 0.5,
            width: self.width / factor,
            height: self.height / factor,
        }
    }
}

/// Projects a world point; returns the pixel and the camera-frame depth.
pub fn project(camera: &Camera, pose: &Pose, point: &Vector3<f64>) -> Result<(Vector2<f64>, f64), GeometryError> {
    let pc = pose.transform(point);
    match camera.project_cam(&pc) {
        Some(px) => Ok((px, pc.z)),
        None => Err(GeometryError::BehindCamera { depth: pc.z }),
    }
}

/// World point seen at `pixel` with camera-frame depth `depth`.
pub fn backproject(camera: &Camera, pose: &Pose, pixel: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>, GeometryError> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    let pc = camera.unproject(pixel) * depth;
    Ok(pose.rotation.transpose() * (pc - pose.translation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam() -> Camera {
        Camera::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    #[test]
    fn principal_axis() {
        let (px, z) = project(&cam(), &Pose::identity(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((px.x, px.y, z), (50.0, 50.0, 1.0));
        let (px, z) = project(&cam(), &Pose::identity(), &Vector3::new(0.5, 0.0, 1.0)).unwrap();
        assert_eq!((px.x, px.y, z), (100.0, 50.0, 1.0));
        let p = backproject(&cam(), &Pose::identity(), &Vector2::new(50.0, 50.0), 1.0).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn failures() {
        assert!(matches!(
            project(&cam(), &Pose::identity(), &Vector3::new(0.0, 0.0, 0.0)),
            Err(GeometryError::BehindCamera { .. })
        ));
        assert!(matches!(
            project(&cam(), &Pose::identity(), &Vector3::new(1.0, 0.0, -1.0)),
            Err(GeometryError::BehindCamera { .. })
        ));
        assert!(backproject(&cam(), &Pose::identity(), &Vector2::new(1.0, 1.0), 0.0).is_err());
        assert!(backproject(&cam(), &Pose::identity(), &Vector2::new(1.0, 1.0), -2.0).is_err());
        assert!(Camera::new(100.0, 100.0, 100.0, 50.0, 100, 100).is_err());
        assert!(Camera::new(0.0, 100.0, 10.0, 50.0, 100, 100).is_err());
    }

    fn random_pose(rng: &mut impl Rng) -> Pose {
        let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let q = UnitQuaternion::from_scaled_axis(axis * 1.5);
        Pose::from_quaternion(&q, Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn project_matches_transform_then_divide() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = Camera::new(420.0, 380.0, 319.5, 241.0, 640, 480).unwrap();
        for _ in 0..1000 {
            let pose = random_pose(&mut rng);
            let pc = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.2..6.0)];
            // world point chosen so the camera-frame point is pc
            let r = pose.rotation;
            let t = pose.translation;
            let d = [pc[0] - t[0], pc[1] - t[1], pc[2] - t[2]];
            let pw = Vector3::new(
                r[(0, 0)] * d[0] + r[(1, 0)] * d[1] + r[(2, 0)] * d[2],
                r[(0, 1)] * d[0] + r[(1, 1)] * d[1] + r[(2, 1)] * d[2],
                r[(0, 2)] * d[0] + r[(1, 2)] * d[1] + r[(2, 2)] * d[2],
            );
            let mut cam_pt = [0.0; 3];
            for (i, out) in cam_pt.iter_mut().enumerate() {
                *out = r[(i, 0)] * pw[0] + r[(i, 1)] * pw[1] + r[(i, 2)] * pw[2] + t[i];
            }
            let u = c.fx * cam_pt[0] / cam_pt[2] + c.cx;
            let v = c.fy * cam_pt[1] / cam_pt[2] + c.cy;
            let (px, z) = project(&c, &pose, &pw).unwrap();
            assert!((px.x - u).abs() < 1e-12 * u.abs().max(1.0));
            assert!((px.y - v).abs() < 1e-12 * v.abs().max(1.0));
            assert!((z - cam_pt[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = Camera::new(420.0, 380.0, 319.5, 241.0, 640, 480).unwrap();
        for _ in 0..1000 {
            let pose = random_pose(&mut rng);
            let px = Vector2::new(rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0));
            let depth = rng.gen_range(0.1..20.0);
            let pw = backproject(&c, &pose, &px, depth).unwrap();
            assert!((pose.transform(&pw).z - depth).abs() < 1e-9);
            let (back, z) = project(&c, &pose, &pw).unwrap();
            assert!((back - px).norm() < 1e-9);
            assert!((z - depth).abs() < 1e-9);
        }
    }
}
