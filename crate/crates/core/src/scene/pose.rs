//! Rigid world-to-camera poses and the se(3) tangent space used by the
//! refinement solver.
//!
//! Convention: `p_cam = R * p_world + t` with column-vector points.
//! Twists are ordered `[omega; upsilon]` (rotation first).

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};

const SMALL_ANGLE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, projecting `rotation` onto SO(3) if it drifted.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: orthonormalize(&rotation),
            translation,
        }
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: q.to_rotation_matrix().into_inner(),
            translation,
        }
    }

    /// Camera at `eye` looking at `target`, image y axis pointing roughly
    /// along `-up`.
    pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Option<Self> {
        let z = (target - eye).try_normalize(1e-12)?;
        let x = z.cross(&-up).try_normalize(1e-9)?;
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Some(Self {
            rotation,
            translation: -(rotation * eye),
        })
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Camera center in world coordinates, `-Rᵀt`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let rtr = self.rotation.transpose() * self.rotation;
        (rtr - Matrix3::identity()).abs().max() <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// SE(3) exponential of a twist `[omega; upsilon]`.
    pub fn exp(xi: &Vector6<f64>) -> Self {
        let omega = Vector3::new(xi[0], xi[1], xi[2]);
        let upsilon = Vector3::new(xi[3], xi[4], xi[5]);
        let theta = omega.norm();
        let w = skew(&omega);
        let w2 = w * w;
        let (a, b, c) = if theta < SMALL_ANGLE {
            (1.0, 0.5, 1.0 / 6.0)
        } else {
            let t2 = theta * theta;
            (
                theta.sin() / theta,
                (1.0 - theta.cos()) / t2,
                (theta - theta.sin()) / (t2 * theta),
            )
        };
        let rotation = Matrix3::identity() + w * a + w2 * b;
        let v = Matrix3::identity() + w * b + w2 * c;
        Self {
            rotation,
            translation: v * upsilon,
        }
    }

    /// Inverse of [`Pose::exp`] for rotation angles below π.
    pub fn log(&self) -> Vector6<f64> {
        let omega = so3_log(&self.rotation);
        let theta = omega.norm();
        let w = skew(&omega);
        let v_inv = if theta < SMALL_ANGLE {
            Matrix3::identity() - w * 0.5 + w * w / 12.0
        } else {
            let half = 0.5 * theta;
            let coef = (1.0 - half * half.cos() / half.sin()) / (theta * theta);
            Matrix3::identity() - w * 0.5 + w * w * coef
        };
        let upsilon = v_inv * self.translation;
        Vector6::new(omega[0], omega[1], omega[2], upsilon[0], upsilon[1], upsilon[2])
    }

    /// Left-multiplies the increment `exp(xi)` onto the pose.
    pub fn retract(&self, xi: &Vector6<f64>) -> Self {
        let mut out = Pose::exp(xi).compose(self);
        out.rotation = orthonormalize(&out.rotation);
        out
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < 1e-6 {
        // first-order, theta/sin(theta) ≈ 1 + theta²/6
        return vee * (0.5 + theta * theta / 12.0);
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // axis from the symmetric part near π
        let b = (r + Matrix3::identity()) * 0.5;
        let col = (0..3)
            .max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)]))
            .unwrap_or(0);
        let axis = b.column(col).into_owned() / b[(col, col)].max(1e-300).sqrt();
        let axis = axis.normalize();
        let sign = if axis.dot(&vee) < 0.0 { -1.0 } else { 1.0 };
        return axis * theta * sign;
    }
    vee * (theta / (2.0 * theta.sin()))
}

pub fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (Some(u), Some(vt)) = (svd.u, svd.v_t) else {
        return *r;
    };
    let mut m = u * vt;
    if m.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        m = u2 * vt;
    }
    m
}

/// Translation error (distance between camera centers, world units) and
/// rotation error (geodesic angle, degrees).
pub fn pose_error(estimate: &Pose, ground_truth: &Pose) -> (f64, f64) {
    let trans = (estimate.center() - ground_truth.center()).norm();
    let rel = estimate.rotation.transpose() * ground_truth.rotation;
    // atan2 keeps precision near zero where acos of the trace does not
    let cos = (rel.trace() - 1.0) * 0.5;
    let sin = 0.5
        * Vector3::new(rel[(2, 1)] - rel[(1, 2)], rel[(0, 2)] - rel[(2, 0)], rel[(1, 0)] - rel[(0, 1)]).norm();
    (trans, sin.atan2(cos).to_degrees())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut impl Rng) -> Pose {
        let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let angle = rng.gen_range(0.0..3.0);
        let q = UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
        let t = Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        Pose::from_quaternion(&q, t)
    }

    #[test]
    fn group_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let back = a.compose(&b).compose(&b.inverse());
            assert!((back.rotation - a.rotation).abs().max() < 1e-9);
            assert!((back.translation - a.translation).abs().max() < 1e-9);
            assert!(a.is_valid(1e-9));
        }
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let dir = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
            let w = dir * rng.gen_range(0.0..3.1);
            let xi = Vector6::new(w[0], w[1], w[2], rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let back = Pose::exp(&xi).log();
            assert!((back - xi).abs().max() < 1e-8, "{xi:?} -> {back:?}");
        }
        let tiny = Vector6::new(1e-12, -2e-12, 0.0, 0.1, 0.2, 0.3);
        assert!((Pose::exp(&tiny).log() - tiny).abs().max() < 1e-14);
    }

    #[test]
    fn pose_error_examples() {
        let id = Pose::identity();
        assert_eq!(pose_error(&id, &id), (0.0, 0.0));
        let rz = Pose::from_quaternion(
            &UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 10f64.to_radians()),
            Vector3::zeros(),
        );
        let (t, r) = pose_error(&rz, &id);
        assert_eq!(t, 0.0);
        assert_relative_eq!(r, 10.0, epsilon = 1e-9);
    }

    #[test]
    fn pose_error_matches_quaternion_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let qa = a.to_quaternion();
            let qb = b.to_quaternion();
            let rel = qa.inverse() * qb;
            let angle = 2.0 * rel.imag().norm().atan2(rel.w.abs());
            let (_, deg) = pose_error(&a, &b);
            assert!((deg - angle.to_degrees()).abs() < 1e-9, "{deg} vs {}", angle.to_degrees());
        }
    }

    #[test]
    fn look_at_points_forward() {
        let eye = Vector3::new(3.0, 1.0, -2.0);
        let pose = Pose::look_at(&eye, &Vector3::zeros(), &Vector3::y()).unwrap();
        assert!(pose.is_valid(1e-12));
        let c = pose.transform(&Vector3::zeros());
        assert!(c.x.abs() < 1e-12 && c.y.abs() < 1e-12 && c.z > 0.0);
        assert!((pose.center() - eye).norm() < 1e-12);
    }
}
