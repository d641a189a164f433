//! Three-point resection on bearing vectors.
//!
//! Depths along the bearings are `s1, s2 = u s1, s3 = v s1`. Eliminating
//! `u` and `s1` from the three law-of-cosines constraints leaves a quartic
//! in `v`; it is assembled here by polynomial arithmetic rather than from
//! closed-form coefficients. Each real root gives depths, which are polished
//! by Newton steps and aligned to the world triple by absolute orientation.

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::scene::{Camera, Pose};

use super::Correspondence2D3D;

type Poly = [f64; 5]; // coefficients by ascending power

fn mul(a: &Poly, b: &Poly) -> Poly {
    let mut out = [0.0; 5];
    for i in 0..5 {
        for j in 0..5 - i {
            out[i + j] += a[i] * b[j];
        }
    }
    out
}

fn axpy(acc: &mut Poly, s: f64, p: &Poly) {
    for (a, v) in acc.iter_mut().zip(p) {
        *a += s * v;
    }
}

fn eval(p: &Poly, x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn eval_d(p: &Poly, x: f64) -> f64 {
    (1..5).rev().fold(0.0, |acc, i| acc * x + i as f64 * p[i])
}

/// Real roots of a polynomial of degree ≤ 4 via companion-matrix eigenvalues,
/// each polished by Newton iterations.
fn real_roots(p: &Poly) -> Vec<f64> {
    let scale = p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let deg = (0..5).rev().find(|i| p[*i].abs() > 1e-14 * scale).unwrap_or(0);
    let roots: Vec<f64> = match deg {
        0 => Vec::new(),
        1 => vec![-p[0] / p[1]],
        _ => {
            let lead = p[deg];
            let mut m = Matrix4::zeros();
            for i in 1..deg {
                m[(i, i - 1)] = 1.0;
            }
            for i in 0..deg {
                m[(i, deg - 1)] = -p[i] / lead;
            }
            let sub = m.view((0, 0), (deg, deg)).clone_owned();
            sub.complex_eigenvalues()
                .iter()
                .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
                .map(|z| z.re)
                .collect()
        }
    };
    roots
        .into_iter()
        .map(|mut x| {
            for _ in 0..8 {
                let d = eval_d(p, x);
                if d == 0.0 {
                    break;
                }
                let step = eval(p, x) / d;
                x -= step;
                if step.abs() <= 1e-16 * (1.0 + x.abs()) {
                    break;
                }
            }
            x
        })
        .collect()
}

/// Rotation and translation with `cam ≈ R world + t`, least squares.
fn absolute_orientation(world: &[Vector3<f64>; 3], cam: &[Vector3<f64>; 3]) -> Pose {
    let cw = (world[0] + world[1] + world[2]) / 3.0;
    let cc = (cam[0] + cam[1] + cam[2]) / 3.0;
    let mut h = Matrix3::zeros();
    for i in 0..3 {
        h += (cam[i] - cc) * (world[i] - cw).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (u * vt).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * vt;
    Pose {
        rotation: r,
        translation: cc - r * cw,
    }
}

/// Up to four poses consistent with three correspondences. Collinear or
/// coincident world points, or coincident bearings, give no solution.
pub fn p3p(triple: &[Correspondence2D3D; 3], camera: &Camera) -> Vec<Pose> {
    let w = [triple[0].world, triple[1].world, triple[2].world];
    let f = triple.map(|c| camera.unproject(&c.pixel).normalize());
    let ab = w[1] - w[0];
    let ac = w[2] - w[0];
    let extent2 = ab.norm_squared().max(ac.norm_squared()).max((w[2] - w[1]).norm_squared());
    if extent2 == 0.0 || ab.cross(&ac).norm_squared() <= 1e-20 * extent2 * extent2 {
        return Vec::new();
    }
    let a2 = (w[1] - w[2]).norm_squared();
    let b2 = (w[0] - w[2]).norm_squared();
    let c2 = (w[0] - w[1]).norm_squared();
    let cos_a = f[1].dot(&f[2]);
    let cos_b = f[0].dot(&f[2]);
    let cos_g = f[0].dot(&f[1]);
    if [cos_a, cos_b, cos_g].iter().any(|c| *c > 1.0 - 1e-15) {
        return Vec::new();
    }

    // u = N(v) / D(v), Q(v) = 1 + v² − 2 v cos_b
    let k = (a2 - c2) / b2;
    let q: Poly = [1.0, -2.0 * cos_b, 1.0, 0.0, 0.0];
    let n: Poly = [1.0 + k, -2.0 * k * cos_b, k - 1.0, 0.0, 0.0];
    let d: Poly = [2.0 * cos_g, -2.0 * cos_a, 0.0, 0.0, 0.0];
    // D² + N² − 2 cos_g N D − (c²/b²) Q D² = 0
    let d2 = mul(&d, &d);
    let mut quartic = d2;
    axpy(&mut quartic, 1.0, &mul(&n, &n));
    axpy(&mut quartic, -2.0 * cos_g, &mul(&n, &d));
    axpy(&mut quartic, -c2 / b2, &mul(&q, &d2));

    let mut out: Vec<Pose> = Vec::new();
    for v in real_roots(&quartic) {
        let dv = eval(&d, v);
        let qv = eval(&q, v);
        if v <= 0.0 || dv.abs() < 1e-12 || qv <= 0.0 {
            continue;
        }
        let u = eval(&n, v) / dv;
        if u <= 0.0 {
            continue;
        }
        let s1 = (b2 / qv).sqrt();
        let Some(s) = polish_depths([s1, u * s1, v * s1], [a2, b2, c2], [cos_a, cos_b, cos_g]) else {
            continue;
        };
        let cam = [f[0] * s[0], f[1] * s[1], f[2] * s[2]];
        let pose = absolute_orientation(&w, &cam);
        let ok = triple.iter().all(|c| {
            super::reproj_residual(&pose, c, camera).is_some_and(|r| r.norm() <= 1e-4 * (1.0 + camera.fx))
        });
        let dup = out.iter().any(|p| (p.rotation - pose.rotation).abs().max() < 1e-9 && (p.translation - pose.translation).norm() < 1e-9 * (1.0 + pose.translation.norm()));
        if ok && !dup {
            out.push(pose);
        }
    }
    out
}

/// Newton on the three distance constraints
/// `s_i² + s_j² − 2 s_i s_j cos_ij = d_ij²`.
fn polish_depths(mut s: [f64; 3], dist2: [f64; 3], cos: [f64; 3]) -> Option<[f64; 3]> {
    let [a2, b2, c2] = dist2;
    let [ca, cb, cg] = cos;
    for _ in 0..6 {
        let [s1, s2, s3] = s;
        let r = Vector3::new(
            s2 * s2 + s3 * s3 - 2.0 * s2 * s3 * ca - a2,
            s1 * s1 + s3 * s3 - 2.0 * s1 * s3 * cb - b2,
            s1 * s1 + s2 * s2 - 2.0 * s1 * s2 * cg - c2,
        );
        let j = Matrix3::new(
            0.0,
            2.0 * (s2 - s3 * ca),
            2.0 * (s3 - s2 * ca),
            2.0 * (s1 - s3 * cb),
            0.0,
            2.0 * (s3 - s1 * cb),
            2.0 * (s1 - s2 * cg),
            2.0 * (s2 - s1 * cg),
            0.0,
        );
        let Some(step) = j.lu().solve(&r) else { break };
        s = [s1 - step[0], s2 - step[1], s3 - step[2]];
        if step.norm() <= 1e-15 * (s1 + s2 + s3) {
            break;
        }
    }
    s.iter().all(|v| v.is_finite() && *v > 0.0).then_some(s)
}
