use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::scene::{Camera, GaussianField, GaussianPrimitive, Pose};

fn prim(pos: [f32; 3], sigma: f32, opacity: f32, feature: Vec<f32>) -> GaussianPrimitive {
    GaussianPrimitive {
        position: pos,
        rotation: [1.0, 0.0, 0.0, 0.0],
        scale: [sigma; 3],
        opacity,
        feature,
    }
}

fn cam() -> Camera {
    Camera::new(60.0, 60.0, 32.0, 24.0, 64, 48).unwrap()
}

fn random_field(rng: &mut impl Rng, n: usize, dim: usize) -> GaussianField {
    let prims = (0..n)
        .map(|_| {
            let q = UnitQuaternion::from_scaled_axis(Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)));
            GaussianPrimitive {
                position: [rng.gen_range(-0.6..0.6), rng.gen_range(-0.5..0.5), rng.gen_range(1.5..3.0)],
                rotation: [q.w as f32, q.i as f32, q.j as f32, q.k as f32],
                scale: [rng.gen_range(0.03..0.2), rng.gen_range(0.03..0.2), rng.gen_range(0.03..0.2)],
                opacity: rng.gen_range(0.3..1.0),
                feature: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            }
        })
        .collect();
    GaussianField::new(dim, prims).unwrap()
}

fn random_pose(rng: &mut impl Rng) -> Pose {
    let q = UnitQuaternion::from_scaled_axis(Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)));
    Pose::from_quaternion(&q, Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)))
}

fn unit(v: &[f32]) -> Vec<f64> {
    let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    v.iter().map(|x| *x as f64 / n).collect()
}

#[test]
fn single_gaussian_center_pixel() {
    let f = vec![3.0, -1.0, 2.0, 0.5];
    let field = GaussianField::new(4, vec![prim([0.0, 0.0, 2.0], 0.5, 1.0, f.clone())]).unwrap();
    let out = render(&field, &cam(), &Pose::identity(), &RenderOptions::default());
    let (x, y) = (32, 24);
    assert!(out.features.is_valid(x, y));
    let expect = unit(&f);
    for (a, b) in out.features.feature(x, y).iter().zip(&expect) {
        assert!((*a as f64 - b).abs() < 1e-6);
    }
    assert!((out.depth.get(x as i64, y as i64).unwrap() - 2.0).abs() < 1e-6);
    assert!((out.alpha[24 * 64 + 32] - 0.99).abs() < 1e-6);
}

#[test]
fn two_term_blend_closed_form() {
    let front = vec![1.0, 0.0, 0.0];
    let back = vec![0.0, 2.0, 0.0];
    for back_opacity in [0.3f32, 0.8, 1.0] {
        let field = GaussianField::new(
            3,
            vec![prim([0.0, 0.0, 3.0], 0.8, back_opacity, back.clone()), prim([0.0, 0.0, 2.0], 0.5, 1.0, front.clone())],
        )
        .unwrap();
        let out = render(&field, &cam(), &Pose::identity(), &RenderOptions::default());
        // at the shared center both exponentials are 1
        let w_front = 0.99f64;
        let w_back = (back_opacity as f64).min(0.99) * (1.0 - w_front);
        let norm = (w_front * w_front + w_back * w_back).sqrt();
        let got = out.features.feature(32, 24);
        assert!((got[0] as f64 - w_front / norm).abs() < 1e-6);
        assert!((got[1] as f64 - w_back / norm).abs() < 1e-6);
        assert!(got[0] > 0.99);
        let depth = (w_front * 2.0 + w_back * 3.0) / (w_front + w_back);
        assert!((out.depth.get(32, 24).unwrap() as f64 - depth).abs() < 1e-5);
    }
}

#[test]
fn empty_field_renders_all_invalid() {
    let out = render(&GaussianField::empty(8), &cam(), &Pose::identity(), &RenderOptions::default());
    assert_eq!(out.features.valid_count(), 0);
    assert!(out.alpha.iter().all(|a| *a == 0.0));
}

#[test]
fn unit_norm_and_bounded_depth_over_random_scenes() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let field = random_field(&mut rng, 30, 8);
        let pose = random_pose(&mut rng);
        let out = render(&field, &cam(), &pose, &RenderOptions::default());
        let (zmin, zmax) = field
            .primitives()
            .iter()
            .map(|p| pose.transform(&p.position_f64()).z)
            .fold((f64::MAX, f64::MIN), |(lo, hi), z| (lo.min(z), hi.max(z)));
        for p in 0..out.features.valid.len() {
            let a = out.alpha[p] as f64;
            if out.features.valid[p] {
                assert!(a >= 0.5 - 1e-6);
            } else {
                assert!(a < 0.5 + 1e-6);
            }
            if out.features.valid[p] {
                let n: f64 = out.features.feature_at(p).iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-5);
                let z = out.depth.depth[p] as f64;
                assert!(z >= zmin - 1e-5 && z <= zmax + 1e-5);
            }
            assert!((0.0..=1.0).contains(&out.alpha[p]));
        }
    }
}

#[test]
fn tiled_matches_reference_bit_for_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for tile in [16, 7] {
        let field = random_field(&mut rng, 60, 5);
        let pose = random_pose(&mut rng);
        let feats = field.features_f64();
        for parallel in [true, false] {
            let view = PreparedView::new(&field, &cam(), &pose, RenderOptions { tile_size: tile, parallel, ..Default::default() });
            assert_eq!(view.render_raw(&feats, 5), view.render_reference(&feats, 5));
        }
    }
}

#[test]
fn storage_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let field = random_field(&mut rng, 50, 6);
    let mut prims = field.primitives().to_vec();
    prims.reverse();
    prims.swap(3, 17);
    let shuffled = GaussianField::new(6, prims).unwrap();
    let pose = random_pose(&mut rng);
    let a = render(&field, &cam(), &pose, &RenderOptions::default());
    let b = render(&shuffled, &cam(), &pose, &RenderOptions::default());
    assert_eq!(a.features.valid, b.features.valid);
    for (x, y) in a.features.data.iter().zip(&b.features.data) {
        assert!((x - y).abs() < 1e-6);
    }
    for (x, y) in a.depth.depth.iter().zip(&b.depth.depth) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn occlusion_is_monotone_in_front_opacity() {
    let front = vec![1.0, 0.2, 0.0, 0.0];
    let back = vec![0.0, 0.0, 1.0, 0.3];
    let nf = unit(&front);
    let mut last = -1.0;
    for k in 1..=20 {
        let op = k as f32 / 20.0;
        let field = GaussianField::new(
            4,
            vec![prim([0.0, 0.0, 2.0], 0.4, op, front.clone()), prim([0.0, 0.0, 3.0], 0.6, 0.9, back.clone())],
        )
        .unwrap();
        let out = render(&field, &cam(), &Pose::identity(), &RenderOptions { alpha_valid: 0.0, ..Default::default() });
        let got = out.features.feature(33, 25);
        let cos: f64 = got.iter().zip(&nf).map(|(a, b)| *a as f64 * b).sum();
        assert!(cos >= last - 1e-7, "opacity {op}: {cos} < {last}");
        last = cos;
    }
}

fn l2_loss(raw: &RawRender, target: &[f64], mask: &[bool]) -> (f64, Vec<f64>) {
    let dim = raw.dim;
    let mut loss = 0.0;
    let mut grad = vec![0.0; raw.features.len()];
    for p in 0..mask.len() {
        if !mask[p] {
            continue;
        }
        for d in 0..dim {
            let r = raw.features[p * dim + d] - target[p * dim + d];
            loss += 0.5 * r * r;
            grad[p * dim + d] = r;
        }
    }
    (loss, grad)
}

/// Max relative error of the analytic gradient against central differences
/// with step 1e-4 on f64 features.
fn max_fd_error(field: &GaussianField, pose: &Pose, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = field.feature_dim();
    let view = PreparedView::new(field, &cam(), pose, RenderOptions::default());
    let feats = field.features_f64();
    let base = view.render_raw(&feats, dim);
    let mask = base.valid.clone();
    let target: Vec<f64> = (0..base.features.len()).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let (_, upstream) = l2_loss(&base, &target, &mask);
    let analytic = view.feature_gradients(&feats, dim, &upstream);
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let h = 1e-4;
    let mut worst = 0.0f64;
    for i in 0..feats.len() {
        let mut plus = feats.clone();
        plus[i] += h;
        let mut minus = feats.clone();
        minus[i] -= h;
        let lp = l2_loss(&view.render_raw(&plus, dim), &target, &mask).0;
        let lm = l2_loss(&view.render_raw(&minus, dim), &target, &mask).0;
        let fd = (lp - lm) / (2.0 * h);
        let err = (analytic[i] - fd).abs() / fd.abs().max(analytic[i].abs()).max(1e-3 * scale);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let field = random_field(&mut rng, 10, 4);
    let g = render_with_feature_gradients(&field, &cam(), &Pose::identity(), &vec![0.0; 64 * 48 * 4], &RenderOptions::default());
    assert!(g.iter().all(|v| *v == 0.0));
}

#[test]
fn gradient_single_gaussian_matches_fd() {
    let field = GaussianField::new(5, vec![prim([0.05, -0.02, 2.0], 0.3, 0.8, vec![0.3, -0.7, 0.2, 0.9, -0.1])]).unwrap();
    let err = max_fd_error(&field, &Pose::identity(), 3);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn gradient_ten_gaussians_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..5 {
        let field = random_field(&mut rng, 10, 6);
        let pose = random_pose(&mut rng);
        let err = max_fd_error(&field, &pose, trial);
        assert!(err < 1e-4, "trial {trial}: {err}");
    }
}

#[test]
fn debug_dumps_have_headers() {
    let field = GaussianField::new(4, vec![prim([0.0, 0.0, 2.0], 0.5, 1.0, vec![1.0, 0.0, 0.0, 0.0])]).unwrap();
    let out = render(&field, &cam(), &Pose::identity(), &RenderOptions::default());
    let mut buf = Vec::new();
    dump::write_depth_pgm(&out, &mut buf).unwrap();
    assert!(buf.starts_with(b"P5\n64 48\n65535\n"));
    assert_eq!(buf.len(), 15 + 64 * 48 * 2);
    let mut buf = Vec::new();
    dump::write_feature_ppm(&out, &mut buf).unwrap();
    assert!(buf.starts_with(b"P6\n64 48\n255\n"));
    let mut buf = Vec::new();
    dump::write_alpha_pgm(&out, &mut buf).unwrap();
    assert_eq!(buf.len(), 15 + 64 * 48 * 2);
}
