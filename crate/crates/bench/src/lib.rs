//! Fixtures shared by the benchmarks.

use gsloc_core::condenser::Point4D;
use gsloc_core::field::{gen_synthetic_scene, sample_view_pose, SyntheticSceneSpec};
use gsloc_core::pnp::Correspondence2D3D;
use gsloc_core::render::RenderOptions;
use gsloc_core::scene::{l2_normalize, project, Camera, GaussianField, Pose};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Synthetic scene plus one pose that sees a good part of it.
pub fn scene_and_view(primitives: usize, camera: &Camera) -> (GaussianField, Pose) {
    let spec = SyntheticSceneSpec {
        primitive_count: primitives,
        max_frequency: 6.0,
        ..Default::default()
    };
    let (field, _) = gen_synthetic_scene(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (pose, _) = sample_view_pose(&field, camera, 1.0, (1.0, 2.0), 0.3, &mut rng, &RenderOptions::default())
        .expect("scene is visible from some pose");
    (field, pose)
}

/// `n` random unit vectors of dimension `dim`, flattened.
pub fn unit_features(n: usize, dim: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let mut v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        l2_normalize(&mut v);
        out.extend(v);
    }
    out
}

/// Uniform random points in the unit 4-cube.
pub fn points_4d(n: usize, seed: u64) -> Vec<Point4D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|source| Point4D {
            coords: [rng.gen(), rng.gen(), rng.gen(), rng.gen()],
            source,
        })
        .collect()
}

/// Correspondences seen by `camera` at a fixed pose: 0.5 px noise on
/// inliers, the given fraction replaced by random pixels.
pub fn correspondences(n: usize, outlier_fraction: f64, camera: &Camera, seed: u64) -> Vec<Correspondence2D3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = Pose::look_at(&Vector3::new(0.3, -0.2, -2.0), &Vector3::zeros(), &Vector3::y()).expect("valid look-at");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let world = Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        let Ok((px, _)) = project(camera, &pose, &world) else { continue };
        if !camera.contains(&px) {
            continue;
        }
        let pixel = if rng.gen_bool(outlier_fraction) {
            Vector2::new(rng.gen_range(0.0..camera.width as f64), rng.gen_range(0.0..camera.height as f64))
        } else {
            px + Vector2::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))
        };
        out.push(Correspondence2D3D::new(pixel, world));
    }
    out
}
