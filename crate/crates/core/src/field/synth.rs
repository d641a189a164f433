use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};

use crate::error::QueryError;
use crate::render::{render, RenderOptions, RenderOutput};
use crate::scene::{Camera, FeatureMap, GaussianField, GaussianPrimitive, Pose};

/// Parameters of a generated scene. Primitives fill the axis-aligned cube
/// of side `scene_extent` centered at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneSpec {
    pub primitive_count: usize,
    pub feature_dim: usize,
    pub scene_extent: f64,
    pub fourier_components: usize,
    pub rng_seed: u64,
    /// Upper bound on the spatial frequency of the feature function, in
    /// cycles per scene extent.
    pub max_frequency: f64,
    /// Per-axis scale range as fractions of the extent.
    pub scale_range: (f64, f64),
    pub opacity_range: (f64, f64),
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            primitive_count: 8000,
            feature_dim: 16,
            scene_extent: 1.0,
            fourier_components: 32,
            rng_seed: 0,
            max_frequency: 4.0,
            scale_range: (0.01, 0.03),
            opacity_range: (0.5, 1.0),
        }
    }
}

/// `x ↦ norm(Σ_k a_k cos(ω_k·x + φ_k))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFunction {
    pub amplitudes: Vec<Vec<f64>>,
    pub frequencies: Vec<Vector3<f64>>,
    pub phases: Vec<f64>,
}

impl FeatureFunction {
    pub fn random(dim: usize, components: usize, max_angular_frequency: f64, rng: &mut impl Rng) -> Self {
        let mut amplitudes = Vec::with_capacity(components);
        let mut frequencies = Vec::with_capacity(components);
        let mut phases = Vec::with_capacity(components);
        for _ in 0..components {
            amplitudes.push((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect());
            let dir: [f64; 3] = UnitSphere.sample(rng);
            let mag = max_angular_frequency * rng.gen_range(0.25..=1.0);
            frequencies.push(Vector3::from(dir) * mag);
            phases.push(rng.gen_range(0.0..2.0 * PI));
        }
        Self {
            amplitudes,
            frequencies,
            phases,
        }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.first().map_or(0, Vec::len)
    }

    pub fn eval(&self, x: &Vector3<f64>) -> Vec<f32> {
        let mut acc = vec![0.0f64; self.dim()];
        for ((a, w), phi) in self.amplitudes.iter().zip(&self.frequencies).zip(&self.phases) {
            let c = (w.dot(x) + phi).cos();
            for (dst, v) in acc.iter_mut().zip(a) {
                *dst += v * c;
            }
        }
        let n = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        acc.iter().map(|v| if n > 0.0 { (v / n) as f32 } else { 0.0 }).collect()
    }
}

/// Generates a primitive field and the smooth function its features were
/// sampled from. Deterministic in `spec.rng_seed`.
pub fn gen_synthetic_scene(spec: &SyntheticSceneSpec) -> (GaussianField, FeatureFunction) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let e = spec.scene_extent;
    let func = FeatureFunction::random(
        spec.feature_dim,
        spec.fourier_components,
        2.0 * PI * spec.max_frequency / e,
        &mut rng,
    );
    let (s_lo, s_hi) = spec.scale_range;
    let (o_lo, o_hi) = spec.opacity_range;
    let primitives = (0..spec.primitive_count)
        .map(|_| {
            let pos = Vector3::new(
                rng.gen_range(-0.5..0.5) * e,
                rng.gen_range(-0.5..0.5) * e,
                rng.gen_range(-0.5..0.5) * e,
            );
            let q: UnitQuaternion<f64> = UnitQuaternion::new_normalize(nalgebra::Quaternion::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ));
            let scale = [0; 3].map(|_| (rng.gen_range(s_lo..=s_hi) * e) as f32);
            GaussianPrimitive {
                position: [pos.x as f32, pos.y as f32, pos.z as f32],
                rotation: [q.w as f32, q.i as f32, q.j as f32, q.k as f32],
                scale,
                opacity: rng.gen_range(o_lo..=o_hi) as f32,
                feature: func.eval(&pos),
            }
        })
        .collect();
    let field = GaussianField::new(spec.feature_dim, primitives).expect("generated features match dim");
    (field, func)
}

/// Query feature map: the field rendered from `pose` with per-channel
/// Gaussian noise of standard deviation `noise_sigma` added to every valid
/// pixel, then re-normalized.
pub fn gen_query(
    field: &GaussianField,
    camera: &Camera,
    pose: &Pose,
    noise_sigma: f64,
    seed: u64,
    opts: &RenderOptions,
) -> Result<FeatureMap, QueryError> {
    let clean = render(field, camera, pose, opts);
    add_noise(clean, noise_sigma, seed)
}

pub(crate) fn add_noise(clean: RenderOutput, noise_sigma: f64, seed: u64) -> Result<FeatureMap, QueryError> {
    let mut map = clean.features;
    if map.valid_count() == 0 {
        return Err(QueryError::EmptyView);
    }
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in 0..map.valid.len() {
            if !map.valid[p] {
                continue;
            }
            let f = map.feature_mut(p);
            let mut v: Vec<f64> = f
                .iter()
                .map(|x| *x as f64 + noise_sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            for (dst, src) in f.iter_mut().zip(&v) {
                *dst = *src as f32;
            }
        }
    }
    Ok(map)
}

/// Look-at pose from a random direction at distance `[min, max] × extent`
/// from the origin, rejection-sampled until at least `min_valid_fraction` of
/// the rendered pixels are valid. Returns the pose and its clean render.
pub fn sample_view_pose(
    field: &GaussianField,
    camera: &Camera,
    extent: f64,
    distance_range: (f64, f64),
    min_valid_fraction: f64,
    rng: &mut impl Rng,
    opts: &RenderOptions,
) -> Option<(Pose, RenderOutput)> {
    for _ in 0..64 {
        let dir: [f64; 3] = UnitSphere.sample(rng);
        let eye = Vector3::from(dir) * rng.gen_range(distance_range.0..=distance_range.1) * extent;
        let up: [f64; 3] = UnitSphere.sample(rng);
        let Some(pose) = Pose::look_at(&eye, &Vector3::zeros(), &Vector3::from(up)) else {
            continue;
        };
        let out = render(field, camera, &pose, opts);
        let frac = out.features.valid_count() as f64 / camera.pixel_count() as f64;
        if frac >= min_valid_fraction {
            return Some((pose, out));
        }
    }
    None
}
