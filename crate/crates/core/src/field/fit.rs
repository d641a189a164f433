use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::FitError;
use crate::render::{PreparedView, RenderOptions};
use crate::scene::{Camera, FeatureMap, GaussianField, Pose};

/// One supervision image: a posed camera and its target feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainView {
    pub camera: Camera,
    pub pose: Pose,
    pub target: FeatureMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitLoss {
    /// Mean absolute residual over valid pixels and channels.
    L1,
    /// Half the mean squared residual over valid pixels and channels.
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewSchedule {
    /// One view per step, visiting views in a fresh random order each epoch.
    Shuffled { seed: u64 },
    /// Every view contributes to every step.
    FullBatch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub steps: usize,
    /// Angular step length per primitive, in radians on the unit sphere.
    pub learning_rate: f64,
    pub loss: FitLoss,
    pub schedule: ViewSchedule,
    pub render: RenderOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            steps: 50_000,
            learning_rate: 0.001,
            loss: FitLoss::L1,
            schedule: ViewSchedule::Shuffled { seed: 0 },
            render: RenderOptions::default(),
        }
    }
}

impl FitOptions {
    pub fn desk() -> Self {
        Self {
            steps: 2000,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub field: GaussianField,
    /// Loss before each step's update.
    pub losses: Vec<f64>,
}

/// Loss and `∂L/∂F̂` of one view for the given features. Residuals are taken
/// after rounding the render to the 32-bit storage precision of the target,
/// so a field that reproduces its target exactly has zero gradient.
pub(crate) fn view_loss(
    view: &PreparedView,
    target: &FeatureMap,
    features: &[f64],
    dim: usize,
    loss: FitLoss,
) -> (f64, Vec<f64>) {
    let raw = view.render_raw(features, dim);
    let mut grad = vec![0.0; raw.features.len()];
    let mut count = 0usize;
    let mut total = 0.0;
    for p in 0..raw.valid.len() {
        if !(raw.valid[p] && target.valid[p]) {
            continue;
        }
        count += 1;
        let t = target.feature_at(p);
        for d in 0..dim {
            let r = (raw.features[p * dim + d] as f32) as f64 - t[d] as f64;
            match loss {
                FitLoss::L1 => {
                    total += r.abs();
                    grad[p * dim + d] = if r > 0.0 {
                        1.0
                    } else if r < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
                FitLoss::L2 => {
                    total += 0.5 * r * r;
                    grad[p * dim + d] = r;
                }
            }
        }
    }
    if count == 0 {
        return (0.0, grad);
    }
    let scale = 1.0 / (count * dim) as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    (total * scale, grad)
}

/// Gradient of the loss with respect to the raw primitive features.
pub(crate) fn view_gradient(
    view: &PreparedView,
    target: &FeatureMap,
    features: &[f64],
    dim: usize,
    loss: FitLoss,
) -> (f64, Vec<f64>) {
    let (value, upstream) = view_loss(view, target, features, dim, loss);
    (value, view.feature_gradients(features, dim, &upstream))
}

/// Moves every primitive's feature by `step` along its negative gradient
/// direction and re-normalizes it. Primitives with zero gradient stay put.
pub(crate) fn descend(features: &mut [f64], grad: &[f64], dim: usize, step: f64) {
    for (f, g) in features.chunks_exact_mut(dim).zip(grad.chunks_exact(dim)) {
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn == 0.0 || !gn.is_finite() {
            continue;
        }
        for (fv, gv) in f.iter_mut().zip(g) {
            *fv -= step * gv / gn;
        }
        let n = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            f.iter_mut().for_each(|v| *v /= n);
        }
    }
}

/// Fits primitive features to the target maps. Geometry is left untouched.
pub fn fit_features(field: &GaussianField, views: &[TrainView], opts: &FitOptions) -> Result<FitResult, FitError> {
    if views.is_empty() {
        return Err(FitError::NoViews);
    }
    let dim = field.feature_dim();
    for (index, v) in views.iter().enumerate() {
        let expected = (v.camera.height, v.camera.width, dim);
        if v.target.shape() != expected {
            return Err(FitError::ShapeMismatch {
                index,
                got: v.target.shape(),
                expected,
            });
        }
    }
    let prepared: Vec<PreparedView> = views
        .iter()
        .map(|v| PreparedView::new(field, &v.camera, &v.pose, opts.render))
        .collect();
    let mut features = field.features_f64();
    let mut losses = Vec::with_capacity(opts.steps);
    let mut order: Vec<usize> = (0..views.len()).collect();
    let mut cursor = order.len();
    let mut rng = match opts.schedule {
        ViewSchedule::Shuffled { seed } => ChaCha8Rng::seed_from_u64(seed),
        ViewSchedule::FullBatch => ChaCha8Rng::seed_from_u64(0),
    };

    for _ in 0..opts.steps {
        let (loss, grad) = match opts.schedule {
            ViewSchedule::Shuffled { .. } => {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                let i = order[cursor];
                cursor += 1;
                view_gradient(&prepared[i], &views[i].target, &features, dim, opts.loss)
            }
            ViewSchedule::FullBatch => {
                let mut total = 0.0;
                let mut grad = vec![0.0; features.len()];
                for (pv, v) in prepared.iter().zip(views) {
                    let (l, g) = view_gradient(pv, &v.target, &features, dim, opts.loss);
                    total += l;
                    grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                let n = views.len() as f64;
                grad.iter_mut().for_each(|g| *g /= n);
                (total / n, grad)
            }
        };
        losses.push(loss);
        descend(&mut features, &grad, dim, opts.learning_rate);
    }

    let mut fitted = field.clone();
    fitted.set_features_f64(&features);
    Ok(FitResult { field: fitted, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{gen_synthetic_scene, SyntheticSceneSpec};
    use crate::render::render;
    use crate::scene::{dot, GaussianPrimitive};
    use nalgebra::Vector3;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn unit(v: Vec<f32>) -> Vec<f32> {
        let n = dot(&v, &v).sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    fn random_features(field: &GaussianField, seed: u64) -> GaussianField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = field.feature_dim();
        let flat: Vec<f64> = (0..field.len() * dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut out = field.clone();
        out.set_features_f64(&crate::render::normalize_rows(&flat, dim));
        out
    }

    fn geometry(f: &GaussianField) -> Vec<([f32; 3], [f32; 4], [f32; 3], f32)> {
        f.primitives().iter().map(|p| (p.position, p.rotation, p.scale, p.opacity)).collect()
    }

    fn scene_views(field: &GaussianField, n: usize) -> Vec<TrainView> {
        let camera = Camera::centered(64, 48, 1.0);
        (0..n)
            .map(|k| {
                let a = k as f64 * 0.3;
                let eye = Vector3::new(1.8 * a.sin(), 0.3, -1.8 * a.cos());
                let pose = Pose::look_at(&eye, &Vector3::zeros(), &Vector3::new(0.0, -1.0, 0.0)).unwrap();
                let target = render(field, &camera, &pose, &RenderOptions::default()).features;
                TrainView { camera, pose, target }
            })
            .collect()
    }

    fn small_scene(count: usize, seed: u64) -> GaussianField {
        gen_synthetic_scene(&SyntheticSceneSpec {
            primitive_count: count,
            scale_range: (0.04, 0.08),
            rng_seed: seed,
            ..Default::default()
        })
        .0
    }

    #[test]
    fn no_views_is_an_error() {
        let field = small_scene(5, 0);
        assert_eq!(fit_features(&field, &[], &FitOptions::desk()), Err(FitError::NoViews));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let field = small_scene(5, 0);
        let mut views = scene_views(&field, 1);
        views[0].target = FeatureMap::new(3, 3, 16);
        assert!(matches!(fit_features(&field, &views, &FitOptions::desk()), Err(FitError::ShapeMismatch { index: 0, .. })));
    }

    #[test]
    fn single_gaussian_converges_to_constant_target() {
        let dim = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = unit((0..dim).map(|_| rng.sample(StandardNormal)).collect());
        let start = unit((0..dim).map(|_| rng.sample(StandardNormal)).collect());
        let field = GaussianField::new(
            dim,
            vec![GaussianPrimitive {
                position: [0.0, 0.0, 2.0],
                rotation: [1.0, 0.0, 0.0, 0.0],
                scale: [1.0; 3],
                opacity: 1.0,
                feature: start,
            }],
        )
        .unwrap();
        let camera = Camera::new(20.0, 20.0, 8.0, 8.0, 16, 16).unwrap();
        let mut target = FeatureMap::new(16, 16, dim);
        for p in 0..256 {
            target.valid[p] = true;
            target.feature_mut(p).copy_from_slice(&u);
        }
        let views = vec![TrainView {
            camera,
            pose: Pose::identity(),
            target,
        }];
        // the start may be up to π away and each step turns by the learning rate
        let opts = FitOptions {
            steps: 6000,
            ..FitOptions::desk()
        };
        let res = fit_features(&field, &views, &opts).unwrap();
        let fitted = &res.field.primitive(0).feature;
        assert!(dot(fitted, &u).abs() > 0.9999, "{}", dot(fitted, &u));
        assert!(*res.losses.last().unwrap() < 1e-3, "{}", res.losses.last().unwrap());
        assert_eq!(geometry(&res.field), geometry(&field));
    }

    #[test]
    fn self_supervised_fit_recovers_targets() {
        let truth = small_scene(150, 4);
        let views = scene_views(&truth, 4);
        let start = random_features(&truth, 9);
        let opts = FitOptions {
            steps: 4000,
            ..FitOptions::desk()
        };
        let res = fit_features(&start, &views, &opts).unwrap();
        let windows: Vec<f64> = res.losses.chunks(200).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        for w in windows.windows(2) {
            assert!(w[1] <= w[0], "window means {windows:?}");
        }
        let first = res.losses[..50].iter().sum::<f64>() / 50.0;
        let last = res.losses[res.losses.len() - 50..].iter().sum::<f64>() / 50.0;
        assert!(last < 0.1 * first, "{first} -> {last}");
        assert_eq!(geometry(&res.field), geometry(&truth));
    }

    #[test]
    fn correct_features_are_a_fixed_point() {
        let truth = small_scene(60, 2);
        let views = scene_views(&truth, 3);
        for loss in [FitLoss::L1, FitLoss::L2] {
            let res = fit_features(
                &truth,
                &views,
                &FitOptions {
                    steps: 30,
                    loss,
                    ..FitOptions::desk()
                },
            )
            .unwrap();
            for l in &res.losses {
                assert!((l - res.losses[0]).abs() <= 1e-9);
            }
            assert_eq!(res.field, truth);
        }
    }

    /// Central differences of the L2 loss, without the storage rounding so
    /// the objective is smooth.
    #[test]
    fn l2_step_direction_matches_finite_differences() {
        let truth = small_scene(5, 7);
        let start = random_features(&truth, 3);
        let camera = Camera::centered(48, 36, 1.2);
        let pose = Pose::look_at(&Vector3::new(0.0, 0.0, -0.9), &Vector3::zeros(), &Vector3::new(0.0, -1.0, 0.0)).unwrap();
        let target = render(&truth, &camera, &pose, &RenderOptions::default()).features;
        let view = PreparedView::new(&start, &camera, &pose, RenderOptions::default());
        let dim = start.feature_dim();
        let feats = start.features_f64();
        let smooth_loss = |f: &[f64]| {
            let raw = view.render_raw(f, dim);
            let mut total = 0.0;
            let mut count = 0;
            for p in 0..raw.valid.len() {
                if raw.valid[p] && target.valid[p] {
                    count += 1;
                    for d in 0..dim {
                        let r = raw.features[p * dim + d] - target.feature_at(p)[d] as f64;
                        total += 0.5 * r * r;
                    }
                }
            }
            total / (count * dim) as f64
        };
        let (_, grad) = view_gradient(&view, &target, &feats, dim, FitLoss::L2);
        let h = 1e-6;
        let mut fd = vec![0.0; feats.len()];
        for i in 0..feats.len() {
            let mut a = feats.clone();
            let mut b = feats.clone();
            a[i] += h;
            b[i] -= h;
            fd[i] = (smooth_loss(&a) - smooth_loss(&b)) / (2.0 * h);
        }
        let cos = |x: &[f64], y: &[f64]| {
            let d: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
            d / (x.iter().map(|v| v * v).sum::<f64>().sqrt() * y.iter().map(|v| v * v).sum::<f64>().sqrt())
        };
        assert!(cos(&grad, &fd) > 0.999, "global {}", cos(&grad, &fd));
        // per-primitive steps are normalized gradient blocks
        let mut stepped = feats.clone();
        descend(&mut stepped, &grad, dim, 1e-3);
        for i in 0..start.len() {
            let block = i * dim..(i + 1) * dim;
            if fd[block.clone()].iter().all(|v| v.abs() < 1e-12) {
                continue;
            }
            let step: Vec<f64> = feats[block.clone()].iter().zip(&stepped[block.clone()]).map(|(a, b)| a - b).collect();
            assert!(cos(&step, &fd[block]) > 0.999, "primitive {i}");
        }
    }
}
