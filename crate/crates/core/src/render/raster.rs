use rayon::prelude::*;

use super::splat::{project_gaussian, Splat2D, CUTOFF_SIGMA};
use crate::scene::{Camera, DepthMap, FeatureMap, GaussianField, Pose};

/// Per-splat opacity clamp.
pub const ALPHA_CLAMP: f64 = 0.99;
/// Blending stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Accumulated opacity needed for a pixel to count as valid.
    pub alpha_valid: f64,
    pub tile_size: usize,
    pub parallel: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            alpha_valid: 0.5,
            tile_size: 16,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub features: FeatureMap,
    pub depth: DepthMap,
    /// Accumulated opacity `1 - T_final` per pixel.
    pub alpha: Vec<f32>,
}

/// Double-precision render result, used for fitting and gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRender {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    /// Blended and L2-normalized features; zero where nothing was blended.
    pub features: Vec<f64>,
    pub alpha: Vec<f64>,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl RawRender {
    pub fn to_output(&self) -> RenderOutput {
        let mut features = FeatureMap::new(self.width, self.height, self.dim);
        let mut depth = DepthMap::new(self.width, self.height);
        for p in 0..self.width * self.height {
            if self.valid[p] {
                features.valid[p] = true;
                depth.valid[p] = true;
                depth.depth[p] = self.depth[p] as f32;
                for (dst, src) in features.feature_mut(p).iter_mut().zip(&self.features[p * self.dim..(p + 1) * self.dim]) {
                    *dst = *src as f32;
                }
            }
        }
        RenderOutput {
            features,
            depth,
            alpha: self.alpha.iter().map(|a| *a as f32).collect(),
        }
    }
}

/// Projected, depth-sorted and tile-binned splats for one camera and pose.
/// Geometry is frozen here, so one preparation serves any number of feature
/// assignments.
#[derive(Debug, Clone)]
pub struct PreparedView {
    width: usize,
    height: usize,
    opts: RenderOptions,
    splats: Vec<Splat2D>,
    tiles_x: usize,
    tile_lists: Vec<Vec<u32>>,
}

struct PixelSample {
    alpha: f64,
    depth_sum: f64,
    weight_sum: f64,
}

impl PreparedView {
    pub fn new(field: &GaussianField, camera: &Camera, pose: &Pose, opts: RenderOptions) -> Self {
        let project = |(i, p)| project_gaussian(p, i, camera, pose);
        let mut splats: Vec<Splat2D> = if opts.parallel {
            field.primitives().par_iter().enumerate().filter_map(project).collect()
        } else {
            field.primitives().iter().enumerate().filter_map(project).collect()
        };
        splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.primitive_index.cmp(&b.primitive_index)));

        let ts = opts.tile_size.max(1);
        let tiles_x = camera.width.div_ceil(ts);
        let tiles_y = camera.height.div_ceil(ts);
        let mut tile_lists = vec![Vec::new(); tiles_x * tiles_y];
        for (k, s) in splats.iter().enumerate() {
            if let Some([x0, x1, y0, y1]) = s.pixel_bounds(camera.width, camera.height) {
                for ty in y0 / ts..=y1 / ts {
                    for tx in x0 / ts..=x1 / ts {
                        tile_lists[ty * tiles_x + tx].push(k as u32);
                    }
                }
            }
        }
        Self {
            width: camera.width,
            height: camera.height,
            opts,
            splats,
            tiles_x,
            tile_lists,
        }
    }

    pub fn splats(&self) -> &[Splat2D] {
        &self.splats
    }

    fn tile_pixels(&self, tile: usize) -> impl Iterator<Item = (usize, usize)> {
        let ts = self.opts.tile_size.max(1);
        let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
        let (x0, y0) = (tx * ts, ty * ts);
        let (x1, y1) = ((x0 + ts).min(self.width), (y0 + ts).min(self.height));
        (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
    }

    /// Front-to-back blend of one pixel over `candidates` (indices into the
    /// sorted splats, in sorted order). `visit` sees each contributing splat
    /// with its blend weight `α'·T`.
    #[inline]
    fn shade<I: Iterator<Item = usize>>(
        &self,
        x: usize,
        y: usize,
        candidates: I,
        mut visit: impl FnMut(usize, f64),
    ) -> PixelSample {
        let (px, py) = (x as f64, y as f64);
        let cutoff = CUTOFF_SIGMA * CUTOFF_SIGMA;
        let mut transmittance = 1.0;
        let mut depth_sum = 0.0;
        let mut weight_sum = 0.0;
        for k in candidates {
            let s = &self.splats[k];
            let power = s.power(px, py);
            if power > cutoff {
                continue;
            }
            let alpha = (s.opacity * (-0.5 * power).exp()).min(ALPHA_CLAMP);
            let w = alpha * transmittance;
            visit(k, w);
            depth_sum += w * s.depth;
            weight_sum += w;
            transmittance *= 1.0 - alpha;
            if transmittance < MIN_TRANSMITTANCE {
                break;
            }
        }
        PixelSample {
            alpha: 1.0 - transmittance,
            depth_sum,
            weight_sum,
        }
    }

    fn finish_pixel(&self, sample: &PixelSample, acc: &mut [f64], out: &mut RawRender, p: usize) {
        let dim = acc.len();
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.alpha[p] = sample.alpha;
        if norm > 0.0 {
            for (dst, v) in out.features[p * dim..(p + 1) * dim].iter_mut().zip(acc.iter()) {
                *dst = v / norm;
            }
        }
        if sample.weight_sum > 0.0 {
            out.depth[p] = sample.depth_sum / sample.weight_sum;
        }
        out.valid[p] = norm > 0.0 && sample.alpha >= self.opts.alpha_valid;
    }

    fn empty_raw(&self, dim: usize) -> RawRender {
        let n = self.width * self.height;
        RawRender {
            width: self.width,
            height: self.height,
            dim,
            features: vec![0.0; n * dim],
            alpha: vec![0.0; n],
            depth: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    /// Tiled render for a flat `primitives × dim` feature buffer.
    pub fn render_raw(&self, features: &[f64], dim: usize) -> RawRender {
        let unit = normalize_rows(features, dim);
        let shade_tile = |tile: usize| {
            let list = &self.tile_lists[tile];
            let mut samples = Vec::new();
            let mut accs = Vec::new();
            let mut acc = vec![0.0; dim];
            for (x, y) in self.tile_pixels(tile) {
                acc.iter_mut().for_each(|v| *v = 0.0);
                let sample = self.shade(x, y, list.iter().map(|k| *k as usize), |k, w| {
                    let f = &unit[self.splats[k].primitive_index * dim..][..dim];
                    for (a, v) in acc.iter_mut().zip(f) {
                        *a += w * v;
                    }
                });
                samples.push((y * self.width + x, sample));
                accs.extend_from_slice(&acc);
            }
            (samples, accs)
        };
        let parts: Vec<_> = if self.opts.parallel {
            (0..self.tile_lists.len()).into_par_iter().map(shade_tile).collect()
        } else {
            (0..self.tile_lists.len()).map(shade_tile).collect()
        };
        let mut out = self.empty_raw(dim);
        for (samples, mut accs) in parts {
            for ((p, sample), acc) in samples.iter().zip(accs.chunks_exact_mut(dim.max(1))) {
                self.finish_pixel(sample, acc, &mut out, *p);
            }
        }
        out
    }

    /// Untiled sequential render: every pixel walks the full sorted splat
    /// list. Must agree bit-for-bit with [`PreparedView::render_raw`].
    pub fn render_reference(&self, features: &[f64], dim: usize) -> RawRender {
        let unit = normalize_rows(features, dim);
        let mut out = self.empty_raw(dim);
        let mut acc = vec![0.0; dim];
        for y in 0..self.height {
            for x in 0..self.width {
                acc.iter_mut().for_each(|v| *v = 0.0);
                let sample = self.shade(x, y, 0..self.splats.len(), |k, w| {
                    let f = &unit[self.splats[k].primitive_index * dim..][..dim];
                    for (a, v) in acc.iter_mut().zip(f) {
                        *a += w * v;
                    }
                });
                self.finish_pixel(&sample, &mut acc, &mut out, y * self.width + x);
            }
        }
        out
    }

    /// Gradient of a loss with respect to the raw (unnormalized) primitive
    /// features, given `loss_grad = ∂L/∂F̂` per pixel (`H·W·dim`). Chains
    /// the outer normalization, the blend weights and the per-primitive
    /// normalization.
    pub fn feature_gradients(&self, features: &[f64], dim: usize, loss_grad: &[f64]) -> Vec<f64> {
        assert_eq!(loss_grad.len(), self.width * self.height * dim, "loss gradient shape");
        let unit = normalize_rows(features, dim);
        let tile_grad = |tile: usize| {
            let list = &self.tile_lists[tile];
            let mut local = vec![0.0; list.len() * dim];
            let mut contrib: Vec<(usize, f64)> = Vec::new();
            let mut acc = vec![0.0; dim];
            for (x, y) in self.tile_pixels(tile) {
                let p = y * self.width + x;
                let g = &loss_grad[p * dim..(p + 1) * dim];
                if g.iter().all(|v| *v == 0.0) {
                    continue;
                }
                contrib.clear();
                acc.iter_mut().for_each(|v| *v = 0.0);
                // list entries ascend, so contributions arrive in list order
                let mut pos = 0usize;
                self.shade(x, y, list.iter().map(|k| *k as usize), |k, w| {
                    while list[pos] as usize != k {
                        pos += 1;
                    }
                    contrib.push((pos, w));
                    let f = &unit[self.splats[k].primitive_index * dim..][..dim];
                    for (a, v) in acc.iter_mut().zip(f) {
                        *a += w * v;
                    }
                });
                let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    continue;
                }
                // ∂L/∂y = (I - F Fᵀ) g / ‖y‖
                let fdotg: f64 = acc.iter().zip(g).map(|(a, gv)| a / norm * gv).sum();
                let gy: Vec<f64> = acc.iter().zip(g).map(|(a, gv)| (gv - a / norm * fdotg) / norm).collect();
                for &(i, w) in &contrib {
                    for (dst, v) in local[i * dim..(i + 1) * dim].iter_mut().zip(&gy) {
                        *dst += w * v;
                    }
                }
            }
            local
        };
        let parts: Vec<Vec<f64>> = if self.opts.parallel {
            (0..self.tile_lists.len()).into_par_iter().map(tile_grad).collect()
        } else {
            (0..self.tile_lists.len()).map(tile_grad).collect()
        };
        let n_prims = features.len() / dim;
        let mut blended = vec![0.0; n_prims * dim];
        for (tile, local) in parts.iter().enumerate() {
            for (i, k) in self.tile_lists[tile].iter().enumerate() {
                let prim = self.splats[*k as usize].primitive_index;
                for (dst, v) in blended[prim * dim..(prim + 1) * dim].iter_mut().zip(&local[i * dim..(i + 1) * dim]) {
                    *dst += v;
                }
            }
        }
        // inner normalization: (I - n nᵀ) G / ‖f‖
        let mut out = vec![0.0; n_prims * dim];
        for i in 0..n_prims {
            let f = &features[i * dim..(i + 1) * dim];
            let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let n = &unit[i * dim..(i + 1) * dim];
            let g = &blended[i * dim..(i + 1) * dim];
            let ndotg: f64 = n.iter().zip(g).map(|(a, b)| a * b).sum();
            for d in 0..dim {
                out[i * dim + d] = (g[d] - n[d] * ndotg) / norm;
            }
        }
        out
    }
}

pub(crate) fn normalize_rows(features: &[f64], dim: usize) -> Vec<f64> {
    let mut out = features.to_vec();
    for row in out.chunks_exact_mut(dim) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

/// Renders the L2-normalized alpha-blended feature map, the depth map and
/// the accumulated opacity of `field` seen from `pose`.
pub fn render(field: &GaussianField, camera: &Camera, pose: &Pose, opts: &RenderOptions) -> RenderOutput {
    let view = PreparedView::new(field, camera, pose, *opts);
    view.render_raw(&field.features_f64(), field.feature_dim()).to_output()
}

/// Per-primitive feature gradients (`primitives × dim`, row-major) for an
/// upstream gradient `loss_grad = ∂L/∂F̂` laid out like the rendered map.
pub fn render_with_feature_gradients(
    field: &GaussianField,
    camera: &Camera,
    pose: &Pose,
    loss_grad: &[f32],
    opts: &RenderOptions,
) -> Vec<f64> {
    let view = PreparedView::new(field, camera, pose, *opts);
    let grad: Vec<f64> = loss_grad.iter().map(|v| *v as f64).collect();
    view.feature_gradients(&field.features_f64(), field.feature_dim(), &grad)
}
