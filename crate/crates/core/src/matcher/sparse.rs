use nalgebra::Vector2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::kernel::PackedColumns;
use crate::error::InsufficientMatches;
use crate::field::LandmarkSet;
use crate::scene::{FeatureMap, GaussianField};

/// Minimum correspondences for a sparse pose.
pub const MIN_SPARSE_MATCHES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub pixel: Vector2<f64>,
    pub descriptor: Vec<f32>,
    pub score: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectOptions {
    pub nms_radius: f64,
    pub max_keypoints: usize,
    pub sim_floor: f32,
    /// Landmarks scored per pixel; a fixed random subset when exceeded.
    pub max_scoring_landmarks: usize,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            nms_radius: 4.0,
            max_keypoints: 1024,
            sim_floor: 0.5,
            max_scoring_landmarks: 2048,
            seed: 0,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseMatch {
    pub pixel: Vector2<f64>,
    /// Primitive index of the matched landmark.
    pub landmark: usize,
    pub similarity: f32,
}

/// Scores each valid pixel by its best cosine similarity to the landmark
/// features and keeps the strongest responses at least `nms_radius` apart.
pub fn detect_keypoints(
    query: &FeatureMap,
    landmarks: &LandmarkSet,
    field: &GaussianField,
    opts: &DetectOptions,
) -> Vec<Keypoint> {
    if landmarks.is_empty() || query.valid_count() == 0 {
        return Vec::new();
    }
    let subset: Vec<usize> = if landmarks.len() > opts.max_scoring_landmarks {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut pick = sample(&mut rng, landmarks.len(), opts.max_scoring_landmarks).into_vec();
        pick.sort_unstable();
        pick.into_iter().map(|k| landmarks.indices[k]).collect()
    } else {
        landmarks.indices.clone()
    };
    let packed = PackedColumns::new(subset.iter().map(|i| field.primitive(*i).feature.as_slice()), field.feature_dim());
    let n = subset.len();
    let score_row = |y: usize| {
        let mut buf = vec![0.0f32; packed.padded_len()];
        (0..query.width)
            .map(|x| {
                if !query.is_valid(x, y) {
                    return f32::NEG_INFINITY;
                }
                packed.dots(query.feature(x, y), &mut buf);
                buf[..n].iter().copied().fold(f32::NEG_INFINITY, f32::max)
            })
            .collect::<Vec<f32>>()
    };
    let scores: Vec<f32> = if opts.parallel {
        (0..query.height).into_par_iter().flat_map_iter(score_row).collect()
    } else {
        (0..query.height).flat_map(score_row).collect()
    };

    let mut order: Vec<usize> = (0..scores.len()).filter(|p| scores[*p] >= opts.sim_floor).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
    let r = opts.nms_radius;
    let cell = r.max(1.0);
    let gw = (query.width as f64 / cell).ceil() as usize + 1;
    let gh = (query.height as f64 / cell).ceil() as usize + 1;
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); gw * gh];
    let mut kept: Vec<Keypoint> = Vec::new();
    for p in order {
        if kept.len() >= opts.max_keypoints {
            break;
        }
        let (x, y) = ((p % query.width) as f64, (p / query.width) as f64);
        let (gx, gy) = ((x / cell) as usize, (y / cell) as usize);
        let reach = (r / cell).ceil() as usize;
        let clear = (gy.saturating_sub(reach)..=(gy + reach).min(gh - 1)).all(|cy| {
            (gx.saturating_sub(reach)..=(gx + reach).min(gw - 1)).all(|cx| {
                grid[cy * gw + cx].iter().all(|k| {
                    let q: &Keypoint = &kept[*k];
                    (q.pixel - Vector2::new(x, y)).norm() >= r
                })
            })
        });
        if clear {
            grid[gy * gw + gx].push(kept.len());
            kept.push(Keypoint {
                pixel: Vector2::new(x, y),
                descriptor: query.feature_at(p).to_vec(),
                score: scores[p],
            });
        }
    }
    kept
}

/// Mutual nearest neighbours under cosine similarity, keeping pairs at or
/// above `threshold`. Ties go to the lower index. Ordered by keypoint.
pub fn match_sparse(
    keypoints: &[Keypoint],
    landmarks: &LandmarkSet,
    field: &GaussianField,
    threshold: f32,
) -> Result<Vec<SparseMatch>, InsufficientMatches> {
    let found = mnn_pairs(
        &keypoints.iter().map(|k| k.descriptor.as_slice()).collect::<Vec<_>>(),
        &landmarks.indices.iter().map(|i| field.primitive(*i).feature.as_slice()).collect::<Vec<_>>(),
        field.feature_dim(),
        threshold,
    );
    if found.len() < MIN_SPARSE_MATCHES {
        return Err(InsufficientMatches {
            found: found.len(),
            required: MIN_SPARSE_MATCHES,
        });
    }
    Ok(found
        .into_iter()
        .map(|(i, j, s)| SparseMatch {
            pixel: keypoints[i].pixel,
            landmark: landmarks.indices[j],
            similarity: s,
        })
        .collect())
}

/// Mutual-argmax pairs of a full similarity matrix with `sim ≥ threshold`.
pub fn mnn_pairs(rows: &[&[f32]], cols: &[&[f32]], dim: usize, threshold: f32) -> Vec<(usize, usize, f32)> {
    if rows.is_empty() || cols.is_empty() {
        return Vec::new();
    }
    let packed = PackedColumns::new(cols.iter().copied(), dim);
    let m = cols.len();
    let mut buf = vec![0.0f32; packed.padded_len()];
    let mut row_best = Vec::with_capacity(rows.len());
    let mut col_best = vec![(f32::NEG_INFINITY, usize::MAX); m];
    for (i, r) in rows.iter().enumerate() {
        packed.dots(r, &mut buf);
        let mut best = (f32::NEG_INFINITY, usize::MAX);
        for (j, s) in buf[..m].iter().enumerate() {
            if *s > best.0 {
                best = (*s, j);
            }
            if *s > col_best[j].0 {
                col_best[j] = (*s, i);
            }
        }
        row_best.push(best);
    }
    row_best
        .into_iter()
        .enumerate()
        .filter(|(i, (s, j))| *j != usize::MAX && col_best[*j].1 == *i && *s >= threshold)
        .map(|(i, (s, j))| (i, j, s))
        .collect()
}
