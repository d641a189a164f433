use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{p3p, refine_robust, reproj_residual, Correspondence2D3D, RefineOptions, RobustKernel};
use crate::error::PnpError;
use crate::scene::{Camera, Pose};

/// Hypotheses drawn and scored together. Fixed so results do not depend on
/// the thread count.
const BATCH: usize = 32;
const MIN_INLIERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacOptions {
    pub threshold_px: f64,
    pub confidence: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub kernel: RobustKernel,
    pub refine: RefineOptions,
    pub parallel: bool,
}

impl Default for RansacOptions {
    fn default() -> Self {
        Self {
            threshold_px: 5.0,
            confidence: 0.9999,
            max_iters: 10_000,
            seed: 0,
            kernel: RobustKernel::huber(5.0),
            refine: RefineOptions::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnPResult {
    pub pose: Pose,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    /// Robust cost of the refit over the consensus set.
    pub cost: f64,
    /// Hypotheses sampled.
    pub iterations: usize,
    pub refine_iterations: usize,
    pub ill_conditioned: bool,
    pub time: Duration,
}

fn count_inliers(pose: &Pose, corr: &[Correspondence2D3D], camera: &Camera, thr2: f64) -> usize {
    corr.iter()
        .filter(|c| reproj_residual(pose, c, camera).is_some_and(|r| r.norm_squared() <= thr2))
        .count()
}

/// Iterations needed to draw one all-inlier triple with the given confidence.
fn required_iterations(inlier_ratio: f64, confidence: f64) -> f64 {
    let p = inlier_ratio.powi(3);
    if p >= 1.0 {
        return 1.0;
    }
    if p <= 0.0 {
        return f64::INFINITY;
    }
    ((1.0 - confidence).ln() / (1.0 - p).ln()).ceil().max(1.0)
}

/// P3P hypotheses from seeded random triples, scored by inlier count under
/// the pixel threshold, with an adaptive stopping bound. The best model is
/// refit over its inliers by robust refinement.
pub fn ransac_pnp(correspondences: &[Correspondence2D3D], camera: &Camera, opts: &RansacOptions) -> Result<PnPResult, PnpError> {
    let start = Instant::now();
    let n = correspondences.len();
    if n < MIN_INLIERS {
        return Err(PnpError::TooFewCorrespondences { got: n, required: MIN_INLIERS });
    }
    let thr2 = opts.threshold_px * opts.threshold_px;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    // (count, hypothesis index, pose)
    let mut best: Option<(usize, usize, Pose)> = None;
    let mut drawn = 0usize;
    let mut bound = opts.max_iters as f64;
    while (drawn as f64) < bound.min(opts.max_iters as f64) {
        let take = BATCH.min(opts.max_iters - drawn);
        let samples: Vec<(usize, [usize; 3])> = (0..take)
            .map(|k| {
                let s = sample(&mut rng, n, 3);
                (drawn + k, [s.index(0), s.index(1), s.index(2)])
            })
            .collect();
        drawn += take;
        let score = |(h, idx): &(usize, [usize; 3])| -> Option<(usize, usize, Pose)> {
            let triple = idx.map(|i| correspondences[i]);
            p3p(&triple, camera)
                .into_iter()
                .map(|pose| (count_inliers(&pose, correspondences, camera, thr2), *h, pose))
                // first candidate wins ties within a hypothesis
                .fold(None, |acc: Option<(usize, usize, Pose)>, c| match acc {
                    Some(a) if a.0 >= c.0 => Some(a),
                    _ => Some(c),
                })
        };
        let better = |a: Option<(usize, usize, Pose)>, b: Option<(usize, usize, Pose)>| match (a, b) {
            (Some(a), Some(b)) => Some(if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a }),
            (a, None) => a,
            (None, b) => b,
        };
        let batch_best = if opts.parallel {
            samples.par_iter().map(score).reduce(|| None, better)
        } else {
            samples.iter().map(score).fold(None, better)
        };
        // earlier batches hold lower hypothesis indices
        best = match (best, batch_best) {
            (Some(a), Some(b)) if b.0 > a.0 => Some(b),
            (None, b) => b,
            (a, _) => a,
        };
        if let Some((count, _, _)) = best {
            bound = required_iterations(count as f64 / n as f64, opts.confidence);
        }
    }

    let Some((_, _, pose)) = best.filter(|b| b.0 >= MIN_INLIERS) else {
        return Err(PnpError::NoConsensus {
            best_inliers: best.map_or(0, |b| b.0),
            required: MIN_INLIERS,
            iterations: drawn,
        });
    };
    let inlier_set: Vec<Correspondence2D3D> = correspondences
        .iter()
        .filter(|c| reproj_residual(&pose, c, camera).is_some_and(|r| r.norm_squared() <= thr2))
        .copied()
        .collect();
    let refit = refine_robust(&pose, &inlier_set, camera, &opts.kernel, &opts.refine);
    let inliers: Vec<bool> = correspondences
        .iter()
        .map(|c| reproj_residual(&refit.pose, c, camera).is_some_and(|r| r.norm_squared() <= thr2))
        .collect();
    let inlier_count = inliers.iter().filter(|v| **v).count();
    Ok(PnPResult {
        pose: refit.pose,
        inliers,
        inlier_count,
        cost: refit.cost,
        iterations: drawn,
        refine_iterations: refit.iterations,
        ill_conditioned: refit.ill_conditioned,
        time: start.elapsed(),
    })
}
