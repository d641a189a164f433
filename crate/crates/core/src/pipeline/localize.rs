use std::time::{Duration, Instant};

use log::{debug, warn};

use super::{MapBundle, PipelineConfig};
use crate::condenser::{condense, lift_to_3d, CondensedMatches, Proxy};
use crate::error::{InsufficientMatches, LocError, PnpError};
use crate::matcher::{detect_keypoints, match_dense_coarse, match_sparse, pool_coarse, refine_matches, DenseMatch};
use crate::pnp::{ransac_pnp, Correspondence2D3D, PnPResult};
use crate::render::render;
use crate::scene::{Camera, DepthMap, FeatureMap, Pose};

/// Wall time of each stage. Rasterization, clustering, matching and dense
/// PnP are summed over dense iterations; `sparse` covers the whole sparse
/// stage including its PnP.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub sparse: Duration,
    pub rasterization: Duration,
    pub matching: Duration,
    pub clustering: Duration,
    pub pnp: Duration,
    /// Sparse stage plus the first dense iteration.
    pub total_1: Duration,
    /// Sparse stage plus every dense iteration run.
    pub total_n: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationStats {
    pub pose: Pose,
    pub n_dense: usize,
    pub n_proxies: usize,
    pub inliers: usize,
    pub rasterization: Duration,
    pub matching: Duration,
    pub clustering: Duration,
    pub pnp: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocResult {
    pub pose_sparse: Pose,
    /// Pose after the last successful dense iteration, or the sparse pose.
    pub pose_dense: Pose,
    pub iterations: Vec<IterationStats>,
    pub timings: StageTimings,
    pub n_sparse: usize,
    pub sparse_inliers: usize,
    /// A dense iteration failed; `pose_dense` is the last good pose.
    pub degraded: bool,
    /// 2D–3D set the final dense pose was solved from.
    pub proxies: Vec<Proxy>,
}

impl LocResult {
    /// Dense matches of the last completed iteration.
    pub fn n_dense(&self) -> usize {
        self.iterations.last().map_or(0, |s| s.n_dense)
    }

    pub fn n_proxies(&self) -> usize {
        self.iterations.last().map_or(0, |s| s.n_proxies)
    }

    /// Same result with every duration zeroed, for comparing runs.
    pub fn without_timings(&self) -> Self {
        let mut out = self.clone();
        out.timings = StageTimings::default();
        for s in &mut out.iterations {
            s.rasterization = Duration::ZERO;
            s.matching = Duration::ZERO;
            s.clustering = Duration::ZERO;
            s.pnp = Duration::ZERO;
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DenseError {
    #[error("lifting: {0}")]
    Lift(#[from] InsufficientMatches),
    #[error("pose: {0}")]
    Pnp(#[from] PnpError),
}

/// Outcome of solving a pose from one set of dense matches.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSolve {
    pub pnp: PnPResult,
    pub proxies: Vec<Proxy>,
    pub clustering: Duration,
}

/// Condenses (or lifts every match when condensing is off) and estimates
/// the query pose from the resulting 2D–3D set.
pub fn solve_from_matches(
    matches: &[DenseMatch],
    depth: &DepthMap,
    camera: &Camera,
    render_pose: &Pose,
    config: &PipelineConfig,
) -> Result<DenseSolve, DenseError> {
    let (lifted, clustering): (CondensedMatches, Duration) = if config.condensing {
        let (c, stats) = condense(matches, depth, camera, render_pose, &config.condense_options())?;
        (c, stats.clustering_time)
    } else {
        let all: Vec<usize> = (0..matches.len()).collect();
        (lift_to_3d(matches, &all, depth, camera, render_pose)?, Duration::ZERO)
    };
    let corr: Vec<Correspondence2D3D> = lifted
        .proxies
        .iter()
        .map(|p| Correspondence2D3D::new(p.query, p.world))
        .collect();
    let pnp = ransac_pnp(&corr, camera, &config.ransac_options())?;
    Ok(DenseSolve {
        pnp,
        proxies: lifted.proxies,
        clustering,
    })
}

/// One dense iteration from `pose`: render, match, condense, solve.
/// `query_coarse` is the pooled query map, computed once per query. Also
/// returns the proxies the pose was solved from.
pub fn dense_step(
    bundle: &MapBundle,
    query: &FeatureMap,
    query_coarse: &FeatureMap,
    camera: &Camera,
    pose: &Pose,
    config: &PipelineConfig,
) -> Result<(IterationStats, Vec<Proxy>), DenseError> {
    let t = Instant::now();
    let rendered = render(&bundle.field, camera, pose, &config.render_options());
    let rasterization = t.elapsed();

    let t = Instant::now();
    let rendered_coarse = pool_coarse(&rendered.features, config.factor);
    let coarse = match_dense_coarse(query_coarse, &rendered_coarse, &config.coarse_options());
    let matches = refine_matches(query, &rendered.features, &coarse, &config.match_refine_options());
    let matching = t.elapsed();

    let solve = solve_from_matches(&matches, &rendered.depth, camera, pose, config)?;
    let stats = IterationStats {
        pose: solve.pnp.pose,
        n_dense: matches.len(),
        n_proxies: solve.proxies.len(),
        inliers: solve.pnp.inlier_count,
        rasterization,
        matching,
        clustering: solve.clustering,
        pnp: solve.pnp.time,
    };
    Ok((stats, solve.proxies))
}

/// Sparse-to-dense localization of `query`, seen through `camera`.
pub fn localize(
    bundle: &MapBundle,
    query: &FeatureMap,
    camera: &Camera,
    config: &PipelineConfig,
) -> Result<LocResult, LocError> {
    if query.dim != bundle.field.feature_dim() {
        return Err(LocError::DimensionMismatch {
            map: bundle.field.feature_dim(),
            query: query.dim,
        });
    }
    if (query.width, query.height) != (camera.width, camera.height) {
        return Err(LocError::CameraMismatch {
            camera: (camera.width, camera.height),
            query: (query.width, query.height),
        });
    }
    let field = &bundle.field;
    let start = Instant::now();
    let keypoints = detect_keypoints(query, &bundle.landmarks, field, &config.detect_options());
    let sparse = match_sparse(&keypoints, &bundle.landmarks, field, config.sparse_threshold).map_err(|e| {
        LocError::SparseStage {
            stage: "matching",
            reason: format!("{e} ({} keypoints)", keypoints.len()),
        }
    })?;
    let corr: Vec<Correspondence2D3D> = sparse
        .iter()
        .map(|m| Correspondence2D3D::new(m.pixel, field.primitive(m.landmark).position_f64()))
        .collect();
    let solved = ransac_pnp(&corr, camera, &config.ransac_options()).map_err(|e| LocError::SparseStage {
        stage: "pose",
        reason: e.to_string(),
    })?;
    let sparse_time = start.elapsed();
    debug!("sparse: {} matches, {} inliers", sparse.len(), solved.inlier_count);

    let mut timings = StageTimings {
        sparse: sparse_time,
        total_1: sparse_time,
        total_n: sparse_time,
        ..Default::default()
    };
    let mut pose = solved.pose;
    let mut iterations = Vec::with_capacity(config.dense_iterations);
    let mut degraded = false;
    let mut proxies = Vec::new();
    let mut query_coarse = None;
    for i in 0..config.dense_iterations {
        let t = Instant::now();
        let qc = query_coarse.get_or_insert_with(|| pool_coarse(query, config.factor));
        match dense_step(bundle, query, qc, camera, &pose, config) {
            Ok((stats, used)) => {
                pose = stats.pose;
                proxies = used;
                timings.rasterization += stats.rasterization;
                timings.matching += stats.matching;
                timings.clustering += stats.clustering;
                timings.pnp += stats.pnp;
                iterations.push(stats);
            }
            Err(e) => {
                warn!("dense iteration {} failed: {e}", i + 1);
                degraded = true;
            }
        }
        timings.total_n += t.elapsed();
        if i == 0 {
            timings.total_1 = timings.total_n;
        }
        if degraded {
            break;
        }
    }
    Ok(LocResult {
        pose_sparse: solved.pose,
        pose_dense: pose,
        iterations,
        timings,
        n_sparse: sparse.len(),
        sparse_inliers: solved.inlier_count,
        degraded,
        proxies,
    })
}
