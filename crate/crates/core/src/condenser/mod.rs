//! Dense-match condensing: 4D K-means over correspondence coordinates,
//! one representative per cluster, lifted to 3D through rendered depth.

use std::time::{Duration, Instant};

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::InsufficientMatches;
use crate::matcher::DenseMatch;
use crate::scene::{backproject, Camera, DepthMap, Pose};

/// Minimum lifted proxies for a pose.
pub const MIN_PROXIES: usize = 4;

/// Correspondence embedded as `(u_q/W_q, v_q/H_q, u_r/W_r, v_r/H_r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point4D {
    pub coords: [f64; 4],
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub centroids: Vec<[f64; 4]>,
    pub assignment: Vec<usize>,
    /// Sum of squared distances of points to their centroids.
    pub objective: f64,
    /// Objective after each assignment step, then after the final update.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondenseOptions {
    pub k: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for CondenseOptions {
    fn default() -> Self {
        Self {
            k: 1024,
            max_iter: 5,
            seed: 0,
        }
    }
}

/// 2D–3D correspondence produced by lifting a dense match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proxy {
    pub query: Vector2<f64>,
    pub rendered: Vector2<f64>,
    pub world: Vector3<f64>,
    pub confidence: f64,
    /// Index of the dense match this proxy was taken from.
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CondensedMatches {
    pub proxies: Vec<Proxy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CondenseStats {
    pub clustering_time: Duration,
    pub clustered: bool,
    pub selected: usize,
}

pub fn embed4d(matches: &[DenseMatch], query_dims: (usize, usize), render_dims: (usize, usize)) -> Vec<Point4D> {
    let (qw, qh) = (query_dims.0 as f64, query_dims.1 as f64);
    let (rw, rh) = (render_dims.0 as f64, render_dims.1 as f64);
    matches
        .iter()
        .enumerate()
        .map(|(i, m)| Point4D {
            coords: [m.query.x / qw, m.query.y / qh, m.rendered.x / rw, m.rendered.y / rh],
            source: i,
        })
        .collect()
}

/// Inverse of [`embed4d`]: `(query pixel, rendered pixel)`.
pub fn unembed4d(p: &Point4D, query_dims: (usize, usize), render_dims: (usize, usize)) -> (Vector2<f64>, Vector2<f64>) {
    (
        Vector2::new(p.coords[0] * query_dims.0 as f64, p.coords[1] * query_dims.1 as f64),
        Vector2::new(p.coords[2] * render_dims.0 as f64, p.coords[3] * render_dims.1 as f64),
    )
}

#[inline]
fn dist2(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + d[3] * d[3]
}

const POTENTIAL_CHUNK: usize = 2048;

/// Greedy k-means++ seeding: first center uniform; each further center is
/// the best of `2 + ln k` candidates drawn proportionally to squared
/// distance from the nearest chosen center.
pub fn kmeans_pp_init(points: &[[f64; 4]], k: usize, seed: u64) -> Vec<[f64; 4]> {
    let n = points.len();
    let k = k.min(n);
    if k == 0 {
        return Vec::new();
    }
    let trials = 2 + (k as f64).ln() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    centers.push(points[first]);
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &points[first])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            // every remaining point coincides with a center
            let pick = (0..n).find(|i| !chosen[*i]).expect("k <= n");
            chosen[pick] = true;
            centers.push(points[pick]);
            continue;
        }
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for d in &d2 {
            acc += d;
            cumulative.push(acc);
        }
        let candidates: Vec<usize> = (0..trials)
            .map(|_| {
                let target = rng.gen::<f64>() * acc;
                let i = cumulative.partition_point(|c| *c <= target).min(n - 1);
                // never land on a zero-weight point
                (i..n).chain((0..i).rev()).find(|j| d2[*j] > 0.0).expect("positive total")
            })
            .collect();
        let potential = |c: usize| -> f64 {
            let q = points[c];
            // fixed chunking keeps the sum independent of thread scheduling
            let partial: Vec<f64> = points
                .par_chunks(POTENTIAL_CHUNK)
                .zip(d2.par_chunks(POTENTIAL_CHUNK))
                .map(|(ps, ds)| ps.iter().zip(ds).map(|(p, d)| d.min(dist2(p, &q))).sum::<f64>())
                .collect();
            partial.iter().sum()
        };
        let mut best = (f64::INFINITY, usize::MAX);
        for c in candidates {
            let pot = potential(c);
            if pot < best.0 {
                best = (pot, c);
            }
        }
        let pick = best.1;
        chosen[pick] = true;
        centers.push(points[pick]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &points[pick]));
        }
    }
    centers
}

fn assign(points: &[[f64; 4]], centroids: &[[f64; 4]]) -> (Vec<usize>, f64) {
    let nearest = |p: &[f64; 4]| {
        let mut best = (f64::INFINITY, 0usize);
        for (c, q) in centroids.iter().enumerate() {
            let d = dist2(p, q);
            if d < best.0 {
                best = (d, c);
            }
        }
        best
    };
    let pairs: Vec<(f64, usize)> = if points.len() * centroids.len() > 1 << 14 {
        points.par_iter().map(nearest).collect()
    } else {
        points.iter().map(nearest).collect()
    };
    let objective = pairs.iter().map(|p| p.0).sum();
    (pairs.into_iter().map(|p| p.1).collect(), objective)
}

/// Member means; empty clusters take the point farthest from its own
/// centroid (ties to the lowest index), each such point used once.
fn update(points: &[[f64; 4]], assignment: &[usize], centroids: &[[f64; 4]]) -> Vec<[f64; 4]> {
    let k = centroids.len();
    let mut sums = vec![[0.0f64; 4]; k];
    let mut counts = vec![0usize; k];
    for (p, a) in points.iter().zip(assignment) {
        counts[*a] += 1;
        for d in 0..4 {
            sums[*a][d] += p[d];
        }
    }
    let mut out: Vec<[f64; 4]> = sums
        .iter()
        .zip(&counts)
        .zip(centroids)
        .map(|((s, n), old)| if *n > 0 { s.map(|v| v / *n as f64) } else { *old })
        .collect();
    if counts.contains(&0) {
        let mut far: Vec<(f64, usize)> = points
            .iter()
            .zip(assignment)
            .enumerate()
            .map(|(i, (p, a))| (dist2(p, &centroids[*a]), i))
            .collect();
        far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut next = far.into_iter();
        for c in 0..k {
            if counts[c] == 0 {
                if let Some((_, i)) = next.next() {
                    out[c] = points[i];
                }
            }
        }
    }
    out
}

/// Lloyd iterations from the given centroids. Stops when assignments no
/// longer change or after `max_iter` updates; centroids are finally reset
/// to the means of their members.
pub fn kmeans_with_init(points: &[[f64; 4]], init: Vec<[f64; 4]>, max_iter: usize) -> ClusterResult {
    let mut centroids = init;
    let (mut assignment, obj) = assign(points, &centroids);
    let mut trace = vec![obj];
    let mut iterations = 0;
    while iterations < max_iter {
        let next = update(points, &assignment, &centroids);
        let (next_assignment, obj) = assign(points, &next);
        iterations += 1;
        trace.push(obj);
        centroids = next;
        let converged = next_assignment == assignment;
        assignment = next_assignment;
        if converged {
            break;
        }
    }
    // means of the final members; clusters left empty keep their centroid
    let mut sums = vec![[0.0f64; 4]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, a) in points.iter().zip(&assignment) {
        counts[*a] += 1;
        for d in 0..4 {
            sums[*a][d] += p[d];
        }
    }
    for c in 0..centroids.len() {
        if counts[c] > 0 {
            centroids[c] = sums[c].map(|v| v / counts[c] as f64);
        }
    }
    let objective = points.iter().zip(&assignment).map(|(p, a)| dist2(p, &centroids[*a])).sum();
    trace.push(objective);
    ClusterResult {
        centroids,
        assignment,
        objective,
        objective_trace: trace,
        iterations,
    }
}

/// K-means with k-means++ seeding. `k` is clamped to the number of points.
pub fn kmeans(points: &[Point4D], k: usize, max_iter: usize, seed: u64) -> ClusterResult {
    let coords: Vec<[f64; 4]> = points.iter().map(|p| p.coords).collect();
    let init = kmeans_pp_init(&coords, k.max(1), seed);
    kmeans_with_init(&coords, init, max_iter)
}

/// Per non-empty cluster, in cluster order, the source index of the member
/// nearest its centroid. Ties go to the lowest source index.
pub fn select_proxies(points: &[Point4D], clusters: &ClusterResult) -> Vec<usize> {
    let mut best = vec![(f64::INFINITY, usize::MAX); clusters.centroids.len()];
    for (p, a) in points.iter().zip(&clusters.assignment) {
        let d = dist2(&p.coords, &clusters.centroids[*a]);
        let b = &mut best[*a];
        if d < b.0 || (d == b.0 && p.source < b.1) {
            *b = (d, p.source);
        }
    }
    best.into_iter().filter(|b| b.1 != usize::MAX).map(|b| b.1).collect()
}

/// Back-projects each selected match through the depth at its rounded
/// rendered pixel. Matches on invalid depth are dropped.
pub fn lift_to_3d(
    matches: &[DenseMatch],
    selected: &[usize],
    depth: &DepthMap,
    camera: &Camera,
    render_pose: &Pose,
) -> Result<CondensedMatches, InsufficientMatches> {
    let proxies: Vec<Proxy> = selected
        .iter()
        .filter_map(|&i| {
            let m = &matches[i];
            let d = depth.get(m.rendered.x.round() as i64, m.rendered.y.round() as i64)?;
            let world = backproject(camera, render_pose, &m.rendered, d as f64).ok()?;
            Some(Proxy {
                query: m.query,
                rendered: m.rendered,
                world,
                confidence: m.confidence,
                source: i,
            })
        })
        .collect();
    if proxies.len() < MIN_PROXIES {
        return Err(InsufficientMatches {
            found: proxies.len(),
            required: MIN_PROXIES,
        });
    }
    Ok(CondensedMatches { proxies })
}

/// Embeds, clusters, picks one proxy per cluster and lifts it. With at most
/// `k` matches every match is lifted and clustering is skipped.
pub fn condense(
    matches: &[DenseMatch],
    depth: &DepthMap,
    camera: &Camera,
    render_pose: &Pose,
    opts: &CondenseOptions,
) -> Result<(CondensedMatches, CondenseStats), InsufficientMatches> {
    let dims = (camera.width, camera.height);
    let start = Instant::now();
    let (selected, clustered) = if matches.len() <= opts.k {
        ((0..matches.len()).collect::<Vec<_>>(), false)
    } else {
        let points = embed4d(matches, dims, dims);
        let clusters = kmeans(&points, opts.k, opts.max_iter, opts.seed);
        (select_proxies(&points, &clusters), true)
    };
    let clustering_time = if clustered { start.elapsed() } else { Duration::ZERO };
    let stats = CondenseStats {
        clustering_time,
        clustered,
        selected: selected.len(),
    };
    lift_to_3d(matches, &selected, depth, camera, render_pose).map(|c| (c, stats))
}
