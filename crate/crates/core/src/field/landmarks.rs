use std::collections::HashMap;

use nalgebra::Vector3;

use crate::scene::{dot, GaussianField};

/// Indices of the anchor primitives used for sparse matching.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LandmarkSet {
    pub indices: Vec<usize>,
}

impl LandmarkSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn positions(&self, field: &GaussianField) -> Vec<Vector3<f64>> {
        self.indices.iter().map(|i| field.primitive(*i).position_f64()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkOptions {
    pub anchor_count: usize,
    pub neighbors: usize,
    /// Fraction of lowest-scoring primitives dropped before spatial sampling.
    pub discard_fraction: f64,
}

impl Default for LandmarkOptions {
    fn default() -> Self {
        Self {
            anchor_count: 16384,
            neighbors: 6,
            discard_fraction: 0.25,
        }
    }
}

/// Uniform hash grid over point positions for k-nearest-neighbor queries.
pub(crate) struct PointGrid<'a> {
    points: &'a [Vector3<f64>],
    origin: Vector3<f64>,
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> PointGrid<'a> {
    pub(crate) fn new(points: &'a [Vector3<f64>], per_cell: f64) -> Self {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let span = if points.is_empty() { Vector3::repeat(1.0) } else { hi - lo };
        let volume = span.iter().map(|s| s.max(1e-9)).product::<f64>();
        let cell = (volume * per_cell / points.len().max(1) as f64).cbrt().max(1e-9);
        let mut grid = Self {
            points,
            origin: if points.is_empty() { Vector3::zeros() } else { lo },
            cell,
            cells: HashMap::new(),
        };
        for (i, p) in points.iter().enumerate() {
            let key = grid.key(p);
            grid.cells.entry(key).or_default().push(i);
        }
        grid
    }

    fn key(&self, p: &Vector3<f64>) -> [i64; 3] {
        let r = (p - self.origin) / self.cell;
        [r.x.floor() as i64, r.y.floor() as i64, r.z.floor() as i64]
    }

    /// The `k` nearest points to point `query`, excluding itself, ordered by
    /// (distance, index).
    pub(crate) fn nearest(&self, query: usize, k: usize) -> Vec<usize> {
        let q = self.points[query];
        let c = self.key(&q);
        let mut found: Vec<(f64, usize)> = Vec::new();
        let mut ring = 0i64;
        loop {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(list) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                            for &j in list {
                                if j != query {
                                    found.push(((self.points[j] - q).norm_squared(), j));
                                }
                            }
                        }
                    }
                }
            }
            found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            // everything within `ring * cell` of the query has been seen
            let covered = ring as f64 * self.cell;
            let done = found.len() >= k && found[k - 1].0.sqrt() <= covered;
            if done || found.len() + 1 >= self.points.len() {
                found.truncate(k);
                return found.into_iter().map(|(_, j)| j).collect();
            }
            ring += 1;
        }
    }
}

/// Distinctiveness score per primitive: opacity times one minus the mean
/// cosine similarity to its `neighbors` nearest primitives.
pub fn landmark_scores(field: &GaussianField, neighbors: usize) -> Vec<f64> {
    let positions: Vec<Vector3<f64>> = field.primitives().iter().map(|p| p.position_f64()).collect();
    let grid = PointGrid::new(&positions, 2.0);
    (0..field.len())
        .map(|i| {
            let p = field.primitive(i);
            let nn = grid.nearest(i, neighbors);
            if nn.is_empty() {
                return p.opacity as f64;
            }
            let mean = nn.iter().map(|j| dot(&p.feature, &field.primitive(*j).feature) as f64).sum::<f64>() / nn.len() as f64;
            p.opacity as f64 * (1.0 - mean)
        })
        .collect()
}

/// Drops the least distinctive primitives, then spreads anchors over the
/// remainder by farthest-point sampling starting from the most distinctive.
pub fn sample_landmarks(field: &GaussianField, opts: &LandmarkOptions) -> LandmarkSet {
    if field.is_empty() || opts.anchor_count == 0 {
        return LandmarkSet::default();
    }
    let scores = landmark_scores(field, opts.neighbors);
    let mut ranked: Vec<usize> = (0..field.len()).collect();
    ranked.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]).then(a.cmp(b)));
    let discard = (field.len() as f64 * opts.discard_fraction).floor() as usize;
    let mut kept: Vec<usize> = ranked[discard.min(field.len() - 1)..].to_vec();
    kept.sort_unstable();

    let positions: Vec<Vector3<f64>> = kept.iter().map(|i| field.primitive(*i).position_f64()).collect();
    let target = opts.anchor_count.min(kept.len());
    let first = (0..kept.len())
        .max_by(|a, b| scores[kept[*a]].total_cmp(&scores[kept[*b]]).then(b.cmp(a)))
        .expect("non-empty");
    let mut dist = vec![f64::INFINITY; kept.len()];
    let mut chosen = Vec::with_capacity(target);
    let mut next = first;
    while chosen.len() < target {
        chosen.push(kept[next]);
        dist[next] = f64::NEG_INFINITY;
        let c = positions[next];
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (j, p) in positions.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < dist[j] {
                dist[j] = d;
            }
            if dist[j] > best.0 {
                best = (dist[j], j);
            }
        }
        next = best.1;
    }
    LandmarkSet { indices: chosen }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{gen_synthetic_scene, SyntheticSceneSpec};
    use crate::scene::GaussianPrimitive;
    use rand::seq::index::sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_field(n: usize, seed: u64) -> GaussianField {
        gen_synthetic_scene(&SyntheticSceneSpec {
            primitive_count: n,
            rng_seed: seed,
            ..Default::default()
        })
        .0
    }

    fn cv_of_nearest(points: &[Vector3<f64>]) -> f64 {
        let d: Vec<f64> = (0..points.len())
            .map(|i| {
                (0..points.len())
                    .filter(|j| *j != i)
                    .map(|j| (points[i] - points[j]).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d.len() as f64;
        var.sqrt() / mean
    }

    #[test]
    fn grid_knn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vector3<f64>> = (0..500)
            .map(|_| Vector3::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.1), rng.gen_range(0.0..3.0)))
            .collect();
        let grid = PointGrid::new(&pts, 2.0);
        for i in (0..500).step_by(7) {
            let mut brute: Vec<(f64, usize)> = (0..500).filter(|j| *j != i).map(|j| ((pts[j] - pts[i]).norm_squared(), j)).collect();
            brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let expect: Vec<usize> = brute[..6].iter().map(|x| x.1).collect();
            assert_eq!(grid.nearest(i, 6), expect);
        }
    }

    #[test]
    fn undersized_field_keeps_all_survivors() {
        let field = uniform_field(10, 1);
        let set = sample_landmarks(&field, &LandmarkOptions::default());
        assert_eq!(set.len(), 10 - 2);
        let scores = landmark_scores(&field, 6);
        let mut order: Vec<usize> = (0..10).collect();
        order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]).then(a.cmp(b)));
        for dropped in &order[..2] {
            assert!(!set.indices.contains(dropped));
        }
    }

    #[test]
    fn indices_unique_and_bounded() {
        let field = uniform_field(2000, 2);
        let set = sample_landmarks(&field, &LandmarkOptions { anchor_count: 700, ..Default::default() });
        assert_eq!(set.len(), 700);
        let mut s = set.indices.clone();
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 700);
        assert!(s.iter().all(|i| *i < 2000));
    }

    #[test]
    fn deterministic() {
        let field = uniform_field(3000, 5);
        let opts = LandmarkOptions { anchor_count: 300, ..Default::default() };
        assert_eq!(sample_landmarks(&field, &opts), sample_landmarks(&field, &opts));
    }

    #[test]
    fn anchors_are_evener_than_random_subsets() {
        let field = uniform_field(10_000, 7);
        let set = sample_landmarks(&field, &LandmarkOptions { anchor_count: 1024, ..Default::default() });
        let fps_cv = cv_of_nearest(&set.positions(&field));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 5;
        let random_cv = (0..trials)
            .map(|_| {
                let pick = sample(&mut rng, field.len(), 1024);
                let pts: Vec<_> = pick.iter().map(|i| field.primitive(i).position_f64()).collect();
                cv_of_nearest(&pts)
            })
            .sum::<f64>()
            / trials as f64;
        assert!(fps_cv < random_cv, "{fps_cv} vs {random_cv}");
    }

    #[test]
    fn every_octant_is_covered() {
        for seed in 0..3 {
            let field = uniform_field(4000, seed);
            let set = sample_landmarks(&field, &LandmarkOptions { anchor_count: 256, ..Default::default() });
            let (lo, hi) = field.bounds().unwrap();
            let mid = (lo + hi) / 2.0;
            let mut seen = [false; 8];
            for p in set.positions(&field) {
                let o = (p.x > mid.x) as usize | ((p.y > mid.y) as usize) << 1 | ((p.z > mid.z) as usize) << 2;
                seen[o] = true;
            }
            assert!(seen.iter().all(|s| *s), "seed {seed}");
        }
    }

    #[test]
    fn duplicate_is_picked_last() {
        let mut field = uniform_field(60, 3);
        let mut prims = field.primitives().to_vec();
        let dup = GaussianPrimitive { ..prims[0].clone() };
        prims.push(dup);
        field = GaussianField::new(field.feature_dim(), prims).unwrap();
        let opts = LandmarkOptions { anchor_count: 1000, discard_fraction: 0.0, ..Default::default() };
        let set = sample_landmarks(&field, &opts);
        let pos_a = set.indices.iter().position(|i| *i == 0).unwrap();
        let pos_b = set.indices.iter().position(|i| *i == 60).unwrap();
        assert_eq!(pos_a.max(pos_b), set.len() - 1);
    }
}
