use std::fmt::Write as _;
use std::io::{self, Write};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{build_map, localize, LocResult, MapBundle, PipelineConfig, StageTimings};
use crate::field::{gen_synthetic_scene, sample_view_pose, SyntheticSceneSpec};
use crate::scene::{pose_error, storage_report, FeatureMap, Layout, Pose, StorageReport};

pub const CSV_HEADER: &str =
    "query_id,trans_err,rot_err_deg,n_sparse,n_dense,n_proxies,rast_ms,clus_ms,pnp_ms,total1_ms,totalN_ms,success";

/// Translation thresholds as fractions of the scene extent, paired with
/// rotation thresholds in degrees. 1% of extent stands in for 5 cm.
pub const COARSE_THRESHOLD: (f64, f64) = (0.01, 5.0);
pub const FINE_THRESHOLD: (f64, f64) = (0.004, 2.0);

#[derive(Debug, Clone, PartialEq)]
pub struct QueryCase {
    pub id: usize,
    pub pose: Pose,
    pub query: FeatureMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub id: usize,
    pub ground_truth: Pose,
    pub result: Result<LocResult, String>,
}

impl QueryRecord {
    pub fn success(&self) -> bool {
        self.result.is_ok()
    }

    /// `(translation, rotation°)` of the final pose; NaN on failure.
    pub fn error(&self) -> (f64, f64) {
        match &self.result {
            Ok(r) => pose_error(&r.pose_dense, &self.ground_truth),
            Err(_) => (f64::NAN, f64::NAN),
        }
    }

    pub fn sparse_error(&self) -> (f64, f64) {
        match &self.result {
            Ok(r) => pose_error(&r.pose_sparse, &self.ground_truth),
            Err(_) => (f64::NAN, f64::NAN),
        }
    }

    /// Error after each completed dense iteration.
    pub fn iteration_errors(&self) -> Vec<(f64, f64)> {
        match &self.result {
            Ok(r) => r.iterations.iter().map(|s| pose_error(&s.pose, &self.ground_truth)).collect(),
            Err(_) => Vec::new(),
        }
    }

    fn within(&self, extent: f64, (t, r): (f64, f64)) -> bool {
        let (te, re) = self.error();
        te <= t * extent && re <= r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scene_extent: f64,
    pub records: Vec<QueryRecord>,
    pub median_trans: f64,
    pub median_rot: f64,
    /// Fraction of all queries within [`COARSE_THRESHOLD`]; failures count
    /// as misses.
    pub accuracy_coarse: f64,
    pub accuracy_fine: f64,
    pub storage_decoupled: StorageReport,
    pub storage_coupled: StorageReport,
}

/// Median of finite values; NaN when there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

impl RunReport {
    pub fn new(records: Vec<QueryRecord>, bundle: &MapBundle, scene_extent: f64) -> Self {
        let n = records.len().max(1) as f64;
        let acc = |th| records.iter().filter(|r| r.within(scene_extent, th)).count() as f64 / n;
        let field = &bundle.field;
        Self {
            scene_extent,
            median_trans: median(records.iter().map(|r| r.error().0)),
            median_rot: median(records.iter().map(|r| r.error().1)),
            accuracy_coarse: acc(COARSE_THRESHOLD),
            accuracy_fine: acc(FINE_THRESHOLD),
            storage_decoupled: StorageReport::for_counts(field.len() as u64, field.feature_dim(), Layout::Decoupled),
            storage_coupled: StorageReport::for_counts(field.len() as u64, field.feature_dim(), Layout::Coupled),
            records,
        }
    }

    pub fn successes(&self) -> usize {
        self.records.iter().filter(|r| r.success()).count()
    }

    /// Mean of one timing over successful queries, in milliseconds.
    pub fn mean_ms(&self, pick: impl Fn(&StageTimings) -> Duration) -> f64 {
        let v: Vec<f64> = self.records.iter().filter_map(|r| r.result.as_ref().ok()).map(|r| ms(pick(&r.timings))).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    pub fn without_timings(&self) -> Self {
        let mut out = self.clone();
        for r in &mut out.records {
            if let Ok(res) = &mut r.result {
                *res = res.without_timings();
            }
        }
        out
    }

    pub fn write_csv(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.records {
            let (te, re) = r.error();
            match &r.result {
                Ok(res) => {
                    let t = &res.timings;
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},1",
                        r.id,
                        te,
                        re,
                        res.n_sparse,
                        res.n_dense(),
                        res.n_proxies(),
                        ms(t.rasterization),
                        ms(t.clustering),
                        ms(t.pnp),
                        ms(t.total_1),
                        ms(t.total_n)
                    )?;
                }
                Err(_) => writeln!(out, "{},NaN,NaN,0,0,0,0,0,0,0,0,0", r.id)?,
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let e = self.scene_extent;
        let _ = writeln!(s, "queries: {} ({} localized)", self.records.len(), self.successes());
        let _ = writeln!(
            s,
            "thresholds: 5 cm is read as {} scene units (1% of extent {e}), 2 cm as {}",
            COARSE_THRESHOLD.0 * e,
            FINE_THRESHOLD.0 * e
        );
        let _ = writeln!(s, "median error: {:.6} units, {:.4} deg (localized queries only)", self.median_trans, self.median_rot);
        let _ = writeln!(
            s,
            "accuracy: {:.1}% at (1% extent, 5 deg), {:.1}% at (0.4% extent, 2 deg); failures count as misses",
            100.0 * self.accuracy_coarse,
            100.0 * self.accuracy_fine
        );
        let _ = writeln!(
            s,
            "mean ms: rast {:.2} clus {:.2} pnp {:.2} total1 {:.2} totalN {:.2}",
            self.mean_ms(|t| t.rasterization),
            self.mean_ms(|t| t.clustering),
            self.mean_ms(|t| t.pnp),
            self.mean_ms(|t| t.total_1),
            self.mean_ms(|t| t.total_n)
        );
        let _ = writeln!(
            s,
            "storage: decoupled {:.3} MB, coupled {:.3} MB ({} primitives)",
            self.storage_decoupled.megabytes(),
            self.storage_coupled.megabytes(),
            self.storage_decoupled.primitive_count
        );
        s
    }
}

/// Random in-view ground-truth poses with noisy query maps. Deterministic in
/// `config.query_seed`.
pub fn gen_queries(bundle: &MapBundle, scene_extent: f64, n: usize, config: &PipelineConfig) -> Vec<QueryCase> {
    let camera = config.camera();
    let mut rng = ChaCha8Rng::seed_from_u64(config.query_seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let noise_seed: u64 = rng.gen();
        let Some((pose, clean)) = sample_view_pose(
            &bundle.field,
            &camera,
            scene_extent,
            (config.distance_min, config.distance_max),
            config.min_valid_fraction,
            &mut rng,
            &config.render_options(),
        ) else {
            continue;
        };
        let Ok(query) = crate::field::add_noise(clean, config.query_noise, noise_seed) else {
            continue;
        };
        out.push(QueryCase {
            id: out.len(),
            pose,
            query,
        });
    }
    out
}

fn median_duration(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

/// Localizes every case in parallel for accuracy, then re-runs each one
/// sequentially `timing_repeats` times and keeps the median of each timing.
pub fn run_cases(bundle: &MapBundle, cases: &[QueryCase], scene_extent: f64, config: &PipelineConfig) -> RunReport {
    let camera = config.camera();
    let mut records: Vec<QueryRecord> = cases
        .par_iter()
        .map(|c| QueryRecord {
            id: c.id,
            ground_truth: c.pose,
            result: localize(bundle, &c.query, &camera, config).map_err(|e| e.to_string()),
        })
        .collect();
    if config.timing_repeats > 0 {
        for (rec, case) in records.iter_mut().zip(cases) {
            let Ok(res) = &mut rec.result else { continue };
            let runs: Vec<LocResult> = (0..config.timing_repeats)
                .filter_map(|_| localize(bundle, &case.query, &camera, config).ok())
                .collect();
            if runs.is_empty() {
                continue;
            }
            let pick = |f: fn(&StageTimings) -> Duration| median_duration(runs.iter().map(|r| f(&r.timings)).collect());
            res.timings = StageTimings {
                sparse: pick(|t| t.sparse),
                rasterization: pick(|t| t.rasterization),
                matching: pick(|t| t.matching),
                clustering: pick(|t| t.clustering),
                pnp: pick(|t| t.pnp),
                total_1: pick(|t| t.total_1),
                total_n: pick(|t| t.total_n),
            };
        }
    }
    RunReport::new(records, bundle, scene_extent)
}

/// Generates the scene, samples landmarks, draws `n_queries` queries and
/// localizes them.
pub fn run_benchmark(spec: &SyntheticSceneSpec, n_queries: usize, config: &PipelineConfig) -> RunReport {
    let (field, _) = gen_synthetic_scene(spec);
    let bundle = build_map(field, &[], None, config).expect("no fitting requested");
    let cases = gen_queries(&bundle, spec.scene_extent, n_queries, config);
    run_cases(&bundle, &cases, spec.scene_extent, config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub condensing: bool,
    pub layout: Layout,
    pub storage: StorageReport,
    pub median_trans: f64,
    pub median_rot: f64,
    pub accuracy_coarse: f64,
    pub mean_pnp_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub with_condensing: RunReport,
    pub without_condensing: RunReport,
    pub cells: Vec<AblationCell>,
    /// Mean dense PnP time without condensing over mean time with it,
    /// over queries localized in both runs.
    pub pnp_speedup: f64,
    /// Decoupled over Coupled bytes at the same primitive count.
    pub storage_ratio: f64,
    /// Relative change of the median errors when condensing is on.
    pub trans_delta: f64,
    pub rot_delta: f64,
    pub accuracy_delta: f64,
}

impl AblationReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "condensing,layout,storage_mb,median_trans,median_rot_deg,acc_1pct_5deg,pnp_ms");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{},{},{:.3},{:.6},{:.4},{:.3},{:.3}",
                if c.condensing { "on" } else { "off" },
                c.layout.name(),
                c.storage.megabytes(),
                c.median_trans,
                c.median_rot,
                c.accuracy_coarse,
                c.mean_pnp_ms
            );
        }
        let _ = writeln!(s, "pnp speedup (off/on): {:.2}x", self.pnp_speedup);
        let _ = writeln!(s, "storage ratio (decoupled/coupled): {:.4}", self.storage_ratio);
        let _ = writeln!(
            s,
            "median error change with condensing: trans {:+.2}%, rot {:+.2}%; accuracy change {:+.1} points",
            100.0 * self.trans_delta,
            100.0 * self.rot_delta,
            100.0 * self.accuracy_delta
        );
        s
    }
}

/// Paired runs with condensing on and off over the same queries, crossed
/// with storage accounting under both layouts.
pub fn ablate(spec: &SyntheticSceneSpec, n_queries: usize, config: &PipelineConfig) -> AblationReport {
    let (field, _) = gen_synthetic_scene(spec);
    let bundle = build_map(field, &[], None, config).expect("no fitting requested");
    let cases = gen_queries(&bundle, spec.scene_extent, n_queries, config);
    let on = run_cases(&bundle, &cases, spec.scene_extent, &PipelineConfig { condensing: true, ..config.clone() });
    let off = run_cases(&bundle, &cases, spec.scene_extent, &PipelineConfig { condensing: false, ..config.clone() });

    let decoupled = storage_report(&bundle.field);
    let coupled = storage_report(&bundle.field.to_coupled());
    let mut cells = Vec::new();
    for (report, condensing) in [(&on, true), (&off, false)] {
        for storage in [decoupled, coupled] {
            cells.push(AblationCell {
                condensing,
                layout: storage.layout,
                storage,
                median_trans: report.median_trans,
                median_rot: report.median_rot,
                accuracy_coarse: report.accuracy_coarse,
                mean_pnp_ms: report.mean_ms(|t| t.pnp),
            });
        }
    }
    let paired: Vec<(f64, f64)> = on
        .records
        .iter()
        .zip(&off.records)
        .filter_map(|(a, b)| Some((ms(a.result.as_ref().ok()?.timings.pnp), ms(b.result.as_ref().ok()?.timings.pnp))))
        .collect();
    let (sum_on, sum_off) = paired.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let rel = |a: f64, b: f64| (a - b) / b;
    AblationReport {
        pnp_speedup: sum_off / sum_on,
        storage_ratio: decoupled.total_bytes as f64 / coupled.total_bytes as f64,
        trans_delta: rel(on.median_trans, off.median_trans),
        rot_delta: rel(on.median_rot, off.median_rot),
        accuracy_delta: on.accuracy_coarse - off.accuracy_coarse,
        cells,
        with_condensing: on,
        without_condensing: off,
    }
}
