use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gsloc_bench::{correspondences, points_4d, scene_and_view, unit_features};
use gsloc_core::condenser::{kmeans, select_proxies};
use gsloc_core::matcher::{dual_softmax_mnn, CoarseOptions};
use gsloc_core::pnp::{ransac_pnp, RansacOptions};
use gsloc_core::render::{render, RenderOptions};
use gsloc_core::scene::Camera;

fn rasterization(c: &mut Criterion) {
    let camera = Camera::centered(320, 240, 1.0);
    let (field, pose) = scene_and_view(8000, &camera);
    let mut g = c.benchmark_group("render");
    for parallel in [false, true] {
        let opts = RenderOptions { parallel, ..Default::default() };
        let name = if parallel { "parallel" } else { "serial" };
        g.bench_function(BenchmarkId::new("320x240", name), |b| b.iter(|| render(&field, &camera, &pose, &opts)));
    }
    g.finish();
}

fn coarse_matching(c: &mut Criterion) {
    let dim = 16;
    let mut g = c.benchmark_group("dual_softmax_mnn");
    for cells in [300, 1200] {
        let q = unit_features(cells, dim, 1);
        let r = unit_features(cells, dim, 2);
        let qs: Vec<&[f32]> = q.chunks(dim).collect();
        let rs: Vec<&[f32]> = r.chunks(dim).collect();
        g.bench_with_input(BenchmarkId::from_parameter(cells), &cells, |b, _| {
            b.iter(|| dual_softmax_mnn(&qs, &rs, dim, &CoarseOptions::default()))
        });
    }
    g.finish();
}

fn condensing(c: &mut Criterion) {
    let mut g = c.benchmark_group("kmeans_k1024");
    g.sample_size(10);
    for n in [5000, 20000] {
        let points = points_4d(n, 3);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let clusters = kmeans(&points, 1024, 5, 0);
                select_proxies(&points, &clusters)
            })
        });
    }
    g.finish();
}

fn robust_pose(c: &mut Criterion) {
    let camera = Camera::centered(320, 240, 1.0);
    let mut g = c.benchmark_group("ransac_pnp");
    g.sample_size(10);
    for n in [1024, 20000] {
        let corr = correspondences(n, 0.2, &camera, 4);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| ransac_pnp(&corr, &camera, &RansacOptions::default()).expect("pose found"))
        });
    }
    g.finish();
}

criterion_group!(benches, rasterization, coarse_matching, condensing, robust_pose);
criterion_main!(benches);
