use super::*;
use crate::error::{ConfigError, FormatError, LocError};
use crate::field::{gen_query, gen_synthetic_scene, sample_view_pose, SyntheticSceneSpec};
use crate::scene::{pose_error, Layout, Pose};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config() -> PipelineConfig {
    PipelineConfig {
        width: 160,
        height: 120,
        anchor_count: 4096,
        dense_iterations: 2,
        timing_repeats: 0,
        ..Default::default()
    }
}

fn small_spec() -> SyntheticSceneSpec {
    SyntheticSceneSpec {
        primitive_count: 4000,
        max_frequency: 6.0,
        rng_seed: 11,
        ..Default::default()
    }
}

fn small_bundle(config: &PipelineConfig) -> MapBundle {
    let (field, _) = gen_synthetic_scene(&small_spec());
    build_map(field, &[], None, config).unwrap()
}

fn view(bundle: &MapBundle, config: &PipelineConfig, seed: u64, noise: f64) -> (Pose, crate::scene::FeatureMap) {
    let camera = config.camera();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pose, _) =
        sample_view_pose(&bundle.field, &camera, 1.0, (1.0, 2.0), 0.3, &mut rng, &config.render_options()).unwrap();
    let query = gen_query(&bundle.field, &camera, &pose, noise, seed, &config.render_options()).unwrap();
    (pose, query)
}

#[test]
fn config_text_round_trip() {
    let mut c = PipelineConfig::default();
    c.temperature = 0.037;
    c.kernel = crate::pnp::KernelKind::Cauchy;
    c.layout = Layout::Coupled;
    c.condensing = false;
    c.seed = 99;
    assert_eq!(PipelineConfig::from_text(&c.to_text()).unwrap(), c);
    assert_eq!(PipelineConfig::from_text("").unwrap(), PipelineConfig::default());
}

#[test]
fn config_parsing_rules() {
    let c = PipelineConfig::from_text("# comment\n\nk = 64   # trailing\nprofile = outdoor\n").unwrap();
    assert_eq!(c.k, 64);
    assert_eq!(c.dense_iterations, 1);
    let c = PipelineConfig::from_text("profile = outdoor\ndense_iterations = 3").unwrap();
    assert_eq!(c.dense_iterations, 3, "later keys override");
    assert_eq!(PipelineConfig::from_text("dense_iterations = 0").unwrap().dense_iterations, 0);

    assert!(matches!(PipelineConfig::from_text("k = 4\nnonsense"), Err(ConfigError::Syntax { line: 2, .. })));
    assert!(matches!(PipelineConfig::from_text("bogus = 1"), Err(ConfigError::UnknownKey(k)) if k == "bogus"));
    assert!(matches!(PipelineConfig::from_text("k = -3"), Err(ConfigError::InvalidValue { .. })));
    assert!(matches!(PipelineConfig::from_text("k = 0"), Err(ConfigError::InvalidValue { key, .. }) if key == "k"));
    assert!(matches!(PipelineConfig::from_text("kernel = tukey"), Err(ConfigError::InvalidValue { .. })));
    assert!(matches!(PipelineConfig::from_text("confidence = 1"), Err(ConfigError::InvalidValue { .. })));
}

#[test]
fn scene_spec_round_trip() {
    let s = SyntheticSceneSpec {
        primitive_count: 123,
        feature_dim: 8,
        scene_extent: 2.5,
        fourier_components: 7,
        rng_seed: 42,
        max_frequency: 3.5,
        scale_range: (0.02, 0.04),
        opacity_range: (0.3, 0.9),
    };
    assert_eq!(parse_scene_spec(&scene_spec_to_text(&s)).unwrap(), s);
    assert!(matches!(parse_scene_spec("feature_dim = 0"), Err(ConfigError::InvalidValue { .. })));
    assert!(matches!(parse_scene_spec("colour = red"), Err(ConfigError::UnknownKey(_))));
}

#[test]
fn bundle_round_trip_and_corruption() {
    let config = small_config();
    let bundle = small_bundle(&config);
    assert!(!bundle.landmarks.is_empty());
    assert!(bundle.landmarks.indices.iter().all(|i| *i < bundle.field.len()));

    let bytes = bundle.encode();
    let back = MapBundle::decode(&bytes).unwrap();
    assert_eq!(back, bundle);
    assert_eq!(back.encode(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.llmb");
    bundle.save(&path).unwrap();
    assert_eq!(MapBundle::load(&path).unwrap(), bundle);

    let mut bad = bytes.clone();
    let last_config_byte = bad.len() - 5;
    bad[last_config_byte] ^= 1;
    assert!(matches!(MapBundle::decode(&bad), Err(FormatError::Checksum { .. })));
    assert!(matches!(MapBundle::decode(&bytes[..bytes.len() - 2]), Err(FormatError::Truncated { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(MapBundle::decode(&bad), Err(FormatError::BadMagic { .. })));
}

#[test]
fn bundle_rejects_out_of_range_landmark() {
    let config = small_config();
    let mut bundle = small_bundle(&config);
    bundle.landmarks.indices.push(bundle.field.len());
    assert!(matches!(
        MapBundle::decode(&bundle.encode()),
        Err(FormatError::BadField { field: "landmark", .. })
    ));
}

#[test]
fn zero_dense_iterations_keep_sparse_pose() {
    let config = PipelineConfig {
        dense_iterations: 0,
        ..small_config()
    };
    let bundle = small_bundle(&config);
    let (_, query) = view(&bundle, &config, 3, 0.05);
    let r = localize(&bundle, &query, &config.camera(), &config).unwrap();
    assert_eq!(r.pose_dense, r.pose_sparse);
    assert!(r.iterations.is_empty());
    assert_eq!(r.timings.total_1, r.timings.total_n);
}

#[test]
fn input_mismatches_are_rejected() {
    let config = small_config();
    let bundle = small_bundle(&config);
    let query = crate::scene::FeatureMap::new(config.width, config.height, 8);
    assert!(matches!(
        localize(&bundle, &query, &config.camera(), &config),
        Err(LocError::DimensionMismatch { map: 16, query: 8 })
    ));
    let query = crate::scene::FeatureMap::new(config.width + 1, config.height, 16);
    assert!(matches!(
        localize(&bundle, &query, &config.camera(), &config),
        Err(LocError::CameraMismatch { .. })
    ));
    // nothing valid to detect on
    let query = crate::scene::FeatureMap::new(config.width, config.height, 16);
    assert!(matches!(
        localize(&bundle, &query, &config.camera(), &config),
        Err(LocError::SparseStage { stage: "matching", .. })
    ));
}

#[test]
fn noiseless_self_render_localizes_tightly() {
    let config = PipelineConfig {
        timing_repeats: 0,
        ..Default::default()
    };
    let spec = SyntheticSceneSpec {
        max_frequency: 6.0,
        ..Default::default()
    };
    let bundle = build_map(gen_synthetic_scene(&spec).0, &[], None, &config).unwrap();
    for seed in [1, 2, 3] {
        let (pose, query) = view(&bundle, &config, seed, 0.0);
        let r = localize(&bundle, &query, &config.camera(), &config).unwrap();
        let (t, rot) = pose_error(&r.pose_dense, &pose);
        assert!(rot < 0.05 && t < 0.001, "seed {seed}: {t} {rot}");
        assert!(!r.degraded);
        assert!(r.timings.total_n >= r.timings.total_1);
        assert_eq!(r.proxies.len(), r.n_proxies());
    }
}

#[test]
fn median_rules() {
    assert!(median([]).is_nan());
    assert_eq!(median([3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median([4.0, 1.0, 2.0, 3.0]), 2.5);
    assert_eq!(median([f64::NAN, 5.0]), 5.0);
}

#[test]
fn report_csv_schema_and_accounting() {
    let config = small_config();
    let bundle = small_bundle(&config);
    let mut cases = gen_queries(&bundle, 1.0, 3, &config);
    // an empty query fails in the sparse stage
    cases[1].query = crate::scene::FeatureMap::new(config.width, config.height, 16);
    let report = run_cases(&bundle, &cases, 1.0, &config);
    assert_eq!(report.records.len(), 3);
    assert_eq!(report.successes(), 2);
    assert!(report.accuracy_coarse <= 2.0 / 3.0 + 1e-12);

    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 4);
    for l in &lines[1..] {
        assert_eq!(l.split(',').count(), CSV_HEADER.split(',').count());
    }
    assert!(lines[2].starts_with("1,NaN,") && lines[2].ends_with(",0"));
    assert!(lines[1].ends_with(",1"));

    assert_eq!(report.storage_decoupled.layout, Layout::Decoupled);
    assert_eq!(report.storage_coupled.primitive_count, bundle.field.len() as u64);
    assert!(report.summary().contains("1% of extent"));
}

#[test]
fn reports_are_deterministic_apart_from_timing() {
    let config = PipelineConfig {
        timing_repeats: 1,
        ..small_config()
    };
    let a = run_benchmark(&small_spec(), 2, &config);
    let b = run_benchmark(&small_spec(), 2, &config);
    assert_eq!(a.without_timings(), b.without_timings());
}
