mod flags;
mod views;

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use gsloc_core::error::{ConfigError, LocError};
use gsloc_core::field::{gen_synthetic_scene, LandmarkSet, SyntheticSceneSpec};
use gsloc_core::pipeline::{
    ablate, build_map, gen_queries, localize, parse_scene_spec, run_benchmark, LocResult, MapBundle, PipelineConfig,
    BUNDLE_MAGIC,
};
use gsloc_core::render::{dump, render};
use gsloc_core::scene::{
    decode_feature_map, decode_field, load_feature_map, load_field, pose_error, save_field, storage_report, Camera,
    GaussianField, Layout, FEATURE_MAP_MAGIC, FIELD_MAGIC,
};

use flags::ConfigFlags;

/// Failure classes with their own exit codes.
#[derive(Debug, Clone, Copy)]
pub enum Failure {
    Config,
    Localization,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Failure::Config => "configuration error",
            Failure::Localization => "localization failed",
        })
    }
}

impl std::error::Error for Failure {}

#[derive(Parser)]
#[command(name = "gsloc", version, about = "Sparse-to-dense localization against Gaussian feature fields")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scene, optionally with posed views and queries.
    GenScene {
        /// Scene spec (`key = value`); defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Directory for rendered training views.
        #[arg(long)]
        views: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        n_views: usize,
        /// Directory for query feature maps with ground-truth poses.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(short = 'n', long, default_value_t = 10)]
        n_queries: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Fit features to posed views and write a map bundle.
    Fit {
        #[arg(long)]
        scene: PathBuf,
        /// View directory; without it the scene features are kept as is.
        #[arg(long)]
        views: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Localize one query feature map.
    Localize {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        query: PathBuf,
        /// Config file applied over the bundle's own configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Ground-truth pose file; prints pose errors.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// CSV of the final 2D–3D proxies.
        #[arg(long)]
        proxies: Option<PathBuf>,
        /// Directory for depth/alpha PGM and feature PPM of the final render.
        #[arg(long)]
        dump: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Localize synthetic queries and write the per-query CSV report.
    Bench {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(short = 'n', long, default_value_t = 50)]
        n_queries: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Compare condensing on and off, plus storage per layout.
    Ablate {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(short = 'n', long, default_value_t = 50)]
        n_queries: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for `condensing_on.csv` and `condensing_off.csv`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        flags: ConfigFlags,
    },
    /// Describe a scene, feature map or bundle file.
    Inspect { file: PathBuf },
}

fn main() -> ExitCode {
    // die quietly when piped into `head` and friends
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Failure>() {
        Some(Failure::Config) => 2,
        Some(Failure::Localization) => 3,
        None if e.chain().any(|c| c.is::<ConfigError>()) => 2,
        None => 1,
    }
}

fn load_spec(path: Option<&Path>) -> anyhow::Result<SyntheticSceneSpec> {
    let Some(p) = path else {
        return Ok(SyntheticSceneSpec::default());
    };
    let text = fs::read_to_string(p)
        .with_context(|| format!("reading spec {}", p.display()))
        .context(Failure::Config)?;
    parse_scene_spec(&text).with_context(|| format!("in {}", p.display())).context(Failure::Config)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn run(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::GenScene { spec, out, views, n_views, queries, n_queries, config, flags } => {
            let spec = load_spec(spec.as_deref())?;
            let config = flags.resolve(PipelineConfig::default(), config.as_deref())?;
            let (field, _) = gen_synthetic_scene(&spec);
            save_field(&field, &out)?;
            println!("wrote {} primitives to {}", field.len(), out.display());
            // query generation only needs the field
            let bundle = MapBundle { field, landmarks: LandmarkSet { indices: vec![] }, config: config.clone() };
            let camera = config.camera();
            if let Some(dir) = views {
                let seeded = PipelineConfig { query_seed: config.query_seed.wrapping_add(1), ..config.clone() };
                let cases = gen_queries(&bundle, spec.scene_extent, n_views, &seeded);
                views::write_views(&dir, &camera, &cases)?;
                println!("wrote {} views to {}", cases.len(), dir.display());
            }
            if let Some(dir) = queries {
                let cases = gen_queries(&bundle, spec.scene_extent, n_queries, &config);
                views::write_views(&dir, &camera, &cases)?;
                println!("wrote {} queries to {}", cases.len(), dir.display());
            }
        }
        Cmd::Fit { scene, views, out, config, flags } => {
            let config = flags.resolve(PipelineConfig::default(), config.as_deref())?;
            let field = load_field(&scene).with_context(|| format!("reading {}", scene.display()))?;
            let train = match &views {
                Some(dir) => views::load_views(dir)?,
                None => vec![],
            };
            let fit = (!train.is_empty() && config.fit_steps > 0).then(|| config.fit_options());
            let bundle = build_map(field, &train, fit.as_ref(), &config)?;
            bundle.save(&out)?;
            println!(
                "wrote {} primitives, {} landmarks to {} ({} fitting steps over {} views)",
                bundle.field.len(),
                bundle.landmarks.len(),
                out.display(),
                fit.map_or(0, |f| f.steps),
                train.len()
            );
        }
        Cmd::Localize { bundle, query, config, truth, proxies, dump, flags } => {
            let bundle = MapBundle::load(&bundle).with_context(|| format!("reading {}", bundle.display()))?;
            let config = flags.resolve(bundle.config.clone(), config.as_deref())?;
            let query = load_feature_map(&query).with_context(|| format!("reading {}", query.display()))?;
            let camera = config.camera();
            let result = localize(&bundle, &query, &camera, &config).map_err(|e| {
                // the camera comes from the configuration
                let kind = match e {
                    LocError::CameraMismatch { .. } => Failure::Config,
                    _ => Failure::Localization,
                };
                anyhow::Error::new(e).context(kind)
            })?;
            print_result(&result);
            if let Some(p) = truth {
                let (_, gt) = views::load_pose(&p)?;
                let (t, r) = pose_error(&result.pose_dense, &gt);
                let (ts, rs) = pose_error(&result.pose_sparse, &gt);
                println!("trans_err = {t}\nrot_err_deg = {r}");
                println!("sparse_trans_err = {ts}\nsparse_rot_err_deg = {rs}");
            }
            if let Some(p) = proxies {
                let mut w = create(&p)?;
                writeln!(w, "u_q,v_q,X,Y,Z,conf")?;
                for x in &result.proxies {
                    writeln!(
                        w,
                        "{},{},{},{},{},{}",
                        x.query.x, x.query.y, x.world.x, x.world.y, x.world.z, x.confidence
                    )?;
                }
                w.flush()?;
            }
            if let Some(dir) = dump {
                write_dumps(&dir, &bundle.field, &camera, &result, &config)?;
            }
        }
        Cmd::Bench { spec, n_queries, config, out, flags } => {
            let spec = load_spec(spec.as_deref())?;
            let config = flags.resolve(PipelineConfig::default(), config.as_deref())?;
            let report = run_benchmark(&spec, n_queries, &config);
            if let Some(p) = out {
                let mut w = create(&p)?;
                report.write_csv(&mut w)?;
                w.flush()?;
            }
            print!("{}", report.summary());
        }
        Cmd::Ablate { spec, n_queries, config, out_dir, flags } => {
            let spec = load_spec(spec.as_deref())?;
            let config = flags.resolve(PipelineConfig::default(), config.as_deref())?;
            let report = ablate(&spec, n_queries, &config);
            if let Some(dir) = out_dir {
                fs::create_dir_all(&dir)?;
                for (name, r) in [("condensing_on.csv", &report.with_condensing), ("condensing_off.csv", &report.without_condensing)] {
                    let mut w = create(&dir.join(name))?;
                    r.write_csv(&mut w)?;
                    w.flush()?;
                }
            }
            print!("{}", report.summary());
        }
        Cmd::Inspect { file } => inspect(&file)?,
    }
    Ok(())
}

fn print_result(r: &LocResult) {
    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
    println!("sparse: {} matches, {} inliers", r.n_sparse, r.sparse_inliers);
    for (i, s) in r.iterations.iter().enumerate() {
        println!("dense {}: {} matches, {} proxies, {} inliers", i + 1, s.n_dense, s.n_proxies, s.inliers);
    }
    if r.degraded {
        println!("degraded: a dense iteration failed, keeping the last good pose");
    }
    let t = &r.timings;
    println!(
        "timing_ms: sparse {:.2} rasterization {:.2} matching {:.2} clustering {:.2} pnp {:.2} total_1 {:.2} total_n {:.2}",
        ms(t.sparse),
        ms(t.rasterization),
        ms(t.matching),
        ms(t.clustering),
        ms(t.pnp),
        ms(t.total_1),
        ms(t.total_n)
    );
    let p = &r.pose_dense;
    let rows: Vec<String> = (0..3).flat_map(|i| (0..3).map(move |j| p.rotation[(i, j)].to_string())).collect();
    println!("rotation = {}", rows.join(" "));
    println!("translation = {} {} {}", p.translation.x, p.translation.y, p.translation.z);
}

fn write_dumps(
    dir: &Path,
    field: &GaussianField,
    camera: &Camera,
    result: &LocResult,
    config: &PipelineConfig,
) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    let out = render(field, camera, &result.pose_dense, &config.render_options());
    let mut w = create(&dir.join("depth.pgm"))?;
    dump::write_depth_pgm(&out, &mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("alpha.pgm"))?;
    dump::write_alpha_pgm(&out, &mut w)?;
    w.flush()?;
    let mut w = create(&dir.join("features.ppm"))?;
    dump::write_feature_ppm(&out, &mut w)?;
    w.flush()?;
    Ok(())
}

fn describe_field(field: &GaussianField) {
    println!("primitives: {}", field.len());
    println!("feature_dim: {}", field.feature_dim());
    println!("layout: {}", field.layout().name());
    if let Some((lo, hi)) = field.bounds() {
        println!("bounds: [{:.4} {:.4} {:.4}] .. [{:.4} {:.4} {:.4}]", lo.x, lo.y, lo.z, hi.x, hi.y, hi.z);
    }
    let s = storage_report(field);
    println!("storage: {} bytes per primitive, {:.2} MB", s.bytes_per_primitive, s.megabytes());
    if field.layout() == Layout::Decoupled {
        println!("storage_coupled: {:.2} MB", storage_report(&field.to_coupled()).megabytes());
    }
}

fn inspect(path: &Path) -> anyhow::Result<()> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let magic: [u8; 4] = bytes.get(..4).and_then(|m| m.try_into().ok()).unwrap_or_default();
    match magic {
        FIELD_MAGIC => {
            println!("scene");
            describe_field(&decode_field(&bytes)?);
        }
        FEATURE_MAP_MAGIC => {
            let m = decode_feature_map(&bytes)?;
            println!("feature map");
            println!("size: {}x{}x{}", m.width, m.height, m.dim);
            println!("valid: {} of {} pixels", m.valid_count(), m.width * m.height);
        }
        BUNDLE_MAGIC => {
            let b = MapBundle::decode(&bytes)?;
            println!("map bundle");
            describe_field(&b.field);
            println!("landmarks: {}", b.landmarks.len());
            println!("config:");
            for line in b.config.to_text().lines() {
                println!("  {line}");
            }
        }
        _ => bail!("{}: unrecognized file (magic {:?})", path.display(), String::from_utf8_lossy(&magic)),
    }
    Ok(())
}
