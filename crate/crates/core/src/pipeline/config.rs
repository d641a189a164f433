//! Flat `key = value` configuration. Blank lines and `#` comments are
//! ignored; later keys override earlier ones.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::condenser::CondenseOptions;
use crate::error::ConfigError;
use crate::field::{FitLoss, FitOptions, LandmarkOptions, SyntheticSceneSpec, ViewSchedule};
use crate::matcher::{CoarseOptions, DetectOptions, RefineOptions as MatchRefineOptions, Subpixel};
use crate::pnp::{KernelKind, RansacOptions, RefineOptions, RobustKernel};
use crate::render::RenderOptions;
use crate::scene::{Camera, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubpixelMethod {
    Off,
    SoftArgmax,
    Parabolic,
}

impl SubpixelMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Off => "off",
            Self::SoftArgmax => "softargmax",
            Self::Parabolic => "parabolic",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    // camera
    pub width: usize,
    pub height: usize,
    pub focal_ratio: f64,
    // mapping
    pub anchor_count: usize,
    pub nn: usize,
    pub discard_fraction: f64,
    pub fit_steps: usize,
    /// Angular step per primitive, radians.
    pub learning_rate: f64,
    pub fit_loss: FitLoss,
    // sparse stage
    pub nms_radius: f64,
    pub max_keypoints: usize,
    pub sim_floor: f32,
    pub max_scoring_landmarks: usize,
    pub sparse_threshold: f32,
    // dense stage
    pub dense_iterations: usize,
    pub temperature: f64,
    pub conf_floor: f64,
    pub window: usize,
    pub factor: usize,
    pub subpixel: SubpixelMethod,
    /// Sharpness used by the soft-argmax method.
    pub subpixel_temperature: f64,
    // condensing
    pub condensing: bool,
    pub k: usize,
    pub kmeans_max_iter: usize,
    // solver
    pub threshold_px: f64,
    pub confidence: f64,
    pub ransac_max_iters: usize,
    pub kernel: KernelKind,
    pub kernel_delta: f64,
    pub refine_max_iters: usize,
    pub refine_tol: f64,
    pub seed: u64,
    // rendering
    pub alpha_valid: f64,
    pub tile_size: usize,
    /// Storage layout the map is accounted under.
    pub layout: Layout,
    pub parallel: bool,
    // benchmark
    pub query_noise: f64,
    pub query_seed: u64,
    pub distance_min: f64,
    pub distance_max: f64,
    pub min_valid_fraction: f64,
    pub timing_repeats: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            focal_ratio: 1.0,
            anchor_count: 16384,
            nn: 6,
            discard_fraction: 0.25,
            fit_steps: 50_000,
            learning_rate: 0.001,
            fit_loss: FitLoss::L1,
            nms_radius: 4.0,
            max_keypoints: 1024,
            sim_floor: 0.5,
            max_scoring_landmarks: 2048,
            sparse_threshold: 0.9,
            dense_iterations: 4,
            temperature: 0.05,
            conf_floor: 0.05,
            window: 8,
            factor: 8,
            subpixel: SubpixelMethod::Parabolic,
            subpixel_temperature: 10.0,
            condensing: true,
            k: 1024,
            kmeans_max_iter: 5,
            threshold_px: 5.0,
            confidence: 0.9999,
            ransac_max_iters: 10_000,
            kernel: KernelKind::Huber,
            kernel_delta: 5.0,
            refine_max_iters: 50,
            refine_tol: 1e-10,
            seed: 0,
            alpha_valid: 0.5,
            tile_size: 16,
            layout: Layout::Decoupled,
            parallel: true,
            query_noise: 0.05,
            query_seed: 0,
            distance_min: 1.0,
            distance_max: 2.0,
            min_valid_fraction: 0.3,
            timing_repeats: 5,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: format!("expected {}", std::any::type_name::<T>()),
    })
}

fn invalid(key: &str, value: impl ToString, reason: &str) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

fn kernel_name(k: KernelKind) -> &'static str {
    match k {
        KernelKind::Huber => "huber",
        KernelKind::Cauchy => "cauchy",
        KernelKind::None => "none",
    }
}

/// Iterates `(line number, key, value)` over a `key = value` text.
fn entries(text: &str) -> impl Iterator<Item = Result<(usize, &str, &str), ConfigError>> {
    text.lines().enumerate().filter_map(|(n, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            return None;
        }
        Some(match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => Ok((n + 1, k.trim(), v.trim())),
            _ => Err(ConfigError::Syntax {
                line: n + 1,
                text: raw.to_string(),
            }),
        })
    })
}

impl PipelineConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies every entry of `text` on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for e in entries(text) {
            let (_, k, v) = e?;
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value;
        match key {
            "profile" => {
                self.dense_iterations = match v {
                    "indoor" => 4,
                    "outdoor" => 1,
                    _ => return Err(invalid(key, v, "expected indoor or outdoor")),
                }
            }
            "width" => self.width = parse(key, v)?,
            "height" => self.height = parse(key, v)?,
            "focal_ratio" => self.focal_ratio = parse(key, v)?,
            "anchor_count" => self.anchor_count = parse(key, v)?,
            "nn" => self.nn = parse(key, v)?,
            "discard_fraction" => self.discard_fraction = parse(key, v)?,
            "fit_steps" => self.fit_steps = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "fit_loss" => {
                self.fit_loss = match v {
                    "l1" => FitLoss::L1,
                    "l2" => FitLoss::L2,
                    _ => return Err(invalid(key, v, "expected l1 or l2")),
                }
            }
            "nms_radius" => self.nms_radius = parse(key, v)?,
            "max_keypoints" => self.max_keypoints = parse(key, v)?,
            "sim_floor" => self.sim_floor = parse(key, v)?,
            "max_scoring_landmarks" => self.max_scoring_landmarks = parse(key, v)?,
            "sparse_threshold" => self.sparse_threshold = parse(key, v)?,
            "dense_iterations" => self.dense_iterations = parse(key, v)?,
            "temperature" => self.temperature = parse(key, v)?,
            "conf_floor" => self.conf_floor = parse(key, v)?,
            "window" => self.window = parse(key, v)?,
            "factor" => self.factor = parse(key, v)?,
            "subpixel" => {
                self.subpixel = match v {
                    "parabolic" => SubpixelMethod::Parabolic,
                    "softargmax" => SubpixelMethod::SoftArgmax,
                    "off" => SubpixelMethod::Off,
                    _ => return Err(invalid(key, v, "expected parabolic, softargmax or off")),
                }
            }
            "subpixel_temperature" => self.subpixel_temperature = parse(key, v)?,
            "condensing" => {
                self.condensing = match v {
                    "on" | "true" => true,
                    "off" | "false" => false,
                    _ => return Err(invalid(key, v, "expected on or off")),
                }
            }
            "k" => self.k = parse(key, v)?,
            "kmeans_max_iter" => self.kmeans_max_iter = parse(key, v)?,
            "threshold_px" => self.threshold_px = parse(key, v)?,
            "confidence" => self.confidence = parse(key, v)?,
            "ransac_max_iters" => self.ransac_max_iters = parse(key, v)?,
            "kernel" => {
                self.kernel = match v {
                    "huber" => KernelKind::Huber,
                    "cauchy" => KernelKind::Cauchy,
                    "none" => KernelKind::None,
                    _ => return Err(invalid(key, v, "expected huber, cauchy or none")),
                }
            }
            "kernel_delta" => self.kernel_delta = parse(key, v)?,
            "refine_max_iters" => self.refine_max_iters = parse(key, v)?,
            "refine_tol" => self.refine_tol = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "alpha_valid" => self.alpha_valid = parse(key, v)?,
            "tile_size" => self.tile_size = parse(key, v)?,
            "layout" => {
                self.layout = match v {
                    "decoupled" => Layout::Decoupled,
                    "coupled" => Layout::Coupled,
                    _ => return Err(invalid(key, v, "expected decoupled or coupled")),
                }
            }
            "parallel" => self.parallel = parse(key, v)?,
            "query_noise" => self.query_noise = parse(key, v)?,
            "query_seed" => self.query_seed = parse(key, v)?,
            "distance_min" => self.distance_min = parse(key, v)?,
            "distance_max" => self.distance_max = parse(key, v)?,
            "min_valid_fraction" => self.min_valid_fraction = parse(key, v)?,
            "timing_repeats" => self.timing_repeats = parse(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("width", self.width),
            ("height", self.height),
            ("anchor_count", self.anchor_count),
            ("nn", self.nn),
            ("max_keypoints", self.max_keypoints),
            ("max_scoring_landmarks", self.max_scoring_landmarks),
            ("window", self.window),
            ("factor", self.factor),
            ("k", self.k),
            ("kmeans_max_iter", self.kmeans_max_iter),
            ("ransac_max_iters", self.ransac_max_iters),
            ("refine_max_iters", self.refine_max_iters),
            ("tile_size", self.tile_size),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(invalid(k, v, "must be positive"));
            }
        }
        let checks = [
            ("focal_ratio", self.focal_ratio, self.focal_ratio > 0.0),
            ("discard_fraction", self.discard_fraction, (0.0..1.0).contains(&self.discard_fraction)),
            ("learning_rate", self.learning_rate, self.learning_rate > 0.0),
            ("nms_radius", self.nms_radius, self.nms_radius >= 0.0),
            ("temperature", self.temperature, self.temperature > 0.0),
            ("conf_floor", self.conf_floor, (0.0..=1.0).contains(&self.conf_floor)),
            ("subpixel_temperature", self.subpixel_temperature, self.subpixel_temperature > 0.0),
            ("threshold_px", self.threshold_px, self.threshold_px > 0.0),
            ("confidence", self.confidence, self.confidence > 0.0 && self.confidence < 1.0),
            ("kernel_delta", self.kernel_delta, self.kernel_delta > 0.0),
            ("refine_tol", self.refine_tol, self.refine_tol >= 0.0),
            ("alpha_valid", self.alpha_valid, self.alpha_valid > 0.0 && self.alpha_valid <= 1.0),
            ("query_noise", self.query_noise, self.query_noise >= 0.0),
            ("distance_min", self.distance_min, self.distance_min > 0.0),
            ("distance_max", self.distance_max, self.distance_max >= self.distance_min),
            ("min_valid_fraction", self.min_valid_fraction, (0.0..=1.0).contains(&self.min_valid_fraction)),
        ];
        for (k, v, ok) in checks {
            if !ok || !v.is_finite() {
                return Err(invalid(k, v, "out of range"));
            }
        }
        Ok(())
    }

    /// Every key with its current value, parseable by [`Self::from_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("width", self.width.to_string());
        kv("height", self.height.to_string());
        kv("focal_ratio", self.focal_ratio.to_string());
        kv("anchor_count", self.anchor_count.to_string());
        kv("nn", self.nn.to_string());
        kv("discard_fraction", self.discard_fraction.to_string());
        kv("fit_steps", self.fit_steps.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("fit_loss", if self.fit_loss == FitLoss::L1 { "l1" } else { "l2" }.to_string());
        kv("nms_radius", self.nms_radius.to_string());
        kv("max_keypoints", self.max_keypoints.to_string());
        kv("sim_floor", self.sim_floor.to_string());
        kv("max_scoring_landmarks", self.max_scoring_landmarks.to_string());
        kv("sparse_threshold", self.sparse_threshold.to_string());
        kv("dense_iterations", self.dense_iterations.to_string());
        kv("temperature", self.temperature.to_string());
        kv("conf_floor", self.conf_floor.to_string());
        kv("window", self.window.to_string());
        kv("factor", self.factor.to_string());
        kv("subpixel", self.subpixel.name().to_string());
        kv("subpixel_temperature", self.subpixel_temperature.to_string());
        kv("condensing", if self.condensing { "on" } else { "off" }.to_string());
        kv("k", self.k.to_string());
        kv("kmeans_max_iter", self.kmeans_max_iter.to_string());
        kv("threshold_px", self.threshold_px.to_string());
        kv("confidence", self.confidence.to_string());
        kv("ransac_max_iters", self.ransac_max_iters.to_string());
        kv("kernel", kernel_name(self.kernel).to_string());
        kv("kernel_delta", self.kernel_delta.to_string());
        kv("refine_max_iters", self.refine_max_iters.to_string());
        kv("refine_tol", self.refine_tol.to_string());
        kv("seed", self.seed.to_string());
        kv("alpha_valid", self.alpha_valid.to_string());
        kv("tile_size", self.tile_size.to_string());
        kv("layout", self.layout.name().to_string());
        kv("parallel", self.parallel.to_string());
        kv("query_noise", self.query_noise.to_string());
        kv("query_seed", self.query_seed.to_string());
        kv("distance_min", self.distance_min.to_string());
        kv("distance_max", self.distance_max.to_string());
        kv("min_valid_fraction", self.min_valid_fraction.to_string());
        kv("timing_repeats", self.timing_repeats.to_string());
        s
    }

    pub fn camera(&self) -> Camera {
        Camera::centered(self.width, self.height, self.focal_ratio)
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            alpha_valid: self.alpha_valid,
            tile_size: self.tile_size,
            parallel: self.parallel,
        }
    }

    pub fn landmark_options(&self) -> LandmarkOptions {
        LandmarkOptions {
            anchor_count: self.anchor_count,
            neighbors: self.nn,
            discard_fraction: self.discard_fraction,
        }
    }

    pub fn detect_options(&self) -> DetectOptions {
        DetectOptions {
            nms_radius: self.nms_radius,
            max_keypoints: self.max_keypoints,
            sim_floor: self.sim_floor,
            max_scoring_landmarks: self.max_scoring_landmarks,
            seed: self.seed,
            parallel: self.parallel,
        }
    }

    pub fn coarse_options(&self) -> CoarseOptions {
        CoarseOptions {
            temperature: self.temperature,
            conf_floor: self.conf_floor,
            parallel: self.parallel,
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            steps: self.fit_steps,
            learning_rate: self.learning_rate,
            loss: self.fit_loss,
            schedule: ViewSchedule::Shuffled { seed: self.seed },
            render: self.render_options(),
        }
    }

    pub fn match_refine_options(&self) -> MatchRefineOptions {
        MatchRefineOptions {
            window: self.window,
            factor: self.factor,
            subpixel: match self.subpixel {
                SubpixelMethod::Off => Subpixel::Off,
                SubpixelMethod::SoftArgmax => Subpixel::SoftArgmax(self.subpixel_temperature),
                SubpixelMethod::Parabolic => Subpixel::Parabolic,
            },
        }
    }

    pub fn condense_options(&self) -> CondenseOptions {
        CondenseOptions {
            k: self.k,
            max_iter: self.kmeans_max_iter,
            seed: self.seed,
        }
    }

    pub fn ransac_options(&self) -> RansacOptions {
        RansacOptions {
            threshold_px: self.threshold_px,
            confidence: self.confidence,
            max_iters: self.ransac_max_iters,
            seed: self.seed,
            kernel: RobustKernel {
                kind: self.kernel,
                delta: self.kernel_delta,
            },
            refine: RefineOptions {
                max_iters: self.refine_max_iters,
                tol: self.refine_tol,
            },
            parallel: self.parallel,
        }
    }
}

/// Parses a synthetic scene description in the same `key = value` format.
pub fn parse_scene_spec(text: &str) -> Result<SyntheticSceneSpec, ConfigError> {
    let mut s = SyntheticSceneSpec::default();
    for e in entries(text) {
        let (_, k, v) = e?;
        match k {
            "primitive_count" => s.primitive_count = parse(k, v)?,
            "feature_dim" => s.feature_dim = parse(k, v)?,
            "scene_extent" => s.scene_extent = parse(k, v)?,
            "fourier_components" => s.fourier_components = parse(k, v)?,
            "seed" => s.rng_seed = parse(k, v)?,
            "max_frequency" => s.max_frequency = parse(k, v)?,
            "scale_min" => s.scale_range.0 = parse(k, v)?,
            "scale_max" => s.scale_range.1 = parse(k, v)?,
            "opacity_min" => s.opacity_range.0 = parse(k, v)?,
            "opacity_max" => s.opacity_range.1 = parse(k, v)?,
            _ => return Err(ConfigError::UnknownKey(k.to_string())),
        }
    }
    if s.feature_dim == 0 {
        return Err(invalid("feature_dim", 0, "must be positive"));
    }
    if !(s.scene_extent > 0.0) {
        return Err(invalid("scene_extent", s.scene_extent, "must be positive"));
    }
    if !(s.scale_range.0 > 0.0 && s.scale_range.0 <= s.scale_range.1) {
        return Err(invalid("scale_min", s.scale_range.0, "need 0 < scale_min <= scale_max"));
    }
    if !(s.opacity_range.0 > 0.0 && s.opacity_range.0 <= s.opacity_range.1 && s.opacity_range.1 <= 1.0) {
        return Err(invalid("opacity_min", s.opacity_range.0, "need 0 < opacity_min <= opacity_max <= 1"));
    }
    Ok(s)
}

pub fn scene_spec_to_text(s: &SyntheticSceneSpec) -> String {
    format!(
        "primitive_count = {}\nfeature_dim = {}\nscene_extent = {}\nfourier_components = {}\nseed = {}\n\
         max_frequency = {}\nscale_min = {}\nscale_max = {}\nopacity_min = {}\nopacity_max = {}\n",
        s.primitive_count,
        s.feature_dim,
        s.scene_extent,
        s.fourier_components,
        s.rng_seed,
        s.max_frequency,
        s.scale_range.0,
        s.scale_range.1,
        s.opacity_range.0,
        s.opacity_range.1
    )
}
