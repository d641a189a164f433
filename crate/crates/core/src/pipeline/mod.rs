//! End-to-end localization: configuration, map bundles, the sparse and
//! dense stages, and the synthetic benchmark and ablation harness.

mod benchmark;
mod bundle;
mod config;
mod localize;

pub use benchmark::{
    ablate, gen_queries, median, run_benchmark, run_cases, AblationCell, AblationReport, QueryCase, QueryRecord,
    RunReport, COARSE_THRESHOLD, CSV_HEADER, FINE_THRESHOLD,
};
pub use bundle::{build_map, MapBundle, BUNDLE_MAGIC};
pub use config::{parse_scene_spec, scene_spec_to_text, PipelineConfig, SubpixelMethod};
pub use localize::{
    dense_step, localize, solve_from_matches, DenseError, DenseSolve, IterationStats, LocResult, StageTimings,
};

#[cfg(test)]
mod tests;
