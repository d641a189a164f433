use std::io;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point behind camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("non-positive depth {0}")]
    NonPositiveDepth(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// Failures decoding the binary scene, bundle and feature-map containers.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic at byte 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {version} at byte {offset}")]
    BadVersion { version: u32, offset: usize },
    #[error("invalid value {value} for {field} at byte {offset}")]
    BadField { field: &'static str, value: u64, offset: usize },
    #[error("truncated input: needed {needed} bytes at byte {offset}, {available} available")]
    Truncated { offset: usize, needed: usize, available: usize },
    #[error("checksum mismatch at byte {offset}: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { offset: usize, stored: u32, computed: u32 },
    #[error("{trailing} trailing bytes after byte {offset}")]
    TrailingBytes { offset: usize, trailing: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Correspondence sets too small for the downstream solver.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("insufficient matches: {found} found, {required} required")]
pub struct InsufficientMatches {
    pub found: usize,
    pub required: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PnpError {
    #[error("need at least {required} correspondences, got {got}")]
    TooFewCorrespondences { got: usize, required: usize },
    #[error("no hypothesis reached {required} inliers (best {best_inliers} after {iterations} iterations)")]
    NoConsensus {
        best_inliers: usize,
        required: usize,
        iterations: usize,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("no training views supplied")]
    NoViews,
    #[error("view {index} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        index: usize,
        got: (usize, usize, usize),
        expected: (usize, usize, usize),
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("query view contains no valid pixels")]
    EmptyView,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
}

#[derive(Debug, Error)]
pub enum LocError {
    #[error("feature dimension mismatch: map has {map}, query has {query}")]
    DimensionMismatch { map: usize, query: usize },
    #[error("query is {query:?} pixels but the camera is {camera:?}")]
    CameraMismatch { camera: (usize, usize), query: (usize, usize) },
    #[error("sparse stage failed: {stage}: {reason}")]
    SparseStage { stage: &'static str, reason: String },
}
