//! Map bundle (`LLMB`): magic, u32 version = 1, an embedded `LLGF` scene
//! (with its own CRC), u32 landmark count and indices, u32 config length and
//! UTF-8 `key = value` text, then CRC32 of everything before.

use std::fs;
use std::path::Path;

use super::PipelineConfig;
use crate::error::{FitError, FormatError};
use crate::field::{fit_features, sample_landmarks, FitOptions, LandmarkSet, TrainView};
use crate::scene::{encode_field, put_u32, read_field, GaussianField, Reader, FORMAT_VERSION};

pub const BUNDLE_MAGIC: [u8; 4] = *b"LLMB";

#[derive(Debug, Clone, PartialEq)]
pub struct MapBundle {
    pub field: GaussianField,
    pub landmarks: LandmarkSet,
    /// Configuration the map was built with.
    pub config: PipelineConfig,
}

impl MapBundle {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&BUNDLE_MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        out.extend_from_slice(&encode_field(&self.field));
        put_u32(&mut out, self.landmarks.len() as u32);
        for i in &self.landmarks.indices {
            put_u32(&mut out, *i as u32);
        }
        let text = self.config.to_text();
        put_u32(&mut out, text.len() as u32);
        out.extend_from_slice(text.as_bytes());
        let crc = crc32fast::hash(&out);
        put_u32(&mut out, crc);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.magic(BUNDLE_MAGIC)?;
        r.version()?;
        let field = read_field(&mut r)?;
        let count = r.u32()? as usize;
        let mut indices = Vec::with_capacity(count.min(field.len()));
        for _ in 0..count {
            let offset = r.offset();
            let i = r.u32()?;
            if i as usize >= field.len() {
                return Err(FormatError::BadField {
                    field: "landmark",
                    value: i as u64,
                    offset,
                });
            }
            indices.push(i as usize);
        }
        let offset = r.offset();
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| FormatError::BadField {
            field: "config",
            value: len as u64,
            offset,
        })?;
        let config = PipelineConfig::from_text(text).map_err(|_| FormatError::BadField {
            field: "config",
            value: len as u64,
            offset,
        })?;
        r.checksum(0)?;
        r.finish()?;
        Ok(Self {
            field,
            landmarks: LandmarkSet { indices },
            config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FormatError> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FormatError> {
        Self::decode(&fs::read(path)?)
    }
}

/// Optionally fits features to posed views, then samples landmarks.
pub fn build_map(
    field: GaussianField,
    views: &[TrainView],
    fit: Option<&FitOptions>,
    config: &PipelineConfig,
) -> Result<MapBundle, FitError> {
    let field = match fit {
        Some(opts) => fit_features(&field, views, opts)?.field,
        None => field,
    };
    let landmarks = sample_landmarks(&field, &config.landmark_options());
    Ok(MapBundle {
        field,
        landmarks,
        config: config.clone(),
    })
}
