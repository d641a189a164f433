//! Little-endian binary containers.
//!
//! Scene (`LLGF`): magic, u32 version = 1, u32 layout, u32 count, u32 feature
//! dim, then per primitive position(3) rotation(4) scale(3) opacity(1)
//! [sh(48) when coupled] feature(D) as f32, then CRC32 of everything before.
//!
//! Feature map (`LLFM`): magic, u32 version = 1, u32 H, W, D, `H·W·D` f32
//! row-major, then a validity bitmap of `ceil(H·W / 8)` bytes, LSB first.

use std::fs;
use std::path::Path;

use super::{CoupledExtras, FeatureMap, GaussianField, GaussianPrimitive, Layout, SH_COEFFS};
use crate::error::FormatError;

pub const FIELD_MAGIC: [u8; 4] = *b"LLGF";
pub const FEATURE_MAP_MAGIC: [u8; 4] = *b"LLFM";
pub const FORMAT_VERSION: u32 = 1;

/// Bounds-checked cursor over a byte buffer.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let b = self.take(4)?;
        let found = [b[0], b[1], b[2], b[3]];
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_bits(self.u32()?))
    }

    pub(crate) fn f32_into(&mut self, out: &mut [f32]) -> Result<(), FormatError> {
        let b = self.take(out.len() * 4)?;
        for (dst, chunk) in out.iter_mut().zip(b.chunks_exact(4)) {
            *dst = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        Ok(())
    }

    pub(crate) fn version(&mut self) -> Result<(), FormatError> {
        let offset = self.pos;
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(FormatError::BadVersion { version, offset });
        }
        Ok(())
    }

    /// Verifies a trailing CRC32 over the bytes read since `start`.
    pub(crate) fn checksum(&mut self, start: usize) -> Result<(), FormatError> {
        let offset = self.pos;
        let computed = crc32fast::hash(&self.buf[start..offset]);
        let stored = self.u32()?;
        if stored != computed {
            return Err(FormatError::Checksum { offset, stored, computed });
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<(), FormatError> {
        let trailing = self.buf.len() - self.pos;
        if trailing != 0 {
            return Err(FormatError::TrailingBytes {
                offset: self.pos,
                trailing,
            });
        }
        Ok(())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, vs: &[f32]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_field(field: &GaussianField) -> Vec<u8> {
    let report = super::storage_report(field);
    let mut out = Vec::with_capacity(report.total_bytes as usize);
    out.extend_from_slice(&FIELD_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, field.layout().code());
    put_u32(&mut out, field.len() as u32);
    put_u32(&mut out, field.feature_dim() as u32);
    for (i, p) in field.primitives().iter().enumerate() {
        put_f32s(&mut out, &p.position);
        put_f32s(&mut out, &p.rotation);
        put_f32s(&mut out, &p.scale);
        put_f32s(&mut out, &[p.opacity]);
        if field.layout() == Layout::Coupled {
            put_f32s(&mut out, &field.extras()[i].sh_coefficients);
        }
        put_f32s(&mut out, &p.feature);
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    out
}

pub(crate) fn read_field(r: &mut Reader<'_>) -> Result<GaussianField, FormatError> {
    let start = r.offset();
    r.magic(FIELD_MAGIC)?;
    r.version()?;
    let layout_offset = r.offset();
    let code = r.u32()?;
    let layout = Layout::from_code(code).ok_or(FormatError::BadField {
        field: "layout",
        value: code as u64,
        offset: layout_offset,
    })?;
    let count = r.u32()? as usize;
    let dim_offset = r.offset();
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(FormatError::BadField {
            field: "feature_dim",
            value: 0,
            offset: dim_offset,
        });
    }
    // fail before allocating when the count cannot fit in the remaining bytes
    let per = 4 * (layout.scalars_without_feature() + dim);
    let remaining = r.buf.len() - r.pos;
    if count.saturating_mul(per) > remaining {
        return Err(FormatError::Truncated {
            offset: r.pos,
            needed: count.saturating_mul(per),
            available: remaining,
        });
    }
    let mut primitives = Vec::with_capacity(count);
    let mut extras = Vec::new();
    for _ in 0..count {
        let mut p = GaussianPrimitive {
            position: [0.0; 3],
            rotation: [0.0; 4],
            scale: [0.0; 3],
            opacity: 0.0,
            feature: vec![0.0; dim],
        };
        r.f32_into(&mut p.position)?;
        r.f32_into(&mut p.rotation)?;
        r.f32_into(&mut p.scale)?;
        p.opacity = r.f32()?;
        if layout == Layout::Coupled {
            let mut e = CoupledExtras {
                sh_coefficients: [0.0; SH_COEFFS],
            };
            r.f32_into(&mut e.sh_coefficients)?;
            extras.push(e);
        }
        r.f32_into(&mut p.feature)?;
        primitives.push(p);
    }
    r.checksum(start)?;
    GaussianField::with_layout(dim, layout, primitives, extras).map_err(|_| FormatError::BadField {
        field: "layout",
        value: code as u64,
        offset: layout_offset,
    })
}

pub fn decode_field(bytes: &[u8]) -> Result<GaussianField, FormatError> {
    let mut r = Reader::new(bytes);
    let field = read_field(&mut r)?;
    r.finish()?;
    Ok(field)
}

pub fn save_field(field: &GaussianField, path: impl AsRef<Path>) -> Result<(), FormatError> {
    fs::write(path, encode_field(field))?;
    Ok(())
}

pub fn load_field(path: impl AsRef<Path>) -> Result<GaussianField, FormatError> {
    decode_field(&fs::read(path)?)
}

pub fn encode_feature_map(map: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + map.data.len() * 4 + map.valid.len().div_ceil(8));
    out.extend_from_slice(&FEATURE_MAP_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, map.height as u32);
    put_u32(&mut out, map.width as u32);
    put_u32(&mut out, map.dim as u32);
    put_f32s(&mut out, &map.data);
    let mut bits = vec![0u8; map.valid.len().div_ceil(8)];
    for (i, _) in map.valid.iter().enumerate().filter(|(_, v)| **v) {
        bits[i / 8] |= 1 << (i % 8);
    }
    out.extend_from_slice(&bits);
    out
}

pub fn decode_feature_map(bytes: &[u8]) -> Result<FeatureMap, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(FEATURE_MAP_MAGIC)?;
    r.version()?;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let n = height.saturating_mul(width);
    let needed = n.saturating_mul(dim).saturating_mul(4).saturating_add(n.div_ceil(8));
    let available = bytes.len() - r.offset();
    if needed > available {
        return Err(FormatError::Truncated {
            offset: r.offset(),
            needed,
            available,
        });
    }
    let mut map = FeatureMap::new(width, height, dim);
    r.f32_into(&mut map.data)?;
    let bits = r.take(n.div_ceil(8))?;
    for (i, v) in map.valid.iter_mut().enumerate() {
        *v = bits[i / 8] >> (i % 8) & 1 == 1;
    }
    r.finish()?;
    Ok(map)
}

pub fn save_feature_map(map: &FeatureMap, path: impl AsRef<Path>) -> Result<(), FormatError> {
    fs::write(path, encode_feature_map(map))?;
    Ok(())
}

pub fn load_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap, FormatError> {
    decode_feature_map(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(n: usize, dim: usize, layout: Layout, seed: u64) -> GaussianField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prims: Vec<_> = (0..n)
            .map(|_| GaussianPrimitive {
                position: [rng.gen(), rng.gen(), rng.gen()],
                rotation: [rng.gen(), rng.gen(), rng.gen(), rng.gen()],
                scale: [rng.gen(), rng.gen(), rng.gen()],
                opacity: rng.gen(),
                feature: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        let extras = match layout {
            Layout::Coupled => (0..n)
                .map(|_| {
                    let mut e = CoupledExtras::default();
                    e.sh_coefficients.iter_mut().for_each(|v| *v = rng.gen());
                    e
                })
                .collect(),
            Layout::Decoupled => vec![],
        };
        GaussianField::with_layout(dim, layout, prims, extras).unwrap()
    }

    #[test]
    fn field_round_trip_is_bit_exact() {
        for layout in [Layout::Decoupled, Layout::Coupled] {
            let f = random_field(1000, 16, layout, 5);
            let bytes = encode_field(&f);
            assert_eq!(bytes.len() as u64, super::super::storage_report(&f).total_bytes);
            let back = decode_field(&bytes).unwrap();
            assert_eq!(encode_field(&back), bytes);
            assert_eq!(back, f);
        }
    }

    #[test]
    fn truncation_and_magic_errors() {
        let bytes = encode_field(&random_field(10, 4, Layout::Decoupled, 1));
        for cut in [0, 3, 7, 19, 20, 60, bytes.len() - 1] {
            match decode_field(&bytes[..cut]) {
                Err(FormatError::Truncated { offset, .. }) => assert!(offset <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(decode_field(&bad), Err(FormatError::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_field(&bad), Err(FormatError::BadVersion { version: 9, offset: 4 })));
        let mut bad = bytes.clone();
        bad[40] ^= 0x10;
        assert!(matches!(decode_field(&bad), Err(FormatError::Checksum { .. })));
        let mut bad = bytes;
        bad.push(0);
        assert!(matches!(decode_field(&bad), Err(FormatError::TrailingBytes { .. })));
    }

    #[test]
    fn huge_count_does_not_allocate() {
        let mut bytes = encode_field(&random_field(1, 4, Layout::Decoupled, 1));
        bytes[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode_field(&bytes), Err(FormatError::Truncated { offset: 20, .. })));
    }

    #[test]
    fn feature_map_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = FeatureMap::new(13, 7, 5);
        m.data.iter_mut().for_each(|v| *v = rng.gen());
        m.valid.iter_mut().for_each(|v| *v = rng.gen());
        let bytes = encode_feature_map(&m);
        assert_eq!(&bytes[..4], b"LLFM");
        assert_eq!(decode_feature_map(&bytes).unwrap(), m);
        assert!(matches!(decode_feature_map(&bytes[..30]), Err(FormatError::Truncated { .. })));
    }
}
