//! Debug image dumps.
//!
//! Depth: 16-bit binary PGM, value = round(depth × 1000) clamped to 65535,
//! so one count is a thousandth of a world unit. Invalid pixels are 0.
//! Alpha: 16-bit binary PGM, value = round(alpha × 65535).
//! Features: binary PPM of the first three channels, `(v + 1) / 2 × 255`.

use std::io::{self, Write};

use super::RenderOutput;

pub const DEPTH_COUNTS_PER_UNIT: f64 = 1000.0;

fn pgm16(out: &mut impl Write, width: usize, height: usize, values: impl Iterator<Item = u16>) -> io::Result<()> {
    write!(out, "P5\n{width} {height}\n65535\n")?;
    let mut buf = Vec::with_capacity(width * height * 2);
    for v in values {
        buf.extend_from_slice(&v.to_be_bytes());
    }
    out.write_all(&buf)
}

pub fn write_depth_pgm(render: &RenderOutput, out: &mut impl Write) -> io::Result<()> {
    let d = &render.depth;
    pgm16(
        out,
        d.width,
        d.height,
        d.depth.iter().zip(&d.valid).map(|(z, ok)| {
            if *ok {
                (*z as f64 * DEPTH_COUNTS_PER_UNIT).round().clamp(0.0, 65535.0) as u16
            } else {
                0
            }
        }),
    )
}

pub fn write_alpha_pgm(render: &RenderOutput, out: &mut impl Write) -> io::Result<()> {
    let d = &render.depth;
    pgm16(out, d.width, d.height, render.alpha.iter().map(|a| (*a as f64 * 65535.0).round().clamp(0.0, 65535.0) as u16))
}

pub fn write_feature_ppm(render: &RenderOutput, out: &mut impl Write) -> io::Result<()> {
    let f = &render.features;
    write!(out, "P6\n{} {}\n255\n", f.width, f.height)?;
    let mut buf = Vec::with_capacity(f.width * f.height * 3);
    for p in 0..f.width * f.height {
        let v = f.feature_at(p);
        for c in 0..3 {
            let x = v.get(c).copied().unwrap_or(0.0) as f64;
            buf.push((((x + 1.0) * 0.5) * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    out.write_all(&buf)
}
