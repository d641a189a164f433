use nalgebra::Vector2;
use rayon::prelude::*;

use super::kernel::{dot_seq, softmax_weight, PackedColumns};
use crate::scene::FeatureMap;

/// Average-pools `factor × factor` blocks over their valid pixels and
/// re-normalizes. A block is valid when at least half of its pixels are.
/// Trailing rows and columns that do not fill a block are ignored.
pub fn pool_coarse(map: &FeatureMap, factor: usize) -> FeatureMap {
    let f = factor.max(1);
    let (w, h, dim) = (map.width / f, map.height / f, map.dim);
    let mut out = FeatureMap::new(w, h, dim);
    let mut acc = vec![0.0f64; dim];
    for cy in 0..h {
        for cx in 0..w {
            acc.iter_mut().for_each(|v| *v = 0.0);
            let mut n = 0usize;
            for y in cy * f..(cy + 1) * f {
                for x in cx * f..(cx + 1) * f {
                    if map.is_valid(x, y) {
                        n += 1;
                        for (a, v) in acc.iter_mut().zip(map.feature(x, y)) {
                            *a += *v as f64;
                        }
                    }
                }
            }
            let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
            if 2 * n >= f * f && n > 0 && norm > 0.0 {
                let p = out.index(cx, cy);
                out.valid[p] = true;
                for (dst, a) in out.feature_mut(p).iter_mut().zip(&acc) {
                    *dst = (a / norm) as f32;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseOptions {
    pub temperature: f64,
    pub conf_floor: f64,
    pub parallel: bool,
}

impl Default for CoarseOptions {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            conf_floor: 0.2,
            parallel: true,
        }
    }
}

/// Mutual best pair of coarse cells, as row-major indices into the two
/// coarse maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseMatch {
    pub query_cell: usize,
    pub rendered_cell: usize,
    pub confidence: f64,
}

/// Pixel-level correspondence between the query and a rendered view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseMatch {
    pub query: Vector2<f64>,
    pub rendered: Vector2<f64>,
    pub confidence: f64,
}

const ROWS_PER_TASK: usize = 32;

type SumState = (Vec<(usize, f64)>, Vec<f64>, Vec<f32>, Vec<f64>);
type BestState = (Vec<(usize, usize, f64)>, Vec<(f64, usize)>, Vec<f32>, Vec<f64>);

#[inline]
fn row_weights(corr: &[f32], inv_t: f32, out: &mut [f64]) {
    for (o, c) in out.iter_mut().zip(corr) {
        *o = softmax_weight(*c, inv_t);
    }
}

/// Sum of quantized weights. Every partial sum is exact, so splitting the
/// accumulation across lanes does not change the result.
#[inline]
fn exact_sum(w: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = w.chunks_exact(4);
    let tail: f64 = chunks.remainder().iter().sum();
    for c in chunks {
        for l in 0..4 {
            acc[l] += c[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Dual-softmax over the correlation of two descriptor sets followed by
/// mutual-argmax selection. Returns `(query index, rendered index, P)` for
/// pairs with `P ≥ conf_floor`, ordered by query index.
///
/// The correlation matrix is never stored: one pass accumulates the row and
/// column normalizers, a second recomputes each row and tracks both
/// argmaxes. Ties go to the lower index.
pub fn dual_softmax_mnn(
    query: &[&[f32]],
    rendered: &[&[f32]],
    dim: usize,
    opts: &CoarseOptions,
) -> Vec<(usize, usize, f64)> {
    let (n, m) = (query.len(), rendered.len());
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let packed = PackedColumns::new(rendered.iter().copied(), dim);
    let inv_t = (1.0 / opts.temperature) as f32;
    let rows: Vec<usize> = (0..n).collect();

    // pass 1: normalizers. Weights are multiples of 2^-32, so these sums are
    // exact whatever the order of accumulation.
    let sums_fold = |(mut row_sums, mut col_sums, mut buf, mut wbuf): SumState, chunk: &[usize]| {
        for &i in chunk {
            packed.dots(query[i], &mut buf);
            row_weights(&buf[..m], inv_t, &mut wbuf[..m]);
            row_sums.push((i, exact_sum(&wbuf[..m])));
            for (col, w) in col_sums.iter_mut().zip(&wbuf[..m]) {
                *col += w;
            }
        }
        (row_sums, col_sums, buf, wbuf)
    };
    let init = || (Vec::new(), vec![0.0f64; m], vec![0.0f32; packed.padded_len()], vec![0.0f64; m]);
    let merge = |(mut ra, mut ca, ba, wa): SumState, (rb, cb, _, _): SumState| {
        ra.extend(rb);
        ca.iter_mut().zip(&cb).for_each(|(a, b)| *a += b);
        (ra, ca, ba, wa)
    };
    let (row_list, col_sums, _, _) = if opts.parallel {
        rows.par_chunks(ROWS_PER_TASK).fold(init, &sums_fold).reduce(init, merge)
    } else {
        rows.chunks(ROWS_PER_TASK).fold(init(), sums_fold)
    };
    let mut row_sums = vec![0.0f64; n];
    for (i, s) in row_list {
        row_sums[i] = s;
    }

    // pass 2: P = (w / r_i) (w / c_j), row and column argmax
    let best_fold = |(mut row_best, mut col_best, mut buf, mut pbuf): BestState, chunk: &[usize]| {
        for &i in chunk {
            let ri = row_sums[i];
            if ri <= 0.0 {
                continue;
            }
            packed.dots(query[i], &mut buf);
            row_weights(&buf[..m], inv_t, &mut pbuf[..m]);
            for (p, cj) in pbuf[..m].iter_mut().zip(&col_sums) {
                // columns with a zero normalizer give NaN and never win
                *p = (*p / ri) * (*p / cj);
            }
            let mut best = (-1.0f64, usize::MAX);
            for (j, &p) in pbuf[..m].iter().enumerate() {
                if p > best.0 {
                    best = (p, j);
                }
                let cb = &mut col_best[j];
                if p > cb.0 || (p == cb.0 && i < cb.1) {
                    *cb = (p, i);
                }
            }
            if best.1 != usize::MAX {
                row_best.push((i, best.1, best.0));
            }
        }
        (row_best, col_best, buf, pbuf)
    };
    let init2 = || (Vec::new(), vec![(-1.0f64, usize::MAX); m], vec![0.0f32; packed.padded_len()], vec![0.0f64; m]);
    let merge2 = |(mut ra, mut ca, ba, pa): BestState, (rb, cb, _, _): BestState| {
        ra.extend(rb);
        for (a, b) in ca.iter_mut().zip(&cb) {
            if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                *a = *b;
            }
        }
        (ra, ca, ba, pa)
    };
    let (mut row_best, col_best, _, _) = if opts.parallel {
        rows.par_chunks(ROWS_PER_TASK).fold(init2, &best_fold).reduce(init2, merge2)
    } else {
        rows.chunks(ROWS_PER_TASK).fold(init2(), best_fold)
    };
    row_best.sort_unstable_by_key(|r| r.0);
    row_best
        .into_iter()
        .filter(|&(i, j, p)| col_best[j].1 == i && p >= opts.conf_floor)
        .collect()
}

/// Coarse cell correspondences between two pooled maps of equal dimension.
pub fn match_dense_coarse(query: &FeatureMap, rendered: &FeatureMap, opts: &CoarseOptions) -> Vec<CoarseMatch> {
    assert_eq!(query.dim, rendered.dim, "feature dimensions differ");
    let valid_cells = |m: &FeatureMap| -> Vec<usize> { (0..m.valid.len()).filter(|p| m.valid[*p]).collect() };
    let qc = valid_cells(query);
    let rc = valid_cells(rendered);
    let qf: Vec<&[f32]> = qc.iter().map(|p| query.feature_at(*p)).collect();
    let rf: Vec<&[f32]> = rc.iter().map(|p| rendered.feature_at(*p)).collect();
    dual_softmax_mnn(&qf, &rf, query.dim, opts)
        .into_iter()
        .map(|(i, j, p)| CoarseMatch {
            query_cell: qc[i],
            rendered_cell: rc[j],
            confidence: p,
        })
        .collect()
}

/// Sub-pixel adjustment around a unique integer argmax.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Subpixel {
    /// Keep the integer argmax.
    Off,
    /// Soft-argmax with the given sharpness over the 3×3 neighbourhood.
    SoftArgmax(f64),
    /// Per-axis parabola through the peak and its two neighbours.
    Parabolic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    pub window: usize,
    pub factor: usize,
    pub subpixel: Subpixel,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            window: 8,
            factor: 8,
            subpixel: Subpixel::Parabolic,
        }
    }
}

pub(super) fn subpixel_offset(mode: Subpixel, best: f64, at: impl Fn(i64, i64) -> Option<f64>) -> Vector2<f64> {
    match mode {
        Subpixel::Off => Vector2::zeros(),
        Subpixel::SoftArgmax(t) => {
            let mut wsum = 0.0;
            let mut off = Vector2::zeros();
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if let Some(c) = at(dx, dy) {
                        let w = (t * (c - best)).exp();
                        wsum += w;
                        off += Vector2::new(dx as f64, dy as f64) * w;
                    }
                }
            }
            off / wsum
        }
        Subpixel::Parabolic => {
            // vertex of the parabola through (-1, m), (0, best), (1, p)
            let fit = |m: Option<f64>, p: Option<f64>| match (m, p) {
                (Some(m), Some(p)) if m - 2.0 * best + p < 0.0 => (0.5 * (m - p) / (m - 2.0 * best + p)).clamp(-0.5, 0.5),
                _ => 0.0,
            };
            Vector2::new(fit(at(-1, 0), at(1, 0)), fit(at(0, -1), at(0, 1)))
        }
    }
}

/// Full-resolution coordinate of a coarse cell center.
pub fn cell_center(cell: usize, coarse_width: usize, factor: usize) -> (usize, usize) {
    let (cx, cy) = (cell % coarse_width, cell / coarse_width);
    (cx * factor + factor / 2, cy * factor + factor / 2)
}

/// Refines coarse pairs to pixel correspondences. The query side stays at
/// the coarse cell center; the rendered side moves to the best-correlated
/// pixel of a `window × window` patch around the matched cell center.
pub fn refine_matches(
    query: &FeatureMap,
    rendered: &FeatureMap,
    coarse: &[CoarseMatch],
    opts: &RefineOptions,
) -> Vec<DenseMatch> {
    let f = opts.factor.max(1);
    let (qcw, rcw) = (query.width / f, rendered.width / f);
    let half = opts.window / 2;
    coarse
        .iter()
        .filter_map(|cm| {
            let (qx, qy) = cell_center(cm.query_cell, qcw, f);
            if qx >= query.width || qy >= query.height || !query.is_valid(qx, qy) {
                return None;
            }
            let desc = query.feature(qx, qy);
            let (rx, ry) = cell_center(cm.rendered_cell, rcw, f);
            let x0 = rx.saturating_sub(half);
            let y0 = ry.saturating_sub(half);
            let x1 = (rx + opts.window - half).min(rendered.width) - 1;
            let y1 = (ry + opts.window - half).min(rendered.height) - 1;
            if x0 > x1 || y0 > y1 {
                return None;
            }
            let ww = x1 - x0 + 1;
            let mut corr = vec![f32::NEG_INFINITY; ww * (y1 - y0 + 1)];
            let mut best = f32::NEG_INFINITY;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if rendered.is_valid(x, y) {
                        let c = dot_seq(desc, rendered.feature(x, y));
                        corr[(y - y0) * ww + x - x0] = c;
                        best = best.max(c);
                    }
                }
            }
            if best == f32::NEG_INFINITY {
                return None;
            }
            let ties: Vec<(usize, usize)> = (y0..=y1)
                .flat_map(|y| (x0..=x1).map(move |x| (x, y)))
                .filter(|(x, y)| corr[(y - y0) * ww + x - x0] == best)
                .collect();
            let mut loc = ties
                .iter()
                .fold(Vector2::zeros(), |a: Vector2<f64>, (x, y)| a + Vector2::new(*x as f64, *y as f64))
                / ties.len() as f64;
            if let [(bx, by)] = ties.as_slice() {
                let at = |dx: i64, dy: i64| -> Option<f64> {
                    let (x, y) = (*bx as i64 + dx, *by as i64 + dy);
                    if x < x0 as i64 || x > x1 as i64 || y < y0 as i64 || y > y1 as i64 {
                        return None;
                    }
                    let c = corr[(y as usize - y0) * ww + x as usize - x0];
                    (c != f32::NEG_INFINITY).then_some(c as f64)
                };
                loc += subpixel_offset(opts.subpixel, best as f64, at);
            }            loc.x = loc.x.clamp(x0 as f64, x1 as f64);
            loc.y = loc.y.clamp(y0 as f64, y1 as f64);
            Some(DenseMatch {
                query: Vector2::new(qx as f64, qy as f64),
                rendered: loc,
                confidence: cm.confidence,
            })
        })
        .collect()
}
