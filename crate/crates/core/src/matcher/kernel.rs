//! Blocked dot-product and softmax primitives shared by the sparse and
//! dense matchers.

const LANES: usize = 8;

/// Column vectors packed in blocks of eight for row-by-matrix products.
/// Every dot product is summed in channel order, so results equal a plain
/// sequential loop bit for bit.
#[derive(Debug, Clone)]
pub struct PackedColumns {
    dim: usize,
    count: usize,
    blocks: Vec<f32>,
}

impl PackedColumns {
    pub fn new<'a>(columns: impl IntoIterator<Item = &'a [f32]>, dim: usize) -> Self {
        let cols: Vec<&[f32]> = columns.into_iter().collect();
        let count = cols.len();
        let nb = count.div_ceil(LANES);
        let mut blocks = vec![0.0f32; nb * dim * LANES];
        for (j, c) in cols.iter().enumerate() {
            assert_eq!(c.len(), dim, "column dimension");
            let (b, l) = (j / LANES, j % LANES);
            for (d, v) in c.iter().enumerate() {
                blocks[(b * dim + d) * LANES + l] = *v;
            }
        }
        Self { dim, count, blocks }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `out[j] = Σ_d q[d] · col_j[d]`. `out` must hold `padded_len()` values;
    /// entries past `len()` are zero.
    pub fn dots(&self, q: &[f32], out: &mut [f32]) {
        let dim = self.dim;
        debug_assert_eq!(q.len(), dim);
        for (blk, dst) in self.blocks.chunks_exact(dim * LANES).zip(out.chunks_exact_mut(LANES)) {
            let mut acc = [0.0f32; LANES];
            for (d, qd) in q.iter().enumerate() {
                let r = &blk[d * LANES..(d + 1) * LANES];
                for l in 0..LANES {
                    acc[l] += qd * r[l];
                }
            }
            dst.copy_from_slice(&acc);
        }
    }

    pub fn padded_len(&self) -> usize {
        self.count.div_ceil(LANES) * LANES
    }
}

/// Sequential dot product in channel order.
#[inline]
pub fn dot_seq(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `2^y` for `y ≤ 0` by range reduction and a degree-6 polynomial.
/// Branch-free so loops over it vectorize; relative error below 3e-7.
#[inline]
fn exp2_nonpositive(y: f32) -> f32 {
    let y = if y < -125.0 { -125.0 } else { y };
    // adding 1.5·2^23 rounds to an integer held in the low mantissa bits
    let shifted = y + 12_582_912.0;
    let r = shifted - 12_582_912.0;
    let f = y - r;
    let p = 1.0
        + f * (std::f32::consts::LN_2
            + f * (0.240_226_5 + f * (0.055_504_11 + f * (0.009_618_129 + f * (0.001_333_355_8 + f * 0.000_154_035_3)))));
    let scale = f32::from_bits(shifted.to_bits().wrapping_sub(0x4B40_0000).wrapping_add(127) << 23);
    p * scale
}

const QUANTUM: f64 = 4_294_967_296.0; // 2^32
const ROUND_MAGIC: f64 = 4_503_599_627_370_496.0; // 2^52

/// Unnormalized softmax weight of a correlation: `exp((min(c,1) - 1) / τ)`
/// rounded to a multiple of 2⁻³². Sums of up to 2²¹ such weights are exact
/// in f64, so row and column normalizers do not depend on summation order.
#[inline]
pub fn softmax_weight(c: f32, inv_temperature: f32) -> f64 {
    let c = if c > 1.0 { 1.0 } else { c };
    let logit = (c - 1.0) * inv_temperature;
    let e = exp2_nonpositive(logit * std::f32::consts::LOG2_E) as f64;
    ((e * QUANTUM + ROUND_MAGIC) - ROUND_MAGIC) * (1.0 / QUANTUM)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn packed_dots_equal_sequential_dots() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (n, dim) in [(1, 3), (8, 16), (29, 16), (100, 5)] {
            let cols: Vec<Vec<f32>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let packed = PackedColumns::new(cols.iter().map(Vec::as_slice), dim);
            let q: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut out = vec![0.0; packed.padded_len()];
            packed.dots(&q, &mut out);
            for j in 0..n {
                assert_eq!(out[j].to_bits(), dot_seq(&q, &cols[j]).to_bits());
            }
            assert!(out[n..].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn exp2_is_accurate() {
        let mut worst = 0.0f64;
        for k in 0..=100_000 {
            let y = -(k as f32) * 1e-3;
            let got = exp2_nonpositive(y) as f64;
            let want = (y as f64).exp2();
            worst = worst.max((got - want).abs() / want);
        }
        assert!(worst < 3e-7, "{worst}");
        assert_eq!(exp2_nonpositive(0.0), 1.0);
        assert!(exp2_nonpositive(-1000.0) > 0.0);
    }

    #[test]
    fn weights_sum_exactly_in_any_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w: Vec<f64> = (0..5000).map(|_| softmax_weight(rng.gen_range(-1.0..1.0), 10.0)).collect();
        let fwd: f64 = w.iter().sum();
        let rev: f64 = w.iter().rev().sum();
        let mut shuffled = w.clone();
        shuffled.sort_by(f64::total_cmp);
        assert_eq!(fwd.to_bits(), rev.to_bits());
        assert_eq!(fwd.to_bits(), shuffled.iter().sum::<f64>().to_bits());
        assert_eq!(softmax_weight(1.0, 10.0), 1.0);
        assert!((softmax_weight(0.5, 10.0) - (-5.0f64).exp()).abs() < 1e-8);
    }
}
