//! Post-training weight quantization and bitlayer decomposition.
//!
//! Weights are rounded onto a uniform grid (`d = (max - min) / 2^n`, step
//! found after an optional clip), converted to fixed-point integers at
//! `2^frac_bits`, and split into `n` magnitude bitlayers plus one negated
//! sign layer. The scales are consecutive powers of two anchored at the
//! highest magnitude bit, so the integer weight matrix is reproduced exactly
//! as `sum_i scales[i] * bitlayers[i]`.
//!
//! When the fixed-point integers carry more than `n` significant bits, the
//! window of `n + 1` layers cannot hold their low bits; the integers are
//! rounded to the window grid first so the reconstruction identity stays
//! exact. The 1-bit coder stores a single `{-v, +v}` pair and therefore
//! snaps `v` to the nearest power of two representable by a layer scale.

use crate::bitcore::BitMatrix;
use crate::dense::Matrix;
use crate::error::{Error, Result};

pub const MAX_WEIGHT_BITS: u32 = 16;
pub const MAX_FRAC_BITS: u32 = 30;
pub const MAX_COLS: usize = 1 << 20;
pub const DEFAULT_FRAC_BITS: u32 = 16;

/// Clip threshold search settings: candidates are uniform fractions of
/// `max|W|` in `(0, 1]`, scored by mean absolute error after quantization.
#[derive(Debug, Clone)]
pub struct ClipSearchConfig {
    pub num_candidates: usize,
}

impl Default for ClipSearchConfig {
    fn default() -> Self {
        Self { num_candidates: 64 }
    }
}

/// Result of grid rounding: quantized values, the grid step `d`, and a flag
/// for degenerate inputs (constant matrix) that were returned unchanged.
#[derive(Debug, Clone)]
pub struct QuantizeOutcome {
    pub values: Matrix,
    pub step: f64,
    pub degenerate: bool,
}

/// Round `w` onto the uniform grid after clamping to `[-clip, clip]`.
///
/// `d` is computed from the clamped matrix; rounding is half away from zero.
pub fn quantize_round(w: &Matrix, n: u32, clip: f64) -> Result<QuantizeOutcome> {
    if !(2..=MAX_WEIGHT_BITS).contains(&n) {
        return Err(Error::InvalidBitWidth { bits: n, min: 2, max: MAX_WEIGHT_BITS });
    }
    if !(clip > 0.0) {
        return Err(Error::InvalidClipThreshold(clip));
    }
    let clamped: Vec<f64> =
        w.data().iter().map(|&v| (v as f64).clamp(-clip, clip)).collect();
    let mx = clamped.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mn = clamped.iter().cloned().fold(f64::INFINITY, f64::min);
    if mx == mn || clamped.is_empty() {
        return Ok(QuantizeOutcome { values: w.clone(), step: 0.0, degenerate: true });
    }
    let d = (mx - mn) / (1u64 << n) as f64;
    let values = Matrix::from_vec(
        w.rows(),
        w.cols(),
        clamped.iter().map(|&v| (d * (v / d).round()) as f32).collect(),
    )?;
    Ok(QuantizeOutcome { values, step: d, degenerate: false })
}

/// 1-bit quantization to `{-v, +v}` with `v = mean(|w|)`; `sign(0)` maps to `+v`.
#[derive(Debug, Clone)]
pub struct OneBitOutcome {
    pub values: Matrix,
    pub magnitude: f64,
    pub degenerate: bool,
}

pub fn quantize_1bit(w: &Matrix) -> OneBitOutcome {
    let count = w.data().len();
    let v = if count == 0 {
        0.0
    } else {
        w.data().iter().map(|&x| (x as f64).abs()).sum::<f64>() / count as f64
    };
    if v == 0.0 {
        return OneBitOutcome {
            values: Matrix::zeros(w.rows(), w.cols()),
            magnitude: 0.0,
            degenerate: true,
        };
    }
    let values = w.map(|x| if x < 0.0 { -v as f32 } else { v as f32 });
    OneBitOutcome { values, magnitude: v, degenerate: false }
}

/// Pick the clip threshold minimizing mean `|Q(clip(W)) - W|`.
///
/// Ties break toward the larger threshold; the unclipped threshold
/// (`1.0 * max|W|`) is always a candidate, so the search never loses to it.
/// Candidates that collapse the matrix to a constant are skipped.
pub fn optimize_clip(w: &Matrix, n: u32, cfg: &ClipSearchConfig) -> Result<f64> {
    if cfg.num_candidates == 0 {
        return Err(Error::ConfigMismatch("clip search needs at least one candidate".into()));
    }
    let max_abs = w.max_abs();
    if max_abs == 0.0 {
        return Ok(0.0);
    }
    let mut best_err = f64::INFINITY;
    let mut best_t = max_abs;
    for i in 1..=cfg.num_candidates {
        let t = max_abs * i as f64 / cfg.num_candidates as f64;
        let out = quantize_round(w, n, t)?;
        if out.degenerate {
            continue;
        }
        let err = mean_abs_diff(&out.values, w);
        if err <= best_err {
            best_err = err;
            best_t = t;
        }
    }
    Ok(best_t)
}

fn mean_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.data().len().max(1);
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum::<f64>()
        / n as f64
}

/// One weight matrix decomposed into scaled bitlayers.
///
/// `bitlayers[0]` is the sign layer (`scales[0] < 0`); the remaining scales
/// are strictly decreasing consecutive powers of two with
/// `scales[0] == -2 * scales[1]`.
#[derive(Debug, Clone)]
pub struct QuantizedLayer {
    bitlayers: Vec<BitMatrix>,
    scales: Vec<i64>,
    frac_bits: u32,
    rows: usize,
    cols: usize,
    n_bits: u32,
    quant_step: f64,
    clip: f64,
    degenerate: bool,
}

impl QuantizedLayer {
    pub fn bitlayers(&self) -> &[BitMatrix] {
        &self.bitlayers
    }

    pub fn scales(&self) -> &[i64] {
        &self.scales
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn n_bits(&self) -> u32 {
        self.n_bits
    }

    /// Grid step `d` of the rounding stage (0 for 1-bit and degenerate layers).
    pub fn quant_step(&self) -> f64 {
        self.quant_step
    }

    pub fn clip(&self) -> f64 {
        self.clip
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Total packed bytes over all bitlayers; equals the allocations.
    pub fn packed_bytes(&self) -> u64 {
        self.bitlayers.iter().map(BitMatrix::packed_bytes).sum()
    }

    /// Integer weight matrix `W_q` as the exact scale-weighted layer sum.
    pub fn reconstruct_int(&self) -> Vec<i64> {
        let mut out = vec![0i64; self.rows * self.cols];
        for (layer, &scale) in self.bitlayers.iter().zip(&self.scales) {
            for r in 0..self.rows {
                let words = layer.row_words(r);
                for (wi, &word) in words.iter().enumerate() {
                    let mut bits = word;
                    while bits != 0 {
                        let c = wi * 64 + bits.trailing_zeros() as usize;
                        out[r * self.cols + c] += scale;
                        bits &= bits - 1;
                    }
                }
            }
        }
        out
    }

    /// Largest `|W_q|` entry.
    pub fn max_abs_int(&self) -> i64 {
        self.reconstruct_int().iter().map(|v| v.abs()).max().unwrap_or(0)
    }
}

/// Dense real reconstruction `(sum_i scales[i] * bitlayers[i]) / 2^frac_bits`.
pub fn reconstruct(layer: &QuantizedLayer) -> Matrix {
    let scale = (1u64 << layer.frac_bits) as f64;
    let ints = layer.reconstruct_int();
    Matrix::from_vec(
        layer.rows,
        layer.cols,
        ints.iter().map(|&v| (v as f64 / scale) as f32).collect(),
    )
    .expect("reconstruction dims match layer dims")
}

/// Decompose a weight matrix into `n` magnitude bitlayers plus a sign layer.
///
/// For `n >= 2` the matrix first passes the clip search and grid rounding;
/// `n == 1` uses the `{-v, +v}` coder. The fixed-point integers are rounded
/// to the layer window grid, so `reconstruct_int` reproduces them exactly.
pub fn decompose_bitlayers(w: &Matrix, n: u32, frac_bits: u32) -> Result<QuantizedLayer> {
    if !(1..=MAX_WEIGHT_BITS).contains(&n) {
        return Err(Error::InvalidBitWidth { bits: n, min: 1, max: MAX_WEIGHT_BITS });
    }
    if frac_bits > MAX_FRAC_BITS {
        return Err(Error::InvalidFracBits { frac_bits, max: MAX_FRAC_BITS });
    }
    if w.cols() > MAX_COLS {
        return Err(Error::DimensionMismatch(format!(
            "cols {} exceeds supported maximum {}",
            w.cols(),
            MAX_COLS
        )));
    }
    let (rows, cols) = (w.rows(), w.cols());
    if w.max_abs() == 0.0 {
        return Ok(QuantizedLayer {
            bitlayers: vec![BitMatrix::zeros(rows, cols)],
            scales: vec![-1],
            frac_bits,
            rows,
            cols,
            n_bits: 0,
            quant_step: 0.0,
            clip: 0.0,
            degenerate: true,
        });
    }
    let pow_f = (1u64 << frac_bits) as f64;

    if n == 1 {
        let one = quantize_1bit(w);
        let target = one.magnitude * pow_f;
        let b = nearest_pow2_exponent(target);
        if b > 30 {
            return Err(Error::FracBitsOverflow { required_reduction: b - 30 });
        }
        let mut sign = BitMatrix::zeros(rows, cols);
        let mut magnitude = BitMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                magnitude.set(r, c, true);
                if w.get(r, c) < 0.0 {
                    sign.set(r, c, true);
                }
            }
        }
        return Ok(QuantizedLayer {
            bitlayers: vec![sign, magnitude],
            scales: vec![-(1i64 << (b + 1)), 1i64 << b],
            frac_bits,
            rows,
            cols,
            n_bits: 1,
            quant_step: 0.0,
            clip: w.max_abs(),
            degenerate: false,
        });
    }

    let clip = optimize_clip(w, n, &ClipSearchConfig::default())?;
    let q = quantize_round(w, n, clip)?;
    let raw: Vec<i64> =
        q.values.data().iter().map(|&v| (v as f64 * pow_f).round() as i64).collect();
    let max_abs_raw = raw.iter().map(|v| v.abs()).max().unwrap_or(0);
    if max_abs_raw > i32::MAX as i64 {
        let bits_needed = 64 - max_abs_raw.leading_zeros();
        return Err(Error::FracBitsOverflow { required_reduction: bits_needed - 31 });
    }
    if max_abs_raw == 0 {
        return Ok(QuantizedLayer {
            bitlayers: vec![BitMatrix::zeros(rows, cols)],
            scales: vec![-1],
            frac_bits,
            rows,
            cols,
            n_bits: 0,
            quant_step: q.step,
            clip,
            degenerate: true,
        });
    }

    let max_bit = 63 - (max_abs_raw as u64).leading_zeros();
    let bottom = (max_bit + 1).saturating_sub(n);
    let code_lo = -(1i64 << n);
    let code_hi = (1i64 << n) - 1;
    let mut layers = vec![BitMatrix::zeros(rows, cols); n as usize + 1];
    for (idx, &r_val) in raw.iter().enumerate() {
        let code = round_to_window(r_val, bottom).clamp(code_lo, code_hi);
        let bits = (code as u64) & (u64::MAX >> (63 - n));
        if bits == 0 {
            continue;
        }
        let (r, c) = (idx / cols, idx % cols);
        if (bits >> n) & 1 == 1 {
            layers[0].set(r, c, true);
        }
        for l in 1..=n {
            if (bits >> (n - l)) & 1 == 1 {
                layers[l as usize].set(r, c, true);
            }
        }
    }
    let mut scales = Vec::with_capacity(n as usize + 1);
    scales.push(-(1i64 << (n + bottom)));
    for l in 1..=n {
        scales.push(1i64 << (n - l + bottom));
    }
    Ok(QuantizedLayer {
        bitlayers: layers,
        scales,
        frac_bits,
        rows,
        cols,
        n_bits: n,
        quant_step: q.step,
        clip,
        degenerate: q.degenerate,
    })
}

/// Round `v` to the window grid of step `2^bottom`, half away from zero.
fn round_to_window(v: i64, bottom: u32) -> i64 {
    if bottom == 0 {
        return v;
    }
    let half = 1i64 << (bottom - 1);
    if v >= 0 {
        (v + half) >> bottom
    } else {
        -((-v + half) >> bottom)
    }
}

/// Exponent `b >= 0` whose power of two is closest to `target > 0`.
fn nearest_pow2_exponent(target: f64) -> u32 {
    let lg = target.log2();
    let lo = lg.floor().max(0.0) as u32;
    let hi = lg.ceil().max(0.0) as u32;
    let (plo, phi) = ((1u64 << lo) as f64, (1u64 << hi) as f64);
    if (target - plo).abs() <= (phi - target).abs() {
        lo
    } else {
        hi
    }
}

/// Convert an activation vector to fixed point, truncating toward zero.
///
/// Values outside the `k`-bit two's complement range saturate to the range
/// bounds; the saturation count is returned alongside the vector.
pub fn quantize_activation(
    x: &[f32],
    k: u32,
    frac_bits: u32,
) -> Result<(crate::bitcore::FixedPointVector, u64)> {
    if !(1..=32).contains(&k) {
        return Err(Error::InvalidBitWidth { bits: k, min: 1, max: 32 });
    }
    if frac_bits > 31 {
        return Err(Error::InvalidFracBits { frac_bits, max: 31 });
    }
    let scale = (1u64 << frac_bits) as f64;
    let lo = -(1i64 << (k - 1));
    let hi = (1i64 << (k - 1)) - 1;
    let mut saturated = 0u64;
    let mut values = Vec::with_capacity(x.len());
    for &v in x {
        let t = (v as f64 * scale).trunc();
        // f64 -> i64 casts saturate, so out-of-range inputs stay countable
        let t = t as i64;
        if t < lo || t > hi {
            saturated += 1;
        }
        values.push(t.clamp(lo, hi) as i32);
    }
    Ok((crate::bitcore::FixedPointVector::new(values, frac_bits), saturated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn mat(rows: usize, cols: usize, v: &[f32]) -> Matrix {
        Matrix::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn round_matches_hand_computed_example() {
        // w = [0.1, 0.4], n = 2: d = (0.4 - 0.1)/4 = 0.075, out = [0.075, 0.375]
        let out = quantize_round(&mat(1, 2, &[0.1, 0.4]), 2, f64::INFINITY).unwrap();
        // f32 storage of 0.1/0.4 shifts d by ~1e-9
        assert!((out.step - 0.075).abs() < 1e-7);
        assert!((out.values.get(0, 0) - 0.075).abs() < 1e-6);
        assert!((out.values.get(0, 1) - 0.375).abs() < 1e-6);
    }

    #[test]
    fn round_is_identity_on_grid() {
        // values already multiples of d = (1.0 - (-1.0))/8 = 0.25
        let w = mat(1, 4, &[-1.0, -0.25, 0.5, 1.0]);
        let out = quantize_round(&w, 3, f64::INFINITY).unwrap();
        assert_eq!(out.values, w);
    }

    #[test]
    fn round_error_within_half_step() {
        let mut rng = StdRng::seed_from_u64(2);
        let w = mat(4, 32, &(0..128).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f32>>());
        let out = quantize_round(&w, 8, f64::INFINITY).unwrap();
        let half = out.step / 2.0;
        for (q, orig) in out.values.data().iter().zip(w.data()) {
            assert!((*q as f64 - *orig as f64).abs() <= half + 1e-12);
        }
    }

    #[test]
    fn round_flags_constant_matrix() {
        let w = mat(2, 2, &[0.5; 4]);
        let out = quantize_round(&w, 4, f64::INFINITY).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.values, w);
    }

    #[test]
    fn one_bit_uses_mean_abs_magnitude() {
        let out = quantize_1bit(&mat(1, 2, &[-3.0, 1.0]));
        assert_eq!(out.magnitude, 2.0);
        assert_eq!(out.values.data(), &[-2.0, 2.0]);
    }

    #[test]
    fn one_bit_exact_on_symmetric_pair() {
        let out = quantize_1bit(&mat(1, 2, &[0.7, -0.7]));
        assert_eq!(out.values.data(), &[0.7, -0.7]);
    }

    #[test]
    fn one_bit_zero_matrix_degenerate() {
        let out = quantize_1bit(&Matrix::zeros(3, 3));
        assert!(out.degenerate);
        assert!(out.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_bit_magnitude_optimal_in_l2_over_grid() {
        // mean(|w|) minimizes the squared error of any {-u, +u} code; sweep
        // u on a grid as the oracle. (Mean minimizes L2, median would be L1.)
        let mut rng = StdRng::seed_from_u64(9);
        let w = mat(1, 64, &(0..64).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f32>>());
        let out = quantize_1bit(&w);
        let sq_err = |u: f64| -> f64 {
            w.data()
                .iter()
                .map(|&x| {
                    let q = if x < 0.0 { -u } else { u };
                    (x as f64 - q) * (x as f64 - q)
                })
                .sum()
        };
        let chosen = sq_err(out.magnitude);
        for i in 1..=400 {
            let u = 2.5 * i as f64 / 400.0;
            assert!(chosen <= sq_err(u) + 1e-9);
        }
    }

    #[test]
    fn clip_keeps_full_range_without_outliers() {
        // At 8 bits the grid is fine enough that clipping uniform data only
        // adds error; at very coarse grids a slight clip can genuinely win.
        let mut rng = StdRng::seed_from_u64(4);
        let w = mat(4, 64, &(0..256).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f32>>());
        let cfg = ClipSearchConfig::default();
        let t = optimize_clip(&w, 8, &cfg).unwrap();
        // exhaustive candidate evaluation oracle
        let max_abs = w.max_abs();
        let mut best = (f64::INFINITY, max_abs);
        for i in 1..=cfg.num_candidates {
            let cand = max_abs * i as f64 / cfg.num_candidates as f64;
            let out = quantize_round(&w, 8, cand).unwrap();
            if out.degenerate {
                continue;
            }
            let err = mean_abs_diff(&out.values, &w);
            if err <= best.0 {
                best = (err, cand);
            }
        }
        assert_eq!(t, best.1);
        assert_eq!(t, max_abs, "uniform data keeps the full range at 8 bits");
    }

    #[test]
    fn clip_shrinks_below_max_with_outlier() {
        let mut rng = StdRng::seed_from_u64(6);
        let mut vals: Vec<f32> = (0..99).map(|_| rng.random_range(-0.1..0.1)).collect();
        vals.push(10.0);
        let w = mat(10, 10, &vals);
        let t = optimize_clip(&w, 4, &ClipSearchConfig::default()).unwrap();
        assert!(t < w.max_abs());
    }

    #[test]
    fn clip_never_worse_than_unclipped() {
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..5 {
            let vals: Vec<f32> = (0..80).map(|_| rng.random_range(-3.0..3.0)).collect();
            let w = mat(8, 10, &vals);
            let t = optimize_clip(&w, 3, &ClipSearchConfig::default()).unwrap();
            let clipped = quantize_round(&w, 3, t).unwrap();
            let unclipped = quantize_round(&w, 3, w.max_abs()).unwrap();
            assert!(
                mean_abs_diff(&clipped.values, &w) <= mean_abs_diff(&unclipped.values, &w) + 1e-12
            );
        }
    }

    #[test]
    fn decompose_matches_worked_example() {
        // W = [[1,-1],[4,-4]], n = 3, frac_bits = 0
        let w = mat(2, 2, &[1.0, -1.0, 4.0, -4.0]);
        let layer = decompose_bitlayers(&w, 3, 0).unwrap();
        assert_eq!(layer.scales(), &[-8, 4, 2, 1]);
        let unpacked: Vec<Vec<u8>> = layer.bitlayers().iter().map(BitMatrix::unpack).collect();
        assert_eq!(unpacked[0], vec![0, 1, 0, 1]); // sign layer
        assert_eq!(unpacked[1], vec![0, 1, 1, 1]);
        assert_eq!(unpacked[2], vec![0, 1, 0, 0]);
        assert_eq!(unpacked[3], vec![1, 1, 0, 0]);
        assert_eq!(layer.reconstruct_int(), vec![1, -1, 4, -4]);
    }

    #[test]
    fn decompose_zero_matrix_is_degenerate() {
        let layer = decompose_bitlayers(&Matrix::zeros(3, 5), 4, 16).unwrap();
        assert!(layer.is_degenerate());
        assert_eq!(layer.n_bits(), 0);
        assert!(layer.reconstruct_int().iter().all(|&v| v == 0));
    }

    #[test]
    fn decompose_scale_structure() {
        let mut rng = StdRng::seed_from_u64(13);
        let w = mat(4, 48, &(0..192).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f32>>());
        for n in [2u32, 5, 8, 16] {
            let layer = decompose_bitlayers(&w, n, 16).unwrap();
            let s = layer.scales();
            assert_eq!(s.len() as u32, n + 1);
            assert_eq!(s[0], -2 * s[1]);
            for i in 1..s.len() - 1 {
                assert_eq!(s[i], 2 * s[i + 1], "consecutive descending powers of two");
            }
        }
    }

    #[test]
    fn decompose_reconstruction_error_bound() {
        // |recon / 2^16 - w| <= 2^-17 + d/2 element-wise; amplitudes below 1
        // keep the full 16-bit window so no low bits are dropped.
        let mut rng = StdRng::seed_from_u64(12);
        let w = mat(8, 64, &(0..512).map(|_| rng.random_range(-0.9..0.9)).collect::<Vec<f32>>());
        let layer = decompose_bitlayers(&w, 16, 16).unwrap();
        let bound = 0.5f64.powi(17) + layer.quant_step() / 2.0;
        let recon = reconstruct(&layer);
        for (q, orig) in recon.data().iter().zip(w.data()) {
            assert!(
                (*q as f64 - *orig as f64).abs() <= bound + 1e-9,
                "recon {q} vs {orig}, bound {bound}"
            );
        }
    }

    #[test]
    fn decompose_int_matches_rounded_quantize_when_window_covers_all_bits() {
        let mut rng = StdRng::seed_from_u64(14);
        let w = mat(4, 32, &(0..128).map(|_| rng.random_range(-0.9..0.9)).collect::<Vec<f32>>());
        let layer = decompose_bitlayers(&w, 16, 16).unwrap();
        let q = quantize_round(&w, 16, layer.clip()).unwrap();
        let expected: Vec<i64> =
            q.values.data().iter().map(|&v| (v as f64 * 65536.0).round() as i64).collect();
        assert_eq!(layer.reconstruct_int(), expected);
    }

    #[test]
    fn decompose_rejects_frac_overflow() {
        let w = mat(1, 2, &[40000.0, -40000.0]);
        let err = decompose_bitlayers(&w, 8, 16).unwrap_err();
        match err {
            Error::FracBitsOverflow { required_reduction } => assert!(required_reduction >= 1),
            other => panic!("expected FracBitsOverflow, got {other:?}"),
        }
    }

    #[test]
    fn activation_fixed_point_example() {
        let (v, sat) = quantize_activation(&[1.5], 32, 16).unwrap();
        assert_eq!(v.values, vec![98304]);
        assert_eq!(sat, 0);
    }

    #[test]
    fn activation_zero_vector() {
        for k in [1, 8, 32] {
            let (v, sat) = quantize_activation(&[0.0, 0.0], k, 16).unwrap();
            assert!(v.values.iter().all(|&x| x == 0));
            assert_eq!(sat, 0);
        }
    }

    #[test]
    fn activation_reconstruction_error() {
        let mut rng = StdRng::seed_from_u64(21);
        let x: Vec<f32> = (0..200).map(|_| rng.random_range(-4.0..4.0)).collect();
        let (v, sat) = quantize_activation(&x, 16, 8).unwrap();
        assert_eq!(sat, 0, "[-4, 4] fits 16-bit at 8 fractional bits");
        for (q, orig) in v.values.iter().zip(&x) {
            assert!((*q as f64 / 256.0 - *orig as f64).abs() <= 1.0 / 256.0 + 1e-12);
        }
    }

    #[test]
    fn activation_saturates_and_counts() {
        let (v, sat) = quantize_activation(&[100.0, -100.0, 0.25], 8, 8).unwrap();
        assert_eq!(v.values, vec![127, -128, 64]);
        assert_eq!(sat, 2);
    }

    #[test]
    fn reconstruct_matches_worked_example() {
        let w = mat(2, 2, &[1.0, -1.0, 4.0, -4.0]);
        let layer = decompose_bitlayers(&w, 3, 0).unwrap();
        assert_eq!(reconstruct(&layer).data(), w.data());
    }

    proptest! {
        // Round-trip exactness: the layer sum reproduces its own integer
        // matrix bit-for-bit, and the real reconstruction stays within the
        // combined rounding bound of the original weights.
        #[test]
        fn prop_decompose_round_trip(
            n in 1u32..=16,
            frac in prop::sample::select(vec![0u32, 8, 16]),
            seed in any::<u64>(),
        ) {
            let mut rng = StdRng::seed_from_u64(seed);
            let rows = rng.random_range(1..6);
            let cols = rng.random_range(1..80);
            let vals: Vec<f32> = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
            let w = Matrix::from_vec(rows, cols, vals).unwrap();
            let layer = decompose_bitlayers(&w, n, frac).unwrap();
            prop_assert_eq!(layer.bitlayers().len(), layer.scales().len());
            let ints = layer.reconstruct_int();
            // every reconstructed integer is representable in the window
            let step = layer.scales().last().map(|s| s.abs()).unwrap_or(1);
            for &v in &ints {
                prop_assert_eq!(v % step, 0);
            }
            if !layer.is_degenerate() && layer.n_bits() >= 2 {
                // reconstruction error vs the clip-clamped weights is at most
                // d/2 (grid rounding) plus the window/int rounding slack
                let bottom_real = step as f64 / (1u64 << frac) as f64;
                let bound = layer.quant_step() / 2.0 + bottom_real;
                let clip = layer.clip();
                let recon = reconstruct(&layer);
                for (q, orig) in recon.data().iter().zip(w.data()) {
                    let clamped = (*orig as f64).clamp(-clip, clip);
                    prop_assert!((*q as f64 - clamped).abs() <= bound + 1e-6);
                }
            }
        }
    }
}
