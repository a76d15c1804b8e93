//! Reference uniform integer quantized inference and a float16 comparison
//! point, simulated portably with exact integer/fixed-point semantics.
//!
//! Weights and activations are quantized to the same bit width with a
//! symmetric per-tensor scale (max magnitude mapped to the top of the signed
//! range), the dot products run in 64-bit integers, and the two scales are
//! applied afterwards. Weights reuse the clip-search preprocessing of the
//! quantizer; activations are scaled at call time.

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::quantizer::{optimize_clip, quantize_1bit, ClipSearchConfig};

/// Uniform integer quantization settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IntQuantConfig {
    pub bits: u32,
}

impl IntQuantConfig {
    pub fn new(bits: u32) -> Self {
        Self { bits }
    }

    pub fn validate(&self) -> Result<()> {
        if ![1, 4, 8, 16].contains(&self.bits) {
            return Err(Error::InvalidBitWidth { bits: self.bits, min: 1, max: 16 });
        }
        Ok(())
    }
}

/// Weight tensor quantized to a symmetric integer grid, reusable across calls.
#[derive(Debug, Clone)]
pub struct IntQuantWeights {
    pub bits: u32,
    rows: usize,
    cols: usize,
    values: Vec<i32>,
    scale: f64,
    pub degenerate: bool,
}

impl IntQuantWeights {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Bytes of a packed copy at `bits` per weight, the memory-model figure.
    pub fn packed_bytes(&self) -> u64 {
        ((self.rows * self.cols) as u64 * self.bits as u64).div_ceil(8)
    }
}

/// Quantize a weight matrix for the integer baseline (offline preprocessing).
pub fn prepare_int_weights(w: &Matrix, cfg: IntQuantConfig) -> Result<IntQuantWeights> {
    cfg.validate()?;
    let (rows, cols) = (w.rows(), w.cols());
    if cfg.bits == 1 {
        let one = quantize_1bit(w);
        let values = w.data().iter().map(|&v| if v < 0.0 { -1 } else { 1 }).collect();
        return Ok(IntQuantWeights {
            bits: 1,
            rows,
            cols,
            values,
            scale: one.magnitude,
            degenerate: one.degenerate,
        });
    }
    let clip = optimize_clip(w, cfg.bits, &ClipSearchConfig::default())?;
    let clamped: Vec<f64> = w.data().iter().map(|&v| (v as f64).clamp(-clip, clip)).collect();
    let max_abs = clamped.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Ok(IntQuantWeights {
            bits: cfg.bits,
            rows,
            cols,
            values: vec![0; rows * cols],
            scale: 0.0,
            degenerate: true,
        });
    }
    let int_max = ((1i64 << (cfg.bits - 1)) - 1) as f64;
    let scale = max_abs / int_max;
    let values = clamped.iter().map(|&v| (v / scale).round() as i32).collect();
    Ok(IntQuantWeights { bits: cfg.bits, rows, cols, values, scale, degenerate: false })
}

/// Outcome of a baseline matvec; `degenerate` marks all-zero tensors.
#[derive(Debug, Clone)]
pub struct IntMatvecOutput {
    pub values: Vec<f32>,
    pub degenerate: bool,
}

/// Apply prepared integer weights; activations are quantized per call.
pub fn apply_int_weights(prep: &IntQuantWeights, x: &[f32]) -> Result<IntMatvecOutput> {
    if prep.cols != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "weight cols {} != input len {}",
            prep.cols,
            x.len()
        )));
    }
    let (xq, x_scale, x_degenerate) = quantize_activation_symmetric(x, prep.bits);
    if prep.degenerate || x_degenerate {
        return Ok(IntMatvecOutput { values: vec![0.0; prep.rows], degenerate: true });
    }
    let combined = prep.scale * x_scale;
    let mut values = Vec::with_capacity(prep.rows);
    for r in 0..prep.rows {
        let row = &prep.values[r * prep.cols..(r + 1) * prep.cols];
        let mut acc = 0i64;
        for (&wv, &xv) in row.iter().zip(&xq) {
            acc += wv as i64 * xv as i64;
        }
        values.push((acc as f64 * combined) as f32);
    }
    Ok(IntMatvecOutput { values, degenerate: false })
}

fn quantize_activation_symmetric(x: &[f32], bits: u32) -> (Vec<i32>, f64, bool) {
    if bits == 1 {
        let n = x.len().max(1);
        let v = x.iter().map(|&a| (a as f64).abs()).sum::<f64>() / n as f64;
        if v == 0.0 {
            return (vec![0; x.len()], 0.0, true);
        }
        return (x.iter().map(|&a| if a < 0.0 { -1 } else { 1 }).collect(), v, false);
    }
    let max_abs = x.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    if max_abs == 0.0 {
        return (vec![0; x.len()], 0.0, true);
    }
    let int_max = ((1i64 << (bits - 1)) - 1) as f64;
    let scale = max_abs / int_max;
    (x.iter().map(|&v| (v as f64 / scale).round() as i32).collect(), scale, false)
}

/// Uniform integer quantized matvec: quantize both operands to `cfg.bits`,
/// take exact integer dot products, then dequantize with both scales.
pub fn int_quantized_matvec(w: &Matrix, x: &[f32], cfg: IntQuantConfig) -> Result<IntMatvecOutput> {
    let prep = prepare_int_weights(w, cfg)?;
    apply_int_weights(&prep, x)
}

/// Round an f32 to the nearest 16-bit float (1 sign, 5 exponent, 10 mantissa
/// bits), ties to even.
pub fn f32_to_f16_bits(value: f32) -> u16 {
    let x = value.to_bits();
    let sign = ((x >> 16) & 0x8000) as u16;
    let exp = ((x >> 23) & 0xff) as i32;
    let man = x & 0x007f_ffff;
    if exp == 0xff {
        // infinities and NaNs pass through
        return sign | 0x7c00 | u16::from(man != 0) << 9;
    }
    let unbiased = exp - 127;
    if unbiased >= 16 {
        return sign | 0x7c00; // overflow to infinity
    }
    if unbiased >= -14 {
        // normal half: round 23-bit mantissa to 10 bits
        let man16 = (man >> 13) as u16;
        let rest = man & 0x1fff;
        let mut h = sign | (((unbiased + 15) as u16) << 10) | man16;
        if rest > 0x1000 || (rest == 0x1000 && (man16 & 1) == 1) {
            h += 1; // carries ripple into the exponent, including up to inf
        }
        return h;
    }
    if unbiased < -25 {
        return sign; // underflow to zero
    }
    // subnormal half: value = full * 2^(unbiased - 23), target ulp 2^-24
    let full = man | 0x0080_0000; // restore the implicit bit
    let shift = (-unbiased - 1) as u32; // 14..=24
    let kept = (full >> shift) as u16;
    let rest = full & ((1u32 << shift) - 1);
    let half = 1u32 << (shift - 1);
    let mut h = sign | kept;
    if rest > half || (rest == half && (kept & 1) == 1) {
        h += 1;
    }
    h
}

/// Expand 16-bit float bits back to f32 exactly.
pub fn f16_bits_to_f32(bits: u16) -> f32 {
    let sign = if bits & 0x8000 != 0 { -1.0f32 } else { 1.0 };
    let exp = (bits >> 10) & 0x1f;
    let man = (bits & 0x3ff) as f32;
    match exp {
        0 => sign * man * 2f32.powi(-24),
        0x1f => {
            if man == 0.0 {
                sign * f32::INFINITY
            } else {
                f32::NAN
            }
        }
        _ => sign * (1024.0 + man) * 2f32.powi(exp as i32 - 25),
    }
}

/// Weights pre-rounded to half precision (offline preprocessing).
#[derive(Debug, Clone)]
pub struct F16Weights {
    rows: usize,
    cols: usize,
    values: Vec<u16>,
    pub overflowed: bool,
}

impl F16Weights {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Two bytes per weight, the memory-model figure.
    pub fn packed_bytes(&self) -> u64 {
        self.values.len() as u64 * 2
    }
}

pub fn prepare_f16_weights(w: &Matrix) -> F16Weights {
    let mut overflowed = false;
    let values = w
        .data()
        .iter()
        .map(|&v| {
            let h = f32_to_f16_bits(v);
            if v.is_finite() && f16_bits_to_f32(h).is_infinite() {
                overflowed = true;
            }
            h
        })
        .collect();
    F16Weights { rows: w.rows(), cols: w.cols(), values, overflowed }
}

/// Matvec outcome for the half-precision comparison point.
#[derive(Debug, Clone)]
pub struct Float16Output {
    pub values: Vec<f32>,
    pub overflowed: bool,
}

fn f16_decode_lut() -> &'static [f32; 65536] {
    use std::sync::OnceLock;
    static LUT: OnceLock<Box<[f32; 65536]>> = OnceLock::new();
    LUT.get_or_init(|| {
        let mut lut = Box::new([0.0f32; 65536]);
        for (bits, slot) in lut.iter_mut().enumerate() {
            *slot = f16_bits_to_f32(bits as u16);
        }
        lut
    })
}

/// Apply half-rounded weights to a half-rounded activation vector with an
/// exact fixed-point accumulation (products scaled by `2^48` fit i128).
pub fn apply_f16_weights(prep: &F16Weights, x: &[f32]) -> Result<Float16Output> {
    if prep.cols != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "weight cols {} != input len {}",
            prep.cols,
            x.len()
        )));
    }
    let lut = f16_decode_lut();
    let mut overflowed = prep.overflowed;
    let xh: Vec<f32> = x
        .iter()
        .map(|&v| {
            let back = lut[f32_to_f16_bits(v) as usize];
            if v.is_finite() && back.is_infinite() {
                overflowed = true;
            }
            back
        })
        .collect();
    let scale = 2f64.powi(48);
    let mut values = Vec::with_capacity(prep.rows);
    for r in 0..prep.rows {
        let row = &prep.values[r * prep.cols..(r + 1) * prep.cols];
        let mut acc: i128 = 0;
        for (&wb, &xv) in row.iter().zip(&xh) {
            let p = lut[wb as usize] as f64 * xv as f64;
            // each product has <= 22 significant bits, so p * 2^48 is an
            // exactly representable integer
            acc += (p * scale) as i128;
        }
        values.push((acc as f64 / scale) as f32);
    }
    Ok(Float16Output { values, overflowed })
}

/// One-shot half-precision matvec over full-precision inputs.
pub fn float16_matvec(w: &Matrix, x: &[f32]) -> Result<Float16Output> {
    let prep = prepare_f16_weights(w);
    apply_f16_weights(&prep, x)
}
