//! Quantized matrix-vector products over decomposed bitlayers.
//!
//! A matvec converts the activation vector to fixed point once, transposes
//! it into bitplanes once, then accumulates per weight bitlayer: AND/popcount
//! counts, plane-scale reduction, and the signed layer scale. Everything is
//! exact 64-bit integer arithmetic until a single final division by
//! `2^(weight_frac_bits + activation_frac_bits)`.

use crate::bitcore::{
    binary_matvec_batch_into, bitplane_transpose, plane_scales, CountMatrix,
};
use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::quantizer::{quantize_activation, QuantizedLayer, MAX_WEIGHT_BITS};

/// Precision configuration for one quantized matvec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PBatchConfig {
    /// Magnitude bitlayer count `n` (the sign layer is implicit).
    pub weight_bits: u32,
    /// Activation bit count `k`.
    pub activation_bits: u32,
    pub weight_frac_bits: u32,
    pub activation_frac_bits: u32,
}

impl PBatchConfig {
    pub fn new(weight_bits: u32, activation_bits: u32) -> Self {
        Self { weight_bits, activation_bits, weight_frac_bits: 16, activation_frac_bits: 16 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_WEIGHT_BITS).contains(&self.weight_bits) {
            return Err(Error::InvalidBitWidth {
                bits: self.weight_bits,
                min: 1,
                max: MAX_WEIGHT_BITS,
            });
        }
        if !(1..=32).contains(&self.activation_bits) {
            return Err(Error::InvalidBitWidth { bits: self.activation_bits, min: 1, max: 32 });
        }
        if self.weight_frac_bits > 30 {
            return Err(Error::InvalidFracBits { frac_bits: self.weight_frac_bits, max: 30 });
        }
        if self.activation_frac_bits > 31 {
            return Err(Error::InvalidFracBits { frac_bits: self.activation_frac_bits, max: 31 });
        }
        Ok(())
    }

    /// Final rescale divisor `2^(weight_frac_bits + activation_frac_bits)`.
    pub fn rescale_divisor(&self) -> f64 {
        2f64.powi((self.weight_frac_bits + self.activation_frac_bits) as i32)
    }
}

impl Default for PBatchConfig {
    fn default() -> Self {
        Self::new(8, 32)
    }
}

/// Side counters of one quantized matvec.
#[derive(Debug, Clone, Copy, Default)]
pub struct MatvecStats {
    pub saturated_activations: u64,
}

fn check_inputs(layer: &QuantizedLayer, x: &[f32], cfg: &PBatchConfig) -> Result<()> {
    cfg.validate()?;
    if layer.cols() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "layer cols {} != input len {}",
            layer.cols(),
            x.len()
        )));
    }
    if layer.frac_bits() != cfg.weight_frac_bits {
        return Err(Error::ConfigMismatch(format!(
            "layer frac_bits {} != config weight_frac_bits {}",
            layer.frac_bits(),
            cfg.weight_frac_bits
        )));
    }
    if !layer.is_degenerate() && layer.n_bits() != cfg.weight_bits {
        return Err(Error::ConfigMismatch(format!(
            "layer has {} magnitude bits, config expects {}",
            layer.n_bits(),
            cfg.weight_bits
        )));
    }
    Ok(())
}

fn accumulate(
    layer: &QuantizedLayer,
    x: &[f32],
    cfg: &PBatchConfig,
    layer_indices: &[usize],
) -> Result<(Vec<f32>, MatvecStats)> {
    let (xq, saturated) = quantize_activation(x, cfg.activation_bits, cfg.activation_frac_bits)?;
    let (planes, _) = bitplane_transpose(&xq, cfg.activation_bits)?;
    let mut pscales = plane_scales(cfg.activation_bits);
    // fold the sign-extension planes: bit-identical rows give identical
    // counts, so summing their scales changes nothing but the work done
    let run = crate::bitcore::leading_duplicate_planes(&planes);
    let planes = if run > 1 {
        let folded: i64 = pscales[..run].iter().sum();
        let mut scales = vec![folded];
        scales.extend_from_slice(&pscales[run..]);
        pscales = scales;
        crate::bitcore::fold_leading_planes(&planes, run)
    } else {
        planes
    };
    let rows = layer.rows();
    let mut acc = vec![0i64; rows];
    let mut counts = CountMatrix::zeros(rows, pscales.len());
    for &idx in layer_indices {
        let scale = layer.scales()[idx];
        binary_matvec_batch_into(&layer.bitlayers()[idx], &planes, &mut counts)?;
        let folded = crate::bitcore::reduce_planes(&counts, &pscales);
        for (a, t) in acc.iter_mut().zip(&folded) {
            *a += scale * t;
        }
    }
    let div = cfg.rescale_divisor();
    let out = acc.iter().map(|&a| (a as f64 / div) as f32).collect();
    Ok((out, MatvecStats { saturated_activations: saturated }))
}

/// Full quantized matvec over all bitlayers of `layer`.
pub fn pbatch_matvec(layer: &QuantizedLayer, x: &[f32], cfg: &PBatchConfig) -> Result<Vec<f32>> {
    Ok(pbatch_matvec_stats(layer, x, cfg)?.0)
}

/// As [`pbatch_matvec`], also returning saturation counters.
pub fn pbatch_matvec_stats(
    layer: &QuantizedLayer,
    x: &[f32],
    cfg: &PBatchConfig,
) -> Result<(Vec<f32>, MatvecStats)> {
    check_inputs(layer, x, cfg)?;
    let all: Vec<usize> = (0..layer.bitlayers().len()).collect();
    accumulate(layer, x, cfg, &all)
}

/// Accumulate only the sign layer plus the top `use_layers - 1` magnitude
/// layers. `use_layers == n + 1` reproduces [`pbatch_matvec`] exactly; the
/// sign layer is mandatory, so `use_layers == 0` is rejected.
pub fn pbatch_matvec_partial(
    layer: &QuantizedLayer,
    x: &[f32],
    cfg: &PBatchConfig,
    use_layers: usize,
) -> Result<Vec<f32>> {
    check_inputs(layer, x, cfg)?;
    let total = layer.bitlayers().len();
    if use_layers == 0 || use_layers > total {
        return Err(Error::ConfigMismatch(format!(
            "use_layers must be in 1..={total}, got {use_layers}"
        )));
    }
    let indices: Vec<usize> = (0..use_layers).collect();
    Ok(accumulate(layer, x, cfg, &indices)?.0)
}

/// Dense full-precision matvec, the float baseline and testing oracle.
///
/// Accumulates in f64 over eight column stripes (`c % 8`) combined in a fixed
/// tree, which vectorizes without reassociation and is bit-deterministic.
pub fn reference_float_matvec(w: &Matrix, x: &[f32]) -> Result<Vec<f32>> {
    if w.cols() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "matrix cols {} != input len {}",
            w.cols(),
            x.len()
        )));
    }
    let mut out = Vec::with_capacity(w.rows());
    for r in 0..w.rows() {
        let row = w.row(r);
        let mut acc = [0.0f64; 8];
        let chunks = row.len() / 8;
        for i in 0..chunks {
            let rc = &row[i * 8..i * 8 + 8];
            let xc = &x[i * 8..i * 8 + 8];
            for j in 0..8 {
                acc[j] += rc[j] as f64 * xc[j] as f64;
            }
        }
        for (j, c) in (chunks * 8..row.len()).enumerate() {
            acc[j] += row[c] as f64 * x[c] as f64;
        }
        let s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
        out.push(s as f32);
    }
    Ok(out)
}

/// Dense integer matvec of the layer's `W_q` against the fixed-point
/// activation, rescaled like the packed path. Testing oracle only.
pub fn dense_int_matvec_oracle(
    layer: &QuantizedLayer,
    x: &[f32],
    cfg: &PBatchConfig,
) -> Result<Vec<f32>> {
    check_inputs(layer, x, cfg)?;
    let (xq, _) = quantize_activation(x, cfg.activation_bits, cfg.activation_frac_bits)?;
    let wq = layer.reconstruct_int();
    let div = cfg.rescale_divisor();
    let mut out = Vec::with_capacity(layer.rows());
    for r in 0..layer.rows() {
        let mut acc = 0i64;
        for c in 0..layer.cols() {
            acc += wq[r * layer.cols() + c] * xq.values[c] as i64;
        }
        out.push((acc as f64 / div) as f32);
    }
    Ok(out)
}
