//! Bit-serial quantized inference over scaled 1-bit weight layers.
//!
//! Weight matrices are decomposed offline into a negated sign layer plus `n`
//! magnitude bitlayers, each a packed binary matrix with a power-of-two
//! scale. At inference time the activation vector is converted to fixed
//! point, transposed into a batch of bitplanes, and every weight layer is
//! applied with AND/popcount operations; one exact integer reduction and a
//! single final division recover the real-valued result. Any weight
//! precision from 1 to 16 bits runs on plain integer hardware this way, and
//! the number of accumulated layers is a runtime knob.
//!
//! Modules:
//! - [`bitcore`]: packed binary matrices, bitplane transpose, popcount kernels
//! - [`quantizer`]: rounding, clip search, bitlayer decomposition
//! - [`engine`]: the quantized matvec and its float reference
//! - [`baseline`]: uniform integer and float16 comparison points
//! - [`nn`]: linear/RNN/LSTM layers, models, serialization, datasets
//! - [`harness`]: benchmarks, accuracy eval, precision sweeps, Pareto tools

pub mod baseline;
pub mod bitcore;
pub mod dense;
pub mod engine;
pub mod error;
pub mod harness;
pub mod nn;
pub mod quantizer;

pub use bitcore::{
    binary_matvec_batch, bitplane_transpose, pack_bit_matrix, plane_scales, reduce_planes,
    BitMatrix, CountMatrix, FixedPointVector,
};
pub use dense::Matrix;
pub use engine::{
    pbatch_matvec, pbatch_matvec_partial, pbatch_matvec_stats, reference_float_matvec,
    PBatchConfig,
};
pub use error::{Error, Result};
pub use quantizer::{
    decompose_bitlayers, optimize_clip, quantize_1bit, quantize_activation, quantize_round,
    reconstruct, ClipSearchConfig, QuantizedLayer,
};
