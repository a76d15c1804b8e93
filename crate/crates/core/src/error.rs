use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("element at ({row}, {col}) is not 0 or 1 (got {value})")]
    NonBinaryElement { row: usize, col: usize, value: u8 },

    #[error("bit width {bits} outside supported range {min}..={max}")]
    InvalidBitWidth { bits: u32, min: u32, max: u32 },

    #[error("fractional bit count {frac_bits} outside supported range 0..={max}")]
    InvalidFracBits { frac_bits: u32, max: u32 },

    #[error("clip threshold must be positive, got {0}")]
    InvalidClipThreshold(f64),

    #[error(
        "quantized weights overflow 32-bit integers; reduce frac_bits by at least {required_reduction}"
    )]
    FracBitsOverflow { required_reduction: u32 },

    #[error("layer/config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("precision assignment error: {0}")]
    Assignment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
