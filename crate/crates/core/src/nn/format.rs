//! PBM1 model file format.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic    b"PBM1"
//! u32      layer count
//! per layer:
//!   u8     kind        0 = linear, 1 = rnn, 2 = lstm
//!   u8     activation  0 = none, 1 = relu, 2 = tanh, 3 = sigmoid
//!   u32    in_dim
//!   u32    out_dim     (hidden size for recurrent kinds)
//!   tensors, each: u32 rank, u64 dims[rank], f32 data row-major
//! ```
//!
//! Tensor order per kind: linear `W [out,in], b [out]`; rnn
//! `W_ih [h,in], W_hh [h,h], b [h]`; lstm `W_ih [4h,in], W_hh [4h,h], b [4h]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, LayerKind, LinearLayer, Model, RecurrentWeights};

const MAGIC: &[u8; 4] = b"PBM1";
/// Per-tensor element cap; anything above is treated as a corrupt header.
const MAX_TENSOR_ELEMENTS: u64 = 100_000_000;

pub fn save_model<W: Write>(model: &Model, mut out: W) -> Result<()> {
    model.validate()?;
    out.write_all(MAGIC)?;
    out.write_all(&(model.layers.len() as u32).to_le_bytes())?;
    for layer in &model.layers {
        out.write_all(&[layer.kind_code(), layer.activation.code()])?;
        out.write_all(&(layer.in_dim() as u32).to_le_bytes())?;
        out.write_all(&(layer.out_dim() as u32).to_le_bytes())?;
        match &layer.kind {
            LayerKind::Linear(l) => {
                write_matrix(&mut out, &l.weight)?;
                write_vector(&mut out, &l.bias)?;
            }
            LayerKind::Rnn(r) | LayerKind::Lstm(r) => {
                write_matrix(&mut out, &r.w_ih)?;
                write_matrix(&mut out, &r.w_hh)?;
                write_vector(&mut out, &r.bias)?;
            }
        }
    }
    Ok(())
}

pub fn save_model_path(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    save_model(model, &mut writer)?;
    writer.flush()?;
    Ok(())
}

pub fn load_model<R: Read>(mut input: R) -> Result<Model> {
    let mut magic = [0u8; 4];
    read_exact(&mut input, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:02x?}, expected \"PBM1\"")));
    }
    let layer_count = read_u32(&mut input)?;
    let mut layers = Vec::new();
    for i in 0..layer_count {
        let mut head = [0u8; 2];
        read_exact(&mut input, &mut head)?;
        let activation = Activation::from_code(head[1])?;
        let in_dim = read_u32(&mut input)? as usize;
        let out_dim = read_u32(&mut input)? as usize;
        let kind = match head[0] {
            0 => {
                let weight = read_matrix(&mut input, out_dim, in_dim, i, "weight")?;
                let bias = read_vector(&mut input, out_dim, i, "bias")?;
                LayerKind::Linear(LinearLayer { weight, bias })
            }
            1 | 2 => {
                let gates = if head[0] == 1 { 1 } else { 4 };
                let w_ih = read_matrix(&mut input, gates * out_dim, in_dim, i, "w_ih")?;
                let w_hh = read_matrix(&mut input, gates * out_dim, out_dim, i, "w_hh")?;
                let bias = read_vector(&mut input, gates * out_dim, i, "bias")?;
                let weights = RecurrentWeights { w_ih, w_hh, bias };
                if head[0] == 1 {
                    LayerKind::Rnn(weights)
                } else {
                    LayerKind::Lstm(weights)
                }
            }
            other => return Err(Error::Format(format!("unknown layer kind {other}"))),
        };
        layers.push(Layer { kind, activation });
    }
    let model = Model { layers };
    model.validate()?;
    Ok(model)
}

pub fn load_model_path(path: impl AsRef<Path>) -> Result<Model> {
    let file = File::open(&path).map_err(|e| {
        Error::Format(format!("cannot open {}: {e}", path.as_ref().display()))
    })?;
    load_model(BufReader::new(file))
}

fn write_matrix<W: Write>(out: &mut W, m: &Matrix) -> Result<()> {
    out.write_all(&2u32.to_le_bytes())?;
    out.write_all(&(m.rows() as u64).to_le_bytes())?;
    out.write_all(&(m.cols() as u64).to_le_bytes())?;
    for v in m.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_vector<W: Write>(out: &mut W, v: &[f32]) -> Result<()> {
    out.write_all(&1u32.to_le_bytes())?;
    out.write_all(&(v.len() as u64).to_le_bytes())?;
    for x in v {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_matrix<R: Read>(
    input: &mut R,
    rows: usize,
    cols: usize,
    layer: u32,
    name: &str,
) -> Result<Matrix> {
    let dims = read_tensor_header(input, 2, layer, name)?;
    if dims[0] != rows as u64 || dims[1] != cols as u64 {
        return Err(Error::Format(format!(
            "layer {layer} tensor {name}: dims {dims:?} do not match header {rows}x{cols}"
        )));
    }
    let data = read_f32s(input, rows * cols, layer, name)?;
    Matrix::from_vec(rows, cols, data)
}

fn read_vector<R: Read>(input: &mut R, len: usize, layer: u32, name: &str) -> Result<Vec<f32>> {
    let dims = read_tensor_header(input, 1, layer, name)?;
    if dims[0] != len as u64 {
        return Err(Error::Format(format!(
            "layer {layer} tensor {name}: dims {dims:?} do not match header len {len}"
        )));
    }
    read_f32s(input, len, layer, name)
}

fn read_tensor_header<R: Read>(
    input: &mut R,
    expect_rank: u32,
    layer: u32,
    name: &str,
) -> Result<Vec<u64>> {
    let rank = read_u32(input)?;
    if rank != expect_rank {
        return Err(Error::Format(format!(
            "layer {layer} tensor {name}: rank {rank}, expected {expect_rank}"
        )));
    }
    let mut dims = Vec::with_capacity(rank as usize);
    let mut product: u64 = 1;
    for _ in 0..rank {
        let mut buf = [0u8; 8];
        read_exact(input, &mut buf)?;
        let d = u64::from_le_bytes(buf);
        product = product.checked_mul(d).ok_or_else(|| {
            Error::Format(format!("layer {layer} tensor {name}: dimension overflow"))
        })?;
        dims.push(d);
    }
    if product > MAX_TENSOR_ELEMENTS {
        return Err(Error::Format(format!(
            "layer {layer} tensor {name}: {product} elements exceed the supported maximum"
        )));
    }
    Ok(dims)
}

fn read_f32s<R: Read>(input: &mut R, count: usize, layer: u32, name: &str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    input.read_exact(&mut bytes).map_err(|e| {
        Error::Format(format!("layer {layer} tensor {name}: truncated data ({e})"))
    })?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(input, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input
        .read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated file ({e})")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_model(seed: u64) -> Model {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut rand_mat = |rows: usize, cols: usize| {
            Matrix::from_vec(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            )
            .unwrap()
        };
        let lstm = RecurrentWeights {
            w_ih: rand_mat(12, 5),
            w_hh: rand_mat(12, 3),
            bias: vec![0.125; 12],
        };
        let linear = LinearLayer { weight: rand_mat(4, 3), bias: vec![-0.5, 0.0, 0.5, 1.0] };
        Model {
            layers: vec![
                Layer { kind: LayerKind::Lstm(lstm), activation: Activation::None },
                Layer { kind: LayerKind::Linear(linear), activation: Activation::None },
            ],
        }
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let model = random_model(60);
        let mut bytes = Vec::new();
        save_model(&model, &mut bytes).unwrap();
        let loaded = load_model(bytes.as_slice()).unwrap();
        let mut bytes2 = Vec::new();
        save_model(&loaded, &mut bytes2).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn empty_model_is_valid() {
        let mut bytes = Vec::new();
        save_model(&Model::default(), &mut bytes).unwrap();
        assert_eq!(bytes.len(), 8);
        let loaded = load_model(bytes.as_slice()).unwrap();
        assert!(loaded.layers.is_empty());
    }

    #[test]
    fn corrupted_magic_rejected() {
        let mut bytes = Vec::new();
        save_model(&random_model(61), &mut bytes).unwrap();
        bytes[0] = b'X';
        let err = load_model(bytes.as_slice()).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn truncated_file_rejected() {
        let mut bytes = Vec::new();
        save_model(&random_model(62), &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 7);
        assert!(load_model(bytes.as_slice()).is_err());
    }

    #[test]
    fn oversized_dims_rejected() {
        // hand-built header with an absurd tensor size
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"PBM1");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8, 0u8]); // linear, none
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes()); // rank
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&4u64.to_le_bytes());
        assert!(load_model(bytes.as_slice()).is_err());
    }

    #[test]
    fn golden_byte_layout() {
        // 1x1 identity linear layer, relu: freeze the exact byte sequence
        let model = Model {
            layers: vec![Layer {
                kind: LayerKind::Linear(LinearLayer {
                    weight: Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
                    bias: vec![0.0],
                }),
                activation: Activation::Relu,
            }],
        };
        let mut bytes = Vec::new();
        save_model(&model, &mut bytes).unwrap();
        let expect: Vec<u8> = [
            b"PBM1".as_slice(),
            &1u32.to_le_bytes(),          // layer count
            &[0u8, 1u8],                  // linear, relu
            &1u32.to_le_bytes(),          // in_dim
            &1u32.to_le_bytes(),          // out_dim
            &2u32.to_le_bytes(),          // weight rank
            &1u64.to_le_bytes(),
            &1u64.to_le_bytes(),
            &1.0f32.to_le_bytes(),
            &1u32.to_le_bytes(),          // bias rank
            &1u64.to_le_bytes(),
            &0.0f32.to_le_bytes(),
        ]
        .concat();
        assert_eq!(bytes, expect);
    }
}
