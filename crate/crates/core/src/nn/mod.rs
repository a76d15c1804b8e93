//! Model layer zoo (linear, vanilla RNN cell, LSTM cell) wired to any matvec
//! backend, plus per-layer precision assignments.
//!
//! Only the matrix-vector products are quantized; biases, gate
//! nonlinearities and elementwise ops stay in full precision. LSTM gate
//! matrices concatenate the input, forget, cell and output gates row-wise in
//! that order. Recurrent layers run both of their matvecs (input-to-hidden
//! and hidden-to-hidden) under the same assignment entry.

pub mod dataset;
pub mod format;

use crate::baseline::{apply_int_weights, prepare_int_weights, IntQuantConfig, IntQuantWeights};
use crate::dense::Matrix;
use crate::engine::{pbatch_matvec, reference_float_matvec, PBatchConfig};
use crate::error::{Error, Result};
use crate::quantizer::{decompose_bitlayers, QuantizedLayer};

/// Elementwise activation applied after a linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, v: f32) -> f32 {
        match self {
            Activation::None => v,
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => sigmoid(v),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Sigmoid => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Activation::None,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Sigmoid,
            _ => return Err(Error::Format(format!("unknown activation code {code}"))),
        })
    }
}

fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

/// Fully connected layer: `activation(W x + b)`.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: Matrix,
    pub bias: Vec<f32>,
}

/// Weights of a recurrent cell. For an RNN the matrices have `hidden` rows;
/// for an LSTM they have `4 * hidden` rows (gates i, f, g, o stacked).
#[derive(Debug, Clone)]
pub struct RecurrentWeights {
    pub w_ih: Matrix,
    pub w_hh: Matrix,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone)]
pub enum LayerKind {
    Linear(LinearLayer),
    Rnn(RecurrentWeights),
    Lstm(RecurrentWeights),
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub kind: LayerKind,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        match &self.kind {
            LayerKind::Linear(l) => l.weight.cols(),
            LayerKind::Rnn(r) | LayerKind::Lstm(r) => r.w_ih.cols(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match &self.kind {
            LayerKind::Linear(l) => l.weight.rows(),
            LayerKind::Rnn(r) | LayerKind::Lstm(r) => r.w_hh.cols(),
        }
    }

    pub fn kind_code(&self) -> u8 {
        match &self.kind {
            LayerKind::Linear(_) => 0,
            LayerKind::Rnn(_) => 1,
            LayerKind::Lstm(_) => 2,
        }
    }

    pub fn is_recurrent(&self) -> bool {
        !matches!(self.kind, LayerKind::Linear(_))
    }

    fn validate(&self) -> Result<()> {
        match &self.kind {
            LayerKind::Linear(l) => {
                if l.bias.len() != l.weight.rows() {
                    return Err(Error::DimensionMismatch(format!(
                        "bias len {} != weight rows {}",
                        l.bias.len(),
                        l.weight.rows()
                    )));
                }
            }
            LayerKind::Rnn(r) => validate_recurrent(r, 1)?,
            LayerKind::Lstm(r) => validate_recurrent(r, 4)?,
        }
        Ok(())
    }
}

fn validate_recurrent(r: &RecurrentWeights, gates: usize) -> Result<()> {
    let hidden = r.w_hh.cols();
    if r.w_ih.rows() != gates * hidden
        || r.w_hh.rows() != gates * hidden
        || r.bias.len() != gates * hidden
    {
        return Err(Error::DimensionMismatch(format!(
            "recurrent weights need {gates}x{hidden} gate rows, got ih {}x{}, hh {}x{}, bias {}",
            r.w_ih.rows(),
            r.w_ih.cols(),
            r.w_hh.rows(),
            r.w_hh.cols(),
            r.bias.len()
        )));
    }
    Ok(())
}

/// Ordered layers with full-precision weights.
#[derive(Debug, Clone, Default)]
pub struct Model {
    pub layers: Vec<Layer>,
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        for layer in &self.layers {
            layer.validate()?;
        }
        for pair in self.layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "layer output dim {} feeds layer input dim {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(Layer::in_dim)
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(Layer::out_dim)
    }

    pub fn has_recurrent(&self) -> bool {
        self.layers.iter().any(Layer::is_recurrent)
    }
}

/// Backend choice for one layer's matvecs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackendSpec {
    Float,
    Baseline { bits: u32 },
    Pbatch { weight_bits: u32, activation_bits: u32 },
}

pub const PBATCH_WEIGHT_BITS: &[u32] = &[1, 2, 3, 4, 8, 16];
pub const PBATCH_ACT_BITS: &[u32] = &[8, 16, 32];
pub const BASELINE_BITS: &[u32] = &[1, 4, 8, 16, 32];

impl BackendSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BackendSpec::Float => Ok(()),
            BackendSpec::Baseline { bits } => {
                if !BASELINE_BITS.contains(&bits) {
                    return Err(Error::Assignment(format!(
                        "baseline bits must be one of {BASELINE_BITS:?}, got {bits}"
                    )));
                }
                Ok(())
            }
            BackendSpec::Pbatch { weight_bits, activation_bits } => {
                if !PBATCH_WEIGHT_BITS.contains(&weight_bits) {
                    return Err(Error::Assignment(format!(
                        "pbatch weight bits must be one of {PBATCH_WEIGHT_BITS:?}, got {weight_bits}"
                    )));
                }
                if !PBATCH_ACT_BITS.contains(&activation_bits) {
                    return Err(Error::Assignment(format!(
                        "pbatch activation bits must be one of {PBATCH_ACT_BITS:?}, got {activation_bits}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn spec_string(&self) -> String {
        match *self {
            BackendSpec::Float => "f".into(),
            BackendSpec::Baseline { bits } => format!("({bits})"),
            BackendSpec::Pbatch { weight_bits, activation_bits } => {
                format!("({weight_bits},{activation_bits})")
            }
        }
    }
}

/// Fixed-point position used for `k`-bit activations: `k = 32` keeps the
/// full 16 fractional bits; narrower activations keep five integer bits
/// (range ±16) and spend the rest on the fraction.
pub fn activation_frac_bits(k: u32) -> u32 {
    match k {
        32 => 16,
        _ => k.saturating_sub(5).max(1),
    }
}

/// Per-layer backend assignment, written `(n,k)` for pbatch layers, `(b)`
/// for baseline layers and `f` for float, comma-separated in layer order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrecisionAssignment {
    pub entries: Vec<BackendSpec>,
}

impl PrecisionAssignment {
    pub fn all_float(layers: usize) -> Self {
        Self { entries: vec![BackendSpec::Float; layers] }
    }

    pub fn uniform(spec: BackendSpec, layers: usize) -> Self {
        Self { entries: vec![spec; layers] }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for part in split_top_level(s.trim())? {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            if part == "f" || part == "float" {
                entries.push(BackendSpec::Float);
                continue;
            }
            let Some(inner) = part.strip_prefix('(').and_then(|p| p.strip_suffix(')')) else {
                return Err(Error::Assignment(format!(
                    "expected `f`, `(bits)` or `(weight,act)`, got `{part}`"
                )));
            };
            let nums: Vec<&str> = inner.split(',').map(str::trim).collect();
            let parse_u32 = |t: &str| {
                t.parse::<u32>()
                    .map_err(|_| Error::Assignment(format!("invalid number `{t}` in `{part}`")))
            };
            let spec = match nums.as_slice() {
                [b] => {
                    let bits = parse_u32(b)?;
                    if bits == 32 {
                        // 32-bit baseline is full precision
                        BackendSpec::Float
                    } else {
                        BackendSpec::Baseline { bits }
                    }
                }
                [n, k] => BackendSpec::Pbatch {
                    weight_bits: parse_u32(n)?,
                    activation_bits: parse_u32(k)?,
                },
                _ => {
                    return Err(Error::Assignment(format!(
                        "expected 1 or 2 numbers in `{part}`"
                    )))
                }
            };
            spec.validate()?;
            entries.push(spec);
        }
        if entries.is_empty() {
            return Err(Error::Assignment("empty assignment".into()));
        }
        Ok(Self { entries })
    }

    pub fn spec_string(&self) -> String {
        self.entries.iter().map(BackendSpec::spec_string).collect::<Vec<_>>().join(",")
    }

    pub fn validate_for_model(&self, model: &Model) -> Result<()> {
        if self.entries.len() != model.layers.len() {
            return Err(Error::Assignment(format!(
                "assignment has {} entries for {} layers",
                self.entries.len(),
                model.layers.len()
            )));
        }
        for e in &self.entries {
            e.validate()?;
        }
        Ok(())
    }
}

fn split_top_level(s: &str) -> Result<Vec<&str>> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0usize;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return Err(Error::Assignment("unbalanced parentheses".into()));
                }
            }
            ',' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(Error::Assignment("unbalanced parentheses".into()));
    }
    parts.push(&s[start..]);
    Ok(parts)
}

/// One weight matrix prepared for its assigned backend.
#[derive(Debug, Clone)]
pub enum PreparedMatvec {
    Float,
    Baseline(IntQuantWeights),
    Pbatch { layer: QuantizedLayer, cfg: PBatchConfig },
}

impl PreparedMatvec {
    pub fn prepare(w: &Matrix, spec: BackendSpec) -> Result<Self> {
        spec.validate()?;
        Ok(match spec {
            BackendSpec::Float => PreparedMatvec::Float,
            BackendSpec::Baseline { bits: 32 } => PreparedMatvec::Float,
            BackendSpec::Baseline { bits } => {
                PreparedMatvec::Baseline(prepare_int_weights(w, IntQuantConfig::new(bits))?)
            }
            BackendSpec::Pbatch { weight_bits, activation_bits } => {
                let cfg = PBatchConfig {
                    weight_bits,
                    activation_bits,
                    weight_frac_bits: 16,
                    activation_frac_bits: activation_frac_bits(activation_bits),
                };
                let layer = decompose_bitlayers(w, weight_bits, cfg.weight_frac_bits)?;
                PreparedMatvec::Pbatch { layer, cfg }
            }
        })
    }

    pub fn apply(&self, dense: &Matrix, x: &[f32]) -> Result<Vec<f32>> {
        match self {
            PreparedMatvec::Float => reference_float_matvec(dense, x),
            PreparedMatvec::Baseline(prep) => Ok(apply_int_weights(prep, x)?.values),
            PreparedMatvec::Pbatch { layer, cfg } => pbatch_matvec(layer, x, cfg),
        }
    }

    /// Bytes touched for the weights under this backend, for cost models.
    pub fn weight_bytes(&self, dense: &Matrix) -> u64 {
        match self {
            PreparedMatvec::Float => dense.float_bytes(),
            PreparedMatvec::Baseline(prep) => prep.packed_bytes(),
            PreparedMatvec::Pbatch { layer, .. } => layer.packed_bytes(),
        }
    }
}

/// Linear layer forward under a prepared backend.
pub fn linear_forward(
    layer: &LinearLayer,
    activation: Activation,
    x: &[f32],
    backend: &PreparedMatvec,
) -> Result<Vec<f32>> {
    let mut out = backend.apply(&layer.weight, x)?;
    for (o, b) in out.iter_mut().zip(&layer.bias) {
        *o = activation.apply(*o + b);
    }
    Ok(out)
}

/// Vanilla RNN step: `h_t = tanh(W_ih x + W_hh h + b)`.
pub fn rnn_cell(
    weights: &RecurrentWeights,
    x_t: &[f32],
    h_prev: &[f32],
    ih: &PreparedMatvec,
    hh: &PreparedMatvec,
) -> Result<Vec<f32>> {
    let a = ih.apply(&weights.w_ih, x_t)?;
    let b = hh.apply(&weights.w_hh, h_prev)?;
    Ok(a.iter()
        .zip(&b)
        .zip(&weights.bias)
        .map(|((av, bv), bias)| (av + bv + bias).tanh())
        .collect())
}

/// LSTM step with gates i, f, g, o stacked row-wise:
/// `c_t = sigmoid(f) * c_prev + sigmoid(i) * tanh(g)`,
/// `h_t = sigmoid(o) * tanh(c_t)`.
pub fn lstm_cell(
    weights: &RecurrentWeights,
    x_t: &[f32],
    h_prev: &[f32],
    c_prev: &[f32],
    ih: &PreparedMatvec,
    hh: &PreparedMatvec,
) -> Result<(Vec<f32>, Vec<f32>)> {
    let hidden = weights.w_hh.cols();
    let a = ih.apply(&weights.w_ih, x_t)?;
    let b = hh.apply(&weights.w_hh, h_prev)?;
    let gates: Vec<f32> = a
        .iter()
        .zip(&b)
        .zip(&weights.bias)
        .map(|((av, bv), bias)| av + bv + bias)
        .collect();
    let (gi, rest) = gates.split_at(hidden);
    let (gf, rest) = rest.split_at(hidden);
    let (gg, go) = rest.split_at(hidden);
    let mut c_t = Vec::with_capacity(hidden);
    let mut h_t = Vec::with_capacity(hidden);
    for u in 0..hidden {
        let c = sigmoid(gf[u]) * c_prev[u] + sigmoid(gi[u]) * gg[u].tanh();
        h_t.push(sigmoid(go[u]) * c.tanh());
        c_t.push(c);
    }
    Ok((h_t, c_t))
}

/// One input to a model forward pass.
#[derive(Debug, Clone)]
pub enum ModelInput {
    Vector(Vec<f32>),
    Sequence(Vec<Vec<f32>>),
}

/// Per-layer prepared backends for one assignment.
#[derive(Debug, Clone)]
pub enum PreparedLayer {
    Linear(PreparedMatvec),
    Recurrent { ih: PreparedMatvec, hh: PreparedMatvec },
}

impl PreparedLayer {
    pub fn prepare(layer: &Layer, spec: BackendSpec) -> Result<Self> {
        Ok(match &layer.kind {
            LayerKind::Linear(l) => PreparedLayer::Linear(PreparedMatvec::prepare(&l.weight, spec)?),
            LayerKind::Rnn(r) | LayerKind::Lstm(r) => PreparedLayer::Recurrent {
                ih: PreparedMatvec::prepare(&r.w_ih, spec)?,
                hh: PreparedMatvec::prepare(&r.w_hh, spec)?,
            },
        })
    }
}

/// A model bound to one precision assignment, ready to run.
pub struct PreparedModel<'m> {
    model: &'m Model,
    layers: Vec<PreparedLayer>,
}

impl<'m> PreparedModel<'m> {
    pub fn new(model: &'m Model, assignment: &PrecisionAssignment) -> Result<Self> {
        assignment.validate_for_model(model)?;
        let layers = model
            .layers
            .iter()
            .zip(&assignment.entries)
            .map(|(layer, &spec)| PreparedLayer::prepare(layer, spec))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { model, layers })
    }

    pub fn from_prepared(model: &'m Model, layers: Vec<PreparedLayer>) -> Result<Self> {
        if layers.len() != model.layers.len() {
            return Err(Error::Assignment(format!(
                "{} prepared layers for {} model layers",
                layers.len(),
                model.layers.len()
            )));
        }
        Ok(Self { model, layers })
    }

    pub fn forward(&self, input: &ModelInput) -> Result<Vec<f32>> {
        Ok(self.forward_trace(input)?.pop().unwrap_or_else(|| match input {
            ModelInput::Vector(v) => v.clone(),
            ModelInput::Sequence(_) => Vec::new(),
        }))
    }

    /// Forward pass returning each layer's output, last entry is the logits.
    pub fn forward_trace(&self, input: &ModelInput) -> Result<Vec<Vec<f32>>> {
        let mut trace = Vec::with_capacity(self.model.layers.len());
        enum State {
            Vector(Vec<f32>),
            Sequence(Vec<Vec<f32>>),
        }
        let mut state = match input {
            ModelInput::Vector(v) => State::Vector(v.clone()),
            ModelInput::Sequence(s) => State::Sequence(s.clone()),
        };
        for (layer, prepared) in self.model.layers.iter().zip(&self.layers) {
            state = match (&layer.kind, prepared, state) {
                (LayerKind::Linear(l), PreparedLayer::Linear(mv), State::Vector(x)) => {
                    State::Vector(linear_forward(l, layer.activation, &x, mv)?)
                }
                (LayerKind::Linear(_), _, State::Sequence(_)) => {
                    return Err(Error::DimensionMismatch(
                        "linear layer cannot consume a sequence; put recurrent layers first"
                            .into(),
                    ))
                }
                (LayerKind::Rnn(r), PreparedLayer::Recurrent { ih, hh }, State::Sequence(xs)) => {
                    let hidden = r.w_hh.cols();
                    let mut h = vec![0.0f32; hidden];
                    for x_t in &xs {
                        h = rnn_cell(r, x_t, &h, ih, hh)?;
                    }
                    State::Vector(h)
                }
                (LayerKind::Lstm(r), PreparedLayer::Recurrent { ih, hh }, State::Sequence(xs)) => {
                    let hidden = r.w_hh.cols();
                    let mut h = vec![0.0f32; hidden];
                    let mut c = vec![0.0f32; hidden];
                    for x_t in &xs {
                        let (nh, nc) = lstm_cell(r, x_t, &h, &c, ih, hh)?;
                        h = nh;
                        c = nc;
                    }
                    State::Vector(h)
                }
                (LayerKind::Rnn(_) | LayerKind::Lstm(_), _, State::Vector(_)) => {
                    return Err(Error::DimensionMismatch(
                        "recurrent layer needs a sequence input".into(),
                    ))
                }
                _ => return Err(Error::ConfigMismatch("prepared layer kind mismatch".into())),
            };
            trace.push(match &state {
                State::Vector(v) => v.clone(),
                State::Sequence(_) => unreachable!("layers always produce vectors"),
            });
        }
        match state {
            State::Vector(_) => Ok(trace),
            State::Sequence(_) => {
                if self.model.layers.is_empty() {
                    Ok(trace)
                } else {
                    unreachable!()
                }
            }
        }
    }
}

/// Convenience one-shot forward: prepare the assignment, then run.
pub fn model_forward(
    model: &Model,
    input: &ModelInput,
    assignment: &PrecisionAssignment,
) -> Result<Vec<f32>> {
    PreparedModel::new(model, assignment)?.forward(input)
}
