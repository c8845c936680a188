//! Model configurations and the [`Network`] type tying parameters to
//! forward and backward passes.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dense::{dense_backward, dense_forward, DenseTape};
use super::recurrent::{
    aggregate_backward, aggregate_forward, rnn_backward, rnn_forward, tensors_per_direction,
    AggTape, RnnTape,
};
use super::{mean_cross_entropy, softmax_rows, Activation, Params};
use crate::dataset::Features;
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::orthonormalize_columns;
use crate::rng::{stream, Stream};
use crate::Real;

pub const MODEL_MAGIC: [u8; 4] = *b"QNCM";
pub const MODEL_FORMAT_VERSION: u16 = 1;
pub const MAX_WIDTH: usize = 512;
pub const MAX_RNN_LAYERS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Aggregation {
    /// `h_τ ⊕ h̃_1`.
    LastHidden,
    Attention {
        att_dim: usize,
    },
    MaxPool,
}

/// Feed-forward classifier; `layer_dims` runs from the input to the two
/// output logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
    pub weight_decay: f64,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden: &[usize], activation: Activation) -> Self {
        let mut layer_dims = vec![input_dim];
        layer_dims.extend_from_slice(hidden);
        layer_dims.push(2);
        Self {
            layer_dims,
            activation,
            dropout: 0.0,
            weight_decay: 0.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn hidden(&self) -> &[usize] {
        &self.layer_dims[1..self.layer_dims.len() - 1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 || self.layer_dims[0] == 0 {
            return Err(Error::validation("MLP needs an input and an output layer"));
        }
        if *self.layer_dims.last().expect("nonempty") != 2 {
            return Err(Error::validation("MLP output dimension must be 2"));
        }
        validate_widths(self.hidden())?;
        validate_regularisation(self.dropout, self.weight_decay)
    }
}

/// Feed-forward head on top of the aggregation vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnConfig {
    pub input_dim: usize,
    pub cell: CellKind,
    pub layers: usize,
    pub hidden_dim: usize,
    pub bidirectional: bool,
    pub aggregation: Aggregation,
    pub head: HeadConfig,
    pub dropout: f64,
    pub weight_decay: f64,
}

impl RnnConfig {
    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Width of every `u_t` and of the aggregation vector.
    pub fn aggregated_dim(&self) -> usize {
        self.hidden_dim * self.directions()
    }

    pub fn recurrent_tensor_count(&self) -> usize {
        self.layers * self.directions() * tensors_per_direction(self.cell)
    }

    pub fn aggregation_tensor_count(&self) -> usize {
        match self.aggregation {
            Aggregation::Attention { .. } => 3,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::validation("RNN input dimension must be positive"));
        }
        if !(1..=MAX_RNN_LAYERS).contains(&self.layers) {
            return Err(Error::validation(format!(
                "RNN layers must lie in 1..={MAX_RNN_LAYERS}"
            )));
        }
        validate_widths(&[self.hidden_dim])?;
        if let Aggregation::Attention { att_dim } = self.aggregation {
            validate_widths(&[att_dim])?;
        }
        validate_widths(&self.head.hidden)?;
        validate_regularisation(self.dropout, self.weight_decay)
    }
}

fn validate_widths(w: &[usize]) -> Result<()> {
    if let Some(bad) = w.iter().find(|&&h| !(1..=MAX_WIDTH).contains(&h)) {
        return Err(Error::validation(format!(
            "layer width {bad} outside 1..={MAX_WIDTH}"
        )));
    }
    Ok(())
}

fn validate_regularisation(dropout: f64, wd: f64) -> Result<()> {
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::validation("dropout probability must lie in [0, 1)"));
    }
    if !(wd.is_finite() && wd >= 0.0) {
        return Err(Error::validation("weight decay must be nonnegative"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelConfig {
    Mlp(MlpConfig),
    Rnn(RnnConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Weight,
    /// `H × (gates·H)`, orthogonal per gate block.
    Recurrent,
    Bias,
    /// LSTM gate bias, forget block starts at 1.
    LstmBias,
    Context,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Mlp(c) => c.validate(),
            ModelConfig::Rnn(c) => c.validate(),
        }
    }

    pub fn dropout(&self) -> f64 {
        match self {
            ModelConfig::Mlp(c) => c.dropout,
            ModelConfig::Rnn(c) => c.dropout,
        }
    }

    pub fn weight_decay(&self) -> f64 {
        match self {
            ModelConfig::Mlp(c) => c.weight_decay,
            ModelConfig::Rnn(c) => c.weight_decay,
        }
    }

    /// Whether inputs are sequences (`τ × d` per sample).
    pub fn is_sequence(&self) -> bool {
        matches!(self, ModelConfig::Rnn(_))
    }

    /// Flattened input length for the MLP, per-step width for RNNs.
    pub fn input_dim(&self) -> usize {
        match self {
            ModelConfig::Mlp(c) => c.input_dim(),
            ModelConfig::Rnn(c) => c.input_dim,
        }
    }

    fn head_dims(&self) -> (Vec<usize>, Activation) {
        match self {
            ModelConfig::Mlp(c) => (c.layer_dims.clone(), c.activation),
            ModelConfig::Rnn(c) => {
                let mut dims = vec![c.aggregated_dim()];
                dims.extend_from_slice(&c.head.hidden);
                dims.push(2);
                (dims, c.head.activation)
            }
        }
    }

    fn layout(&self) -> Vec<((usize, usize), Role)> {
        let mut out = Vec::new();
        if let ModelConfig::Rnn(c) = self {
            let g = c.cell.gates();
            let h = c.hidden_dim;
            for l in 0..c.layers {
                let input = if l == 0 {
                    c.input_dim
                } else {
                    c.aggregated_dim()
                };
                for _ in 0..c.directions() {
                    out.push(((input, g * h), Role::Weight));
                    out.push(((h, g * h), Role::Recurrent));
                    match c.cell {
                        CellKind::Gru => {
                            out.push(((1, g * h), Role::Bias));
                            out.push(((1, g * h), Role::Bias));
                        }
                        CellKind::Lstm => out.push(((1, g * h), Role::LstmBias)),
                    }
                }
            }
            if let Aggregation::Attention { att_dim } = c.aggregation {
                out.push(((c.aggregated_dim(), att_dim), Role::Weight));
                out.push(((1, att_dim), Role::Bias));
                out.push(((att_dim, 1), Role::Context));
            }
        }
        let (dims, _) = self.head_dims();
        for w in dims.windows(2) {
            out.push(((w[0], w[1]), Role::Weight));
            out.push(((1, w[1]), Role::Bias));
        }
        out
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.layout().into_iter().map(|(s, _)| s).collect()
    }

    /// Which tensors carry the weight-decay penalty (everything but biases).
    pub fn decay_mask(&self) -> Vec<bool> {
        self.layout()
            .into_iter()
            .map(|(_, r)| !matches!(r, Role::Bias | Role::LstmBias))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.param_shapes().iter().map(|(r, c)| r * c).sum()
    }
}

fn xavier<F: Real>((r, c): (usize, usize), rng: &mut Stream) -> Array2<F> {
    let limit = (6.0 / (r + c) as f64).sqrt();
    Array2::from_shape_simple_fn((r, c), || F::lit(rng.random_range(-limit..limit)))
}

fn orthogonal_blocks<F: Real>((h, width): (usize, usize), rng: &mut Stream) -> Array2<F> {
    let mut out = Array2::zeros((h, width));
    for blk in 0..width / h {
        let mut m =
            Array2::from_shape_simple_fn((h, h), || F::lit(rng.sample::<f64, _>(StandardNormal)));
        orthonormalize_columns(&mut m);
        out.slice_mut(ndarray::s![.., blk * h..(blk + 1) * h])
            .assign(&m);
    }
    out
}

#[derive(Debug, Clone)]
enum Tape<F> {
    Mlp {
        dense: DenseTape<F>,
    },
    Rnn {
        rnn: RnnTape<F>,
        u: Array2<F>,
        agg: AggTape<F>,
        dense: DenseTape<F>,
        tau: usize,
    },
}

/// A configured model together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<F> {
    pub config: ModelConfig,
    pub params: Params<F>,
}

impl<F: Real> Network<F> {
    /// Xavier-uniform weights, orthogonal recurrent blocks, zero biases
    /// (LSTM forget bias 1).
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed);
        let tensors = config
            .layout()
            .into_iter()
            .map(|(shape, role)| match role {
                Role::Weight | Role::Context => xavier(shape, &mut rng),
                Role::Recurrent => orthogonal_blocks(shape, &mut rng),
                Role::Bias => Array2::zeros(shape),
                Role::LstmBias => {
                    let h = shape.1 / 4;
                    let mut b = Array2::zeros(shape);
                    b.slice_mut(ndarray::s![.., h..2 * h]).fill(F::one());
                    b
                }
            })
            .collect();
        Ok(Self {
            config,
            params: Params::new(tensors),
        })
    }

    pub fn from_params(config: ModelConfig, params: Params<F>) -> Result<Self> {
        config.validate()?;
        if config.param_shapes() != params.shapes() {
            return Err(Error::validation(
                "parameter shapes do not match the configuration",
            ));
        }
        Ok(Self { config, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Checks that a feature view fits this model's input.
    pub fn check_features(&self, f: &Features<F>) -> Result<()> {
        match &self.config {
            ModelConfig::Mlp(c) => ensure_dim(c.input_dim(), f.dim()),
            ModelConfig::Rnn(c) => ensure_dim(c.input_dim, f.nodes),
        }
    }

    /// Model input for the selected samples and the batch size to pass on.
    pub fn batch_input(&self, f: &Features<F>, idx: &[usize]) -> Array2<F> {
        if self.config.is_sequence() {
            f.sequence_batch(idx)
        } else {
            f.flat_batch(idx)
        }
    }

    fn forward_tape(
        &self,
        x: Array2<F>,
        batch: usize,
        mut rng: Option<&mut Stream>,
    ) -> Result<(Array2<F>, Tape<F>)> {
        let t = &self.params.tensors;
        match &self.config {
            ModelConfig::Mlp(c) => {
                ensure_dim(c.input_dim(), x.ncols())?;
                ensure_dim(batch, x.nrows())?;
                let (logits, dense) = dense_forward(t, x, c.activation, c.dropout, rng);
                Ok((logits, Tape::Mlp { dense }))
            }
            ModelConfig::Rnn(c) => {
                ensure_dim(c.input_dim, x.ncols())?;
                if batch == 0 || x.nrows() == 0 || x.nrows() % batch != 0 {
                    return Err(Error::validation(
                        "sequence rows must be a positive multiple of the batch",
                    ));
                }
                let tau = x.nrows() / batch;
                let nr = c.recurrent_tensor_count();
                let na = c.aggregation_tensor_count();
                let (u, rnn) = rnn_forward(c, &t[..nr], x, batch, rng.as_deref_mut());
                let (a, agg) = aggregate_forward(
                    c.aggregation,
                    c.bidirectional,
                    &u,
                    tau,
                    batch,
                    &t[nr..nr + na],
                );
                let (logits, dense) =
                    dense_forward(&t[nr + na..], a, c.head.activation, c.dropout, rng);
                Ok((
                    logits,
                    Tape::Rnn {
                        rnn,
                        u,
                        agg,
                        dense,
                        tau,
                    },
                ))
            }
        }
    }

    fn backward(&self, tape: &Tape<F>, dlogits: Array2<F>) -> Params<F> {
        let t = &self.params.tensors;
        let mut g = Params::zeros_like(&self.params);
        match (&self.config, tape) {
            (ModelConfig::Mlp(c), Tape::Mlp { dense }) => {
                dense_backward(t, dense, dlogits, c.activation, &mut g.tensors);
            }
            (
                ModelConfig::Rnn(c),
                Tape::Rnn {
                    rnn,
                    u,
                    agg,
                    dense,
                    tau,
                },
            ) => {
                let nr = c.recurrent_tensor_count();
                let na = c.aggregation_tensor_count();
                let batch = dlogits.nrows();
                let (g_rec, rest) = g.tensors.split_at_mut(nr);
                let (g_att, g_head) = rest.split_at_mut(na);
                let da = dense_backward(&t[nr + na..], dense, dlogits, c.head.activation, g_head);
                let du = aggregate_backward(
                    c.bidirectional,
                    u,
                    *tau,
                    batch,
                    &t[nr..nr + na],
                    g_att,
                    agg,
                    &da,
                );
                rnn_backward(c, &t[..nr], g_rec, rnn, du);
            }
            _ => unreachable!("tape built by this network"),
        }
        g
    }

    /// Class probabilities; dropout is active only when `rng` is given.
    pub fn forward(
        &self,
        x: ArrayView2<F>,
        batch: usize,
        rng: Option<&mut Stream>,
    ) -> Result<Array2<F>> {
        let (logits, _) = self.forward_tape(x.to_owned(), batch, rng)?;
        Ok(softmax_rows(logits.view()))
    }

    /// `½ λ Σ ‖W‖²` over the non-bias tensors.
    pub fn penalty(&self) -> F {
        let wd = self.config.weight_decay();
        if wd == 0.0 {
            return F::zero();
        }
        let mask = self.config.decay_mask();
        let sq: F = self
            .params
            .tensors
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(t, _)| t.iter().map(|&v| v * v).sum::<F>())
            .sum();
        F::lit(0.5 * wd) * sq
    }

    /// Mean cross entropy plus the weight-decay penalty, and its gradient.
    pub fn loss_and_grad(
        &self,
        x: Array2<F>,
        batch: usize,
        labels: &[u8],
        rng: Option<&mut Stream>,
    ) -> Result<(F, Params<F>)> {
        ensure_dim(batch, labels.len())?;
        let (logits, tape) = self.forward_tape(x, batch, rng)?;
        let probs = softmax_rows(logits.view());
        let loss = mean_cross_entropy(probs.view(), labels) + self.penalty();
        let scale = F::one() / F::lit(batch as f64);
        let mut d = probs;
        for (mut row, &l) in d.rows_mut().into_iter().zip(labels) {
            row[l as usize] -= F::one();
            row *= scale;
        }
        let mut grads = self.backward(&tape, d);
        let wd = self.config.weight_decay();
        if wd > 0.0 {
            for ((g, w), m) in grads
                .tensors
                .iter_mut()
                .zip(&self.params.tensors)
                .zip(self.config.decay_mask())
            {
                if m {
                    g.scaled_add(F::lit(wd), w);
                }
            }
        }
        Ok((loss, grads))
    }

    /// Same objective as [`Network::loss_and_grad`], without dropout.
    pub fn loss(&self, x: Array2<F>, batch: usize, labels: &[u8]) -> Result<F> {
        let probs = self.forward(x.view(), batch, None)?;
        Ok(mean_cross_entropy(probs.view(), labels) + self.penalty())
    }

    /// Eval-mode probabilities for every sample, in chunks.
    pub fn predict_proba(&self, f: &Features<F>) -> Result<Array2<F>> {
        self.check_features(f)?;
        const CHUNK: usize = 512;
        let mut out = Array2::zeros((f.len(), 2));
        let all: Vec<usize> = (0..f.len()).collect();
        for (k, idx) in all.chunks(CHUNK).enumerate() {
            let x = self.batch_input(f, idx);
            let p = self.forward(x.view(), idx.len(), None)?;
            out.slice_mut(ndarray::s![k * CHUNK..k * CHUNK + idx.len(), ..])
                .assign(&p);
        }
        Ok(out)
    }

    /// Mean cross entropy (no penalty) and accuracy in percent.
    pub fn evaluate(&self, f: &Features<F>) -> Result<(f64, f64)> {
        let p = self.predict_proba(f)?;
        Ok((
            mean_cross_entropy(p.view(), &f.labels).as_f64(),
            super::accuracy(p.view(), &f.labels),
        ))
    }

    /// QNCM bytes: magic, `u16` version, `u32` header length, JSON header,
    /// then every parameter as little-endian `f64` in tensor order.
    pub fn to_bytes(&self, meta: &serde_json::Value) -> Result<Vec<u8>> {
        let header = serde_json::json!({
            "config": self.config,
            "shapes": self.params.shapes(),
            "precision": "f64",
            "meta": meta,
        });
        let header = serde_json::to_vec(&header)?;
        let values = self.params.to_f64_vec();
        let mut out = Vec::with_capacity(10 + header.len() + 8 * values.len());
        out.extend_from_slice(&MODEL_MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// Inverse of [`Network::to_bytes`]; returns the stored metadata too.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, serde_json::Value)> {
        if bytes.len() < 10 {
            return Err(Error::Truncated {
                expected: 10,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if magic != MODEL_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let h = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        if bytes.len() < 10 + h {
            return Err(Error::Truncated {
                expected: 10 + h,
                found: bytes.len(),
            });
        }
        #[derive(Deserialize)]
        struct Header {
            config: ModelConfig,
            shapes: Vec<(usize, usize)>,
            precision: String,
            #[serde(default)]
            meta: serde_json::Value,
        }
        let header: Header = serde_json::from_slice(&bytes[10..10 + h])?;
        if header.precision != "f64" {
            return Err(Error::Malformed(format!(
                "precision {:?}",
                header.precision
            )));
        }
        let count: usize = header.shapes.iter().map(|(r, c)| r * c).sum();
        let expected = 10 + h + 8 * count;
        if bytes.len() != expected {
            return Err(if bytes.len() < expected {
                Error::Truncated {
                    expected,
                    found: bytes.len(),
                }
            } else {
                Error::Malformed("trailing bytes after the weights".into())
            });
        }
        let values: Vec<f64> = bytes[10 + h..]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let params = Params::from_f64(&header.shapes, &values)?;
        Ok((Self::from_params(header.config, params)?, header.meta))
    }
}
