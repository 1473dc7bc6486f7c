//! Pre-norm transformer encoder classifier over the unified label space.
//!
//! token + position embeddings → `n_layers` × (LN → MHA → residual,
//! LN → FFN(relu) → residual) → final LN → masked mean pool → linear head.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::seed::derive_seed;
use crate::taskgen::{TaskExample, MAX_SEQ_LEN, NUM_CLASSES, PAD_ID};
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

pub const INIT_STDDEV: f64 = 0.12;
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub n_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            max_seq_len: MAX_SEQ_LEN,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 128,
            n_classes: NUM_CLASSES,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::InvalidConfig(format!(
                "n_heads {} does not divide d_model {}",
                self.n_heads, self.d_model
            )));
        }
        if self.n_classes < 4 {
            return Err(ModelError::InvalidConfig(format!(
                "n_classes {} is below 4",
                self.n_classes
            )));
        }
        Ok(())
    }

    /// Every parameter name with its shape, sorted by name.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f) = (self.d_model, self.d_ff);
        let mut shapes = vec![
            ("embed.token".to_string(), vec![self.vocab_size, d]),
            ("embed.position".to_string(), vec![self.max_seq_len, d]),
            ("final_ln.gain".to_string(), vec![d]),
            ("final_ln.bias".to_string(), vec![d]),
            ("head.weight".to_string(), vec![d, self.n_classes]),
            ("head.bias".to_string(), vec![self.n_classes]),
        ];
        for l in 0..self.n_layers {
            let p = format!("layers.{l}");
            for proj in ["q", "k", "v", "o"] {
                shapes.push((format!("{p}.attn.{proj}.weight"), vec![d, d]));
                shapes.push((format!("{p}.attn.{proj}.bias"), vec![d]));
            }
            shapes.push((format!("{p}.ffn.in.weight"), vec![d, f]));
            shapes.push((format!("{p}.ffn.in.bias"), vec![f]));
            shapes.push((format!("{p}.ffn.out.weight"), vec![f, d]));
            shapes.push((format!("{p}.ffn.out.bias"), vec![d]));
            for ln in ["ln1", "ln2"] {
                shapes.push((format!("{p}.{ln}.gain"), vec![d]));
                shapes.push((format!("{p}.{ln}.bias"), vec![d]));
            }
        }
        shapes.sort();
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Named model parameters, kept in sorted name order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar = f32> {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor<T>>,
}

/// Per-parameter gradients keyed like [`ModelParams::tensors`].
pub type Grads<T> = BTreeMap<String, Vec<T>>;

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

impl<T: Scalar> ModelParams<T> {
    /// Normal(0, INIT_STDDEV²) for embeddings and weight matrices, zero biases,
    /// unit layer-norm gains. Each tensor draws from its own seeded stream.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut tensors = BTreeMap::new();
        for (name, shape) in config.param_shapes() {
            let t = if name.ends_with(".gain") {
                Tensor::ones(shape)?
            } else if name.ends_with(".bias") {
                Tensor::zeros(shape)?
            } else {
                Tensor::random_normal(shape, 0.0, INIT_STDDEV, derive_seed(seed, name_hash(&name)))?
            };
            tensors.insert(name, t);
        }
        Ok(Self { config, tensors })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Records every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), requires_grad)))
                .collect(),
        }
    }
}

/// Tape variables for a bound parameter set.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Binds parameter names to existing tape variables.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Gradients after `backward`; parameters the loss did not reach get zeros.
    pub fn grads<T: Scalar>(&self, tape: &Tape<T>) -> Grads<T> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let g = tape
                    .grad_slice(v)
                    .map(<[T]>::to_vec)
                    .unwrap_or_else(|| vec![T::zero(); tape.value(v).len()]);
                (k.clone(), g)
            })
            .collect()
    }
}

/// Right-padded token batch. Rows are padded to the longest sequence in the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
    pub labels: Vec<usize>,
    pub size: usize,
    pub seq_len: usize,
}

impl Batch {
    pub fn from_examples<'a, I>(examples: I) -> Self
    where
        I: IntoIterator<Item = &'a TaskExample>,
        I::IntoIter: Clone,
    {
        let it = examples.into_iter();
        let seq_len = it.clone().map(|e| e.tokens.len()).max().unwrap_or(1).max(1);
        let mut ids = Vec::new();
        let mut mask = Vec::new();
        let mut labels = Vec::new();
        for ex in it {
            ids.extend_from_slice(&ex.tokens);
            mask.extend(std::iter::repeat_n(true, ex.tokens.len()));
            let pad = seq_len - ex.tokens.len();
            ids.extend(std::iter::repeat_n(PAD_ID, pad));
            mask.extend(std::iter::repeat_n(false, pad));
            labels.push(ex.label);
        }
        let size = labels.len();
        Self {
            ids,
            mask,
            labels,
            size,
            seq_len,
        }
    }

    /// Batch from explicit padded rows (`ids.len() == size * seq_len`).
    pub fn from_padded(ids: Vec<u32>, mask: Vec<bool>, size: usize, labels: Vec<usize>) -> Self {
        let seq_len = ids.len().checked_div(size).unwrap_or(0);
        Self {
            ids,
            mask,
            labels,
            size,
            seq_len,
        }
    }
}

fn linear<T: Scalar>(tape: &mut Tape<T>, p: &Bound, x: Var, prefix: &str) -> Result<Var> {
    let w = p.var(&format!("{prefix}.weight"))?;
    let b = p.var(&format!("{prefix}.bias"))?;
    let y = tape.matmul(x, w)?;
    Ok(tape.add_bias(y, b)?)
}

fn norm<T: Scalar>(tape: &mut Tape<T>, p: &Bound, x: Var, prefix: &str) -> Result<Var> {
    let g = p.var(&format!("{prefix}.gain"))?;
    let b = p.var(&format!("{prefix}.bias"))?;
    Ok(tape.layer_norm(x, g, b, LN_EPS)?)
}

/// Intermediate handles of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Var,
    pub attention: Vec<Var>,
}

/// Records the forward pass on `tape` and returns the `[size × n_classes]` logits.
pub fn forward<T: Scalar>(
    config: &ModelConfig,
    tape: &mut Tape<T>,
    params: &Bound,
    batch: &Batch,
) -> Result<ForwardTrace> {
    let (b, l) = (batch.size, batch.seq_len);
    if l > config.max_seq_len {
        return Err(ModelError::SequenceTooLong {
            len: l,
            max: config.max_seq_len,
        });
    }
    if let Some(&id) = batch.ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(ModelError::TokenOutOfRange {
            id,
            vocab_size: config.vocab_size,
        });
    }
    if b == 0 || batch.ids.len() != b * l || batch.mask.len() != b * l {
        return Err(ModelError::Tensor(TensorError::InvalidShape(vec![b, l])));
    }
    let ids: Vec<usize> = batch.ids.iter().map(|&i| i as usize).collect();
    let positions: Vec<usize> = (0..b).flat_map(|_| 0..l).collect();
    let tok = tape.embedding(params.var("embed.token")?, &ids)?;
    let pos = tape.embedding(params.var("embed.position")?, &positions)?;
    let mut h = tape.add(tok, pos)?;
    let mut attention = Vec::with_capacity(config.n_layers);
    for layer in 0..config.n_layers {
        let p = format!("layers.{layer}");
        let a = norm(tape, params, h, &format!("{p}.ln1"))?;
        let q = linear(tape, params, a, &format!("{p}.attn.q"))?;
        let k = linear(tape, params, a, &format!("{p}.attn.k"))?;
        let v = linear(tape, params, a, &format!("{p}.attn.v"))?;
        let att = tape.attention(q, k, v, &batch.mask, b, config.n_heads)?;
        attention.push(att);
        let o = linear(tape, params, att, &format!("{p}.attn.o"))?;
        h = tape.add(h, o)?;
        let f = norm(tape, params, h, &format!("{p}.ln2"))?;
        let f = linear(tape, params, f, &format!("{p}.ffn.in"))?;
        let f = tape.relu(f);
        let f = linear(tape, params, f, &format!("{p}.ffn.out"))?;
        h = tape.add(h, f)?;
    }
    let h = norm(tape, params, h, "final_ln")?;
    let pooled = tape.masked_mean_pool(h, &batch.mask, b)?;
    let logits = linear(tape, params, pooled, "head")?;
    Ok(ForwardTrace { logits, attention })
}

/// Inference-only forward: no parameter receives gradients.
pub fn logits<T: Scalar>(params: &ModelParams<T>, batch: &Batch) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let trace = forward(&params.config, &mut tape, &bound, batch)?;
    Ok(tape.value(trace.logits).clone())
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn predict<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let (rows, _) = logits.dims2();
    (0..rows)
        .map(|r| {
            logits
                .row(r)
                .iter()
                .enumerate()
                .fold(
                    (0, T::neg_infinity()),
                    |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
                )
                .0
        })
        .collect()
}
