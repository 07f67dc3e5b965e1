//! Neural building blocks over the tape: embedding tables, a GRU cell,
//! scaled dot-product / multi-head attention and the decision MLP.
//!
//! Layers own no values. Each layer stores [`ParamId`]s into a [`ParamStore`];
//! a forward pass binds the whole store onto a fresh [`Graph`] and layers look
//! their parameters up there.

mod attention;
mod embedding;
mod gru;
mod mlp;

pub use attention::{scaled_dot_attention, AttentionOutput, MultiHeadAttention};
pub use embedding::{EmbeddingTable, PADDING_ID};
pub use gru::GruCell;
pub use mlp::Mlp;

use crate::tensor::{Gradients, Result, Tape, Tensor, TensorError, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Ordered, uniquely named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on duplicate names, which are a programming
    /// error in model construction.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Replaces every value; shapes must match.
    pub fn set_values(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(TensorError::ShapeMismatch {
                op: "set_values",
                left: vec![self.values.len()],
                right: vec![values.len()],
            });
        }
        for (old, new) in self.values.iter().zip(&values) {
            if old.shape() != new.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "set_values",
                    left: old.shape().to_vec(),
                    right: new.shape().to_vec(),
                });
            }
        }
        self.values = values;
        Ok(())
    }

    /// Sets every parameter to zero.
    pub fn zero_all(&mut self) {
        for v in &mut self.values {
            v.data_mut().fill(0.0);
        }
    }
}

/// A tape with every parameter of a store bound as a leaf.
pub struct Graph {
    pub tape: Tape,
    params: Vec<Var>,
}

impl Graph {
    /// Binds `store` onto a new tape. With `requires_grad = false` the
    /// parameters are constants (evaluation mode).
    pub fn new(store: &ParamStore, requires_grad: bool) -> Self {
        Self::from_values(store.values(), requires_grad)
    }

    pub fn from_values(values: &[Tensor], requires_grad: bool) -> Self {
        let mut tape = Tape::new();
        let params = values
            .iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect();
        Self { tape, params }
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.params[id.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    /// Gradients for every parameter, zero-filled where a parameter did not
    /// contribute to `loss`.
    pub fn param_grads(&self, loss: Var) -> Result<Vec<Tensor>> {
        let mut grads: Gradients = self.tape.backward(loss)?;
        Ok(self
            .params
            .iter()
            .map(|v| {
                grads
                    .take(*v)
                    .unwrap_or_else(|| Tensor::zeros(self.tape.value(*v).shape().to_vec()))
            })
            .collect())
    }

    /// `x · W + b` for `x` of any rank whose last axis matches `W`'s rows.
    pub fn linear(&mut self, x: Var, w: ParamId, b: Option<ParamId>) -> Result<Var> {
        let shape = self.tape.shape(x).to_vec();
        let wv = self.param(w);
        let out_dim = self.tape.shape(wv)[1];
        let out = if shape.len() == 2 {
            self.tape.matmul(x, wv)?
        } else {
            let lead: usize = shape[..shape.len().saturating_sub(1)].iter().product();
            let flat = self.tape.reshape(x, &[lead, *shape.last().unwrap_or(&1)])?;
            let y = self.tape.matmul(flat, wv)?;
            let mut out_shape = shape.clone();
            if let Some(l) = out_shape.last_mut() {
                *l = out_dim;
            }
            self.tape.reshape(y, &out_shape)?
        };
        match b {
            Some(b) => {
                let bv = self.param(b);
                self.tape.add_row(out, bv)
            }
            None => Ok(out),
        }
    }
}

/// Uniform Glorot bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn glorot_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = glorot_bound(fan_in, fan_out);
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("glorot shape")
}
