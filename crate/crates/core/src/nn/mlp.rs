use super::{glorot_uniform, Graph, ParamId, ParamStore};
use crate::tensor::{Result, Tensor, TensorError, Var};
use rand::Rng;

/// ReLU hidden layers followed by a single sigmoid output unit.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub input_dim: usize,
    pub layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for (i, &width) in hidden.iter().chain(std::iter::once(&1)).enumerate() {
            let w = store.add(format!("{name}.{i}.w"), glorot_uniform(rng, fan_in, width));
            let b = store.add(format!("{name}.{i}.b"), Tensor::zeros(vec![width]));
            layers.push((w, b));
            fan_in = width;
        }
        Self { input_dim, layers }
    }

    /// Click probability for each row of `x: [b, input_dim]`, shape `[b]`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let s = g.tape.shape(x).to_vec();
        if s.len() != 2 || s[1] != self.input_dim {
            return Err(TensorError::ShapeMismatch {
                op: "mlp_decision",
                left: s,
                right: vec![self.input_dim],
            });
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = g.linear(h, *w, Some(*b))?;
            if i < last {
                h = g.tape.relu(h)?;
            }
        }
        let p = g.tape.sigmoid(h)?;
        g.tape.reshape(p, &[s[0]])
    }
}
