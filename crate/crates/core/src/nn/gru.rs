use super::{glorot_uniform, Graph, ParamId, ParamStore};
use crate::tensor::{Result, Tensor, TensorError, Var};
use rand::Rng;

/// Gated recurrent unit, row-vector convention (`x · W`):
///
/// ```text
/// z  = σ(x W_z + h U_z + b_z)
/// r  = σ(x W_r + h U_r + b_r)
/// h~ = tanh(x W_h + (r ⊙ h) U_h + b_h)
/// h' = (1 - z) ⊙ h + z ⊙ h~
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
}

impl GruCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut gate = |g: &str| {
            let w = store.add(
                format!("{name}.w_{g}"),
                glorot_uniform(rng, input_dim, hidden_dim),
            );
            let u = store.add(
                format!("{name}.u_{g}"),
                glorot_uniform(rng, hidden_dim, hidden_dim),
            );
            let b = store.add(format!("{name}.b_{g}"), Tensor::zeros(vec![hidden_dim]));
            (w, u, b)
        };
        let (w_z, u_z, b_z) = gate("z");
        let (w_r, u_r, b_r) = gate("r");
        let (w_h, u_h, b_h) = gate("h");
        Self {
            input_dim,
            hidden_dim,
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
        }
    }

    /// One step on a batch: `x` is `[b, input_dim]`, `h` is `[b, hidden_dim]`.
    pub fn step(&self, g: &mut Graph, x: Var, h: Var) -> Result<Var> {
        let (xs, hs) = (g.tape.shape(x).to_vec(), g.tape.shape(h).to_vec());
        if xs.len() != 2
            || hs.len() != 2
            || xs[1] != self.input_dim
            || hs[1] != self.hidden_dim
            || xs[0] != hs[0]
        {
            return Err(TensorError::ShapeMismatch {
                op: "gru_step",
                left: xs,
                right: hs,
            });
        }
        let gate = |g: &mut Graph, w, u, b, hin: Var| -> Result<Var> {
            let xw = g.linear(x, w, Some(b))?;
            let hu = g.linear(hin, u, None)?;
            g.tape.add(xw, hu)
        };
        let z = gate(g, self.w_z, self.u_z, self.b_z, h)?;
        let z = g.tape.sigmoid(z)?;
        let r = gate(g, self.w_r, self.u_r, self.b_r, h)?;
        let r = g.tape.sigmoid(r)?;
        let rh = g.tape.mul(r, h)?;
        let cand = gate(g, self.w_h, self.u_h, self.b_h, rh)?;
        let cand = g.tape.tanh(cand)?;
        let delta = g.tape.sub(cand, h)?;
        let step = g.tape.mul(z, delta)?;
        g.tape.add(h, step)
    }

    /// Runs the cell over `xs` (each `[b, input_dim]`) from `h0`. Where
    /// `active[t][row]` is false the row keeps its previous hidden state.
    /// Returns the hidden state after every step.
    pub fn run_masked(
        &self,
        g: &mut Graph,
        xs: &[Var],
        active: &[Vec<bool>],
        h0: Var,
    ) -> Result<Vec<Var>> {
        let mut h = h0;
        let mut out = Vec::with_capacity(xs.len());
        for (x, act) in xs.iter().zip(active) {
            if act.iter().any(|a| *a) {
                let next = self.step(g, *x, h)?;
                h = if act.iter().all(|a| *a) {
                    next
                } else {
                    g.tape.select_rows(act, next, h)?
                };
            }
            out.push(h);
        }
        Ok(out)
    }
}
