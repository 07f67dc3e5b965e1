use super::{glorot_uniform, Graph, ParamId, ParamStore};
use crate::tensor::{Result, TensorError, Var};
use rand::Rng;

/// Attention result plus the weight rows of every head (`[g, nq, n]`).
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub out: Var,
    pub weights: Vec<Var>,
}

fn as_batched(g: &mut Graph, x: Var) -> Result<(Var, bool)> {
    let shape = g.tape.shape(x).to_vec();
    match shape.len() {
        2 => Ok((g.tape.reshape(x, &[1, shape[0], shape[1]])?, true)),
        3 => Ok((x, false)),
        _ => Err(TensorError::Rank {
            op: "attention",
            expected: 3,
            shape,
        }),
    }
}

/// `softmax(Q Kᵀ / sqrt(d_k)) V` with masked keys.
///
/// Accepts `Q: [nq, d_k], K: [n, d_k], V: [n, d_v]` or the same with a leading
/// group axis. `mask` holds one flag per `(group, query, key)`.
pub fn scaled_dot_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    mask: &[bool],
) -> Result<(Var, Var)> {
    let (q3, squeeze) = as_batched(g, q)?;
    let (k3, _) = as_batched(g, k)?;
    let (v3, _) = as_batched(g, v)?;
    let d_k = g.tape.shape(q3)[2];
    let (kn, vn) = (g.tape.shape(k3)[1], g.tape.shape(v3)[1]);
    if kn != vn || g.tape.shape(k3)[0] != g.tape.shape(v3)[0] {
        return Err(TensorError::ShapeMismatch {
            op: "scaled_dot_attention",
            left: g.tape.shape(k3).to_vec(),
            right: g.tape.shape(v3).to_vec(),
        });
    }
    let scores = g.tape.batch_matmul(q3, k3, true)?;
    let scores = g.tape.scale(scores, 1.0 / (d_k as f64).sqrt())?;
    let weights = g.tape.softmax_masked(scores, mask)?;
    let out = g.tape.batch_matmul(weights, v3, false)?;
    if squeeze {
        let s = g.tape.shape(out).to_vec();
        let out = g.tape.reshape(out, &s[1..])?;
        let ws = g.tape.shape(weights).to_vec();
        let weights = g.tape.reshape(weights, &ws[1..])?;
        Ok((out, weights))
    } else {
        Ok((out, weights))
    }
}

/// Multi-head attention with per-head query/key projections.
///
/// In the projected mode every head also projects values and the concatenated
/// heads pass through `W^O`. Without value projection the heads attend over
/// the raw values and are averaged, so the output stays in the value space.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub query_dim: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub w_q: Vec<ParamId>,
    pub w_k: Vec<ParamId>,
    pub w_v: Option<Vec<ParamId>>,
    pub w_o: Option<ParamId>,
    pub out_dim: usize,
}

impl MultiHeadAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn projected<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        heads: usize,
        query_dim: usize,
        key_dim: usize,
        value_dim: usize,
        d_k: usize,
        d_v: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let w_q = (0..heads)
            .map(|h| {
                store.add(
                    format!("{name}.w_q.{h}"),
                    glorot_uniform(rng, query_dim, d_k),
                )
            })
            .collect();
        let w_k = (0..heads)
            .map(|h| store.add(format!("{name}.w_k.{h}"), glorot_uniform(rng, key_dim, d_k)))
            .collect();
        let w_v = (0..heads)
            .map(|h| {
                store.add(
                    format!("{name}.w_v.{h}"),
                    glorot_uniform(rng, value_dim, d_v),
                )
            })
            .collect();
        let w_o = store.add(
            format!("{name}.w_o"),
            glorot_uniform(rng, heads * d_v, out_dim),
        );
        Self {
            heads,
            query_dim,
            key_dim,
            value_dim,
            d_k,
            d_v,
            w_q,
            w_k,
            w_v: Some(w_v),
            w_o: Some(w_o),
            out_dim,
        }
    }

    pub fn unprojected_values<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        heads: usize,
        query_dim: usize,
        key_dim: usize,
        value_dim: usize,
        d_k: usize,
        rng: &mut R,
    ) -> Self {
        let w_q = (0..heads)
            .map(|h| {
                store.add(
                    format!("{name}.w_q.{h}"),
                    glorot_uniform(rng, query_dim, d_k),
                )
            })
            .collect();
        let w_k = (0..heads)
            .map(|h| store.add(format!("{name}.w_k.{h}"), glorot_uniform(rng, key_dim, d_k)))
            .collect();
        Self {
            heads,
            query_dim,
            key_dim,
            value_dim,
            d_k,
            d_v: value_dim,
            w_q,
            w_k,
            w_v: None,
            w_o: None,
            out_dim: value_dim,
        }
    }

    /// `q: [g, nq, query_dim]`, `k: [g, n, key_dim]`, `v: [g, n, value_dim]`,
    /// `mask` one flag per `(group, query, key)`. Output `[g, nq, out_dim]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        q: Var,
        k: Var,
        v: Var,
        mask: &[bool],
    ) -> Result<AttentionOutput> {
        for (x, dim) in [(q, self.query_dim), (k, self.key_dim), (v, self.value_dim)] {
            let s = g.tape.shape(x);
            if s.len() != 3 || s[2] != dim {
                return Err(TensorError::ShapeMismatch {
                    op: "multi_head_attention",
                    left: s.to_vec(),
                    right: vec![dim],
                });
            }
        }
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.linear(q, self.w_q[h], None)?;
            let kh = g.linear(k, self.w_k[h], None)?;
            match &self.w_v {
                Some(w_v) => {
                    let vh = g.linear(v, w_v[h], None)?;
                    let (out, w) = scaled_dot_attention(g, qh, kh, vh, mask)?;
                    heads.push(out);
                    weights.push(w);
                }
                None => {
                    let scores = g.tape.batch_matmul(qh, kh, true)?;
                    let scores = g.tape.scale(scores, 1.0 / (self.d_k as f64).sqrt())?;
                    weights.push(g.tape.softmax_masked(scores, mask)?);
                }
            }
        }
        let out = match self.w_o {
            Some(w_o) => {
                let cat = g.tape.concat_last(&heads)?;
                g.linear(cat, w_o, None)?
            }
            None => {
                // mean of per-head outputs == mean weights applied once
                let mut avg = weights[0];
                for w in &weights[1..] {
                    avg = g.tape.add(avg, *w)?;
                }
                let avg = g.tape.scale(avg, 1.0 / self.heads as f64)?;
                g.tape.batch_matmul(avg, v, false)?
            }
        };
        Ok(AttentionOutput { out, weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn attend(q: Tensor, k: Tensor, v: Tensor, mask: &[bool]) -> Tensor {
        let mut g = Graph::from_values(&[], false);
        let (q, k, v) = (g.constant(q), g.constant(k), g.constant(v));
        let (out, _) = scaled_dot_attention(&mut g, q, k, v, mask).unwrap();
        g.value(out).clone()
    }

    #[test]
    fn singleton_key_returns_its_value() {
        let v = Tensor::from_rows(&[vec![0.3, -1.7, 2.5]]).unwrap();
        let out = attend(
            Tensor::from_rows(&[vec![4.0, -2.0]]).unwrap(),
            Tensor::from_rows(&[vec![9.0, 1.0]]).unwrap(),
            v.clone(),
            &[true],
        );
        assert_eq!(out, v);
    }

    #[test]
    fn identical_keys_average_values() {
        let k = Tensor::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let v = Tensor::from_rows(&[vec![1.0, 0.0], vec![2.0, 3.0], vec![6.0, -3.0]]).unwrap();
        let out = attend(
            Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap(),
            k,
            v,
            &[true; 3],
        );
        assert!((out.data()[0] - 3.0).abs() < 1e-12);
        assert!(out.data()[1].abs() < 1e-12);
    }

    #[test]
    fn hand_computed_two_keys() {
        let out = attend(
            Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap(),
            Tensor::eye(2),
            Tensor::eye(2),
            &[true, true],
        );
        let s = 1.0 / 2f64.sqrt();
        let w0 = s.exp() / (s.exp() + 1.0);
        assert!((out.data()[0] - w0).abs() < 1e-12);
        assert!((out.data()[1] - (1.0 - w0)).abs() < 1e-12);
    }

    #[test]
    fn logits_are_scaled_by_sqrt_dk() {
        // Zero-padding Q and K to double d_k leaves QKᵀ unchanged, so the
        // scaled logits shrink by sqrt(2).
        let mut g = Graph::from_values(&[], false);
        let q = g.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let k = g.constant(Tensor::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap());
        let v = g.constant(Tensor::eye(2));
        let (_, w_small) = scaled_dot_attention(&mut g, q, k, v, &[true, true]).unwrap();
        let q4 = g.constant(Tensor::from_rows(&[vec![1.0, 2.0, 0.0, 0.0]]).unwrap());
        let k4 = g.constant(
            Tensor::from_rows(&[vec![0.5, -1.0, 0.0, 0.0], vec![2.0, 0.25, 0.0, 0.0]]).unwrap(),
        );
        let (_, w_big) = scaled_dot_attention(&mut g, q4, k4, v, &[true, true]).unwrap();
        let logit_gap = |w: &Tensor| (w.data()[1] / w.data()[0]).ln();
        let raw_gap = (1.0 * 2.0 + 2.0 * 0.25) - (1.0 * 0.5 + 2.0 * -1.0);
        assert!((logit_gap(g.value(w_small)) - raw_gap / 2f64.sqrt()).abs() < 1e-12);
        assert!((logit_gap(g.value(w_big)) - raw_gap / 2.0).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_query_is_an_error() {
        let mut g = Graph::from_values(&[], false);
        let q = g.constant(Tensor::from_rows(&[vec![1.0]]).unwrap());
        let k = g.constant(Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap());
        let err = scaled_dot_attention(&mut g, q, k, k, &[false, false]).unwrap_err();
        assert_eq!(err, TensorError::FullyMasked { row: 0 });
    }

    #[test]
    fn single_head_identity_projection_reduces_to_attention() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mha = MultiHeadAttention::projected(&mut store, "mha", 1, 3, 3, 3, 3, 3, 3, &mut rng);
        for id in store.ids().collect::<Vec<_>>() {
            *store.get_mut(id) = Tensor::eye(3);
        }
        let (q, k, v) = (
            rand_t(&mut rng, &[1, 2, 3]),
            rand_t(&mut rng, &[1, 4, 3]),
            rand_t(&mut rng, &[1, 4, 3]),
        );
        let mask = vec![true, true, false, true, true, true, true, false];
        let mut g = Graph::new(&store, false);
        let (qv, kv, vv) = (
            g.constant(q.clone()),
            g.constant(k.clone()),
            g.constant(v.clone()),
        );
        let out = mha.forward(&mut g, qv, kv, vv, &mask).unwrap();
        let (plain, _) = scaled_dot_attention(&mut g, qv, kv, vv, &mask).unwrap();
        assert!(g.value(out.out).max_abs_diff(g.value(plain)) < 1e-14);
    }

    #[test]
    fn output_shapes_per_mode() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let std_mode =
            MultiHeadAttention::projected(&mut store, "a", 2, 8, 6, 5, 4, 3, 7, &mut rng);
        let value_mode =
            MultiHeadAttention::unprojected_values(&mut store, "b", 2, 8, 6, 5, 4, &mut rng);
        let mut g = Graph::new(&store, false);
        let q = g.constant(rand_t(&mut rng, &[3, 1, 8]));
        let k = g.constant(rand_t(&mut rng, &[3, 4, 6]));
        let v = g.constant(rand_t(&mut rng, &[3, 4, 5]));
        let mask = vec![true; 12];
        let a = std_mode.forward(&mut g, q, k, v, &mask).unwrap();
        assert_eq!(g.value(a.out).shape(), &[3, 1, 7]);
        let b = value_mode.forward(&mut g, q, k, v, &mask).unwrap();
        assert_eq!(g.value(b.out).shape(), &[3, 1, 5]);
        assert_eq!(b.weights.len(), 2);
    }

    /// Composition oracle: per-head attention on explicitly projected
    /// inputs, concatenated, then multiplied by W^O, all on plain tensors.
    #[test]
    fn matches_composition_oracle() {
        for seed in 0..20 {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mha = MultiHeadAttention::projected(&mut store, "m", 2, 5, 4, 3, 3, 2, 6, &mut rng);
            let (q, k, v) = (
                rand_t(&mut rng, &[2, 5]),
                rand_t(&mut rng, &[4, 4]),
                rand_t(&mut rng, &[4, 3]),
            );
            let mask = vec![true, false, true, true, true, true, false, true];
            let mut heads = Vec::new();
            for h in 0..2 {
                let qh = q.matmul(store.get(mha.w_q[h])).unwrap();
                let kh = k.matmul(store.get(mha.w_k[h])).unwrap();
                let vh = v.matmul(store.get(mha.w_v.as_ref().unwrap()[h])).unwrap();
                let scores = qh.matmul(&kh.transpose().unwrap()).unwrap();
                let scaled = Tensor::new(
                    vec![2, 4],
                    scores.data().iter().map(|s| s / 3f64.sqrt()).collect(),
                )
                .unwrap();
                heads.push(scaled.softmax_masked(&mask).unwrap().matmul(&vh).unwrap());
            }
            let expected = Tensor::concat_last_axis(&[&heads[0], &heads[1]])
                .unwrap()
                .matmul(store.get(mha.w_o.unwrap()))
                .unwrap();
            let mut g = Graph::new(&store, false);
            let qv = g.constant(q.reshape(vec![1, 2, 5]).unwrap());
            let kv = g.constant(k.reshape(vec![1, 4, 4]).unwrap());
            let vv = g.constant(v.reshape(vec![1, 4, 3]).unwrap());
            let got = mha.forward(&mut g, qv, kv, vv, &mask).unwrap();
            assert!(g
                .value(got.out)
                .data()
                .iter()
                .zip(expected.data())
                .all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }
}
