use super::{glorot_bound, Graph, ParamId, ParamStore};
use crate::tensor::{Result, Tensor, TensorError, Var};
use rand::Rng;

/// Reserved id whose row is all zeros and never trained.
pub const PADDING_ID: usize = 0;

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub id: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = glorot_bound(1, dim);
        let mut data = vec![0.0; vocab_size * dim];
        for v in data.iter_mut().skip(dim) {
            *v = rng.random_range(-bound..=bound);
        }
        let id = store.add(
            name,
            Tensor::new(vec![vocab_size, dim], data).expect("embedding shape"),
        );
        Self {
            id,
            vocab_size,
            dim,
        }
    }

    /// Row gather, `[ids.len(), dim]`. The padding row yields zeros.
    pub fn lookup(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        if let Some(&id) = ids.iter().find(|&&id| id >= self.vocab_size) {
            return Err(TensorError::IndexOutOfRange {
                id,
                rows: self.vocab_size,
            });
        }
        let table = g.param(self.id);
        g.tape.gather_rows(table, ids, Some(PADDING_ID))
    }
}
