use super::{Ablation, ModelConfig, Vocab};
use crate::data::{
    AttributeFeatures, TrainingSample, CATEGORY_RANK_BUCKETS, DISCOUNT_BUCKETS,
    PRICE_LEVEL_BUCKETS, SECONDS_PER_HOUR,
};
use crate::error::{Error, Result};
use crate::nn::{
    glorot_bound, glorot_uniform, EmbeddingTable, Graph, GruCell, Mlp, MultiHeadAttention, ParamId,
    ParamStore,
};
use crate::tensor::{Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Attention weights of one layer for inspection.
#[derive(Clone, Debug)]
pub struct AttentionDiag {
    /// One `[rows, 1, keys]` tensor per head.
    pub weights: Vec<Var>,
    /// `(sample, state)` of each row; the state is 0 outside the attribute layer.
    pub rows: Vec<(usize, usize)>,
    /// Key mask, `rows × keys` row-major.
    pub mask: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Click probabilities, `[b]`.
    pub probs: Var,
    /// Item-behavior representation fed to the decision layer, `[b, sel_hidden]`.
    pub item_repr: Var,
    /// Frequency-branch output, `[b, fel_hidden]`.
    pub frequency: Var,
    /// User-behavior representation, `[b, ub_hidden]`.
    pub user_repr: Var,
    /// Attribute-attention output per non-empty state, `[rows, id_dim]`,
    /// rows as in `aal.rows` (or the pooled rows under `nh`).
    pub aal_out: Option<Var>,
    pub aal_rows: Vec<(usize, usize)>,
    pub aal: Option<AttentionDiag>,
    pub pal: Option<AttentionDiag>,
    pub ub: Option<AttentionDiag>,
}

#[derive(Clone, Debug)]
enum Evolution {
    Gru(GruCell),
    /// `tanh(x W + b)` applied to each state independently.
    Dense {
        w: ParamId,
        b: ParamId,
    },
}

#[derive(Clone, Debug)]
struct ItemBranch {
    discount: EmbeddingTable,
    level: EmbeddingTable,
    rank: EmbeddingTable,
    /// `None` means mean pooling over a state's users.
    aal: Option<MultiHeadAttention>,
    empty_state: ParamId,
    evolution: Evolution,
    pal: MultiHeadAttention,
    cold_item: ParamId,
}

/// CAEN: profile embeddings, a user-behavior GRU with target attention, the
/// attribute-state item branch and the frequency branch feeding one MLP.
#[derive(Clone, Debug)]
pub struct CaenModel {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub ablation: Ablation,
    pub params: ParamStore,
    user_emb: EmbeddingTable,
    item_emb: EmbeddingTable,
    segment_emb: EmbeddingTable,
    category_emb: EmbeddingTable,
    price_level_emb: EmbeddingTable,
    item: Option<ItemBranch>,
    fel: Option<GruCell>,
    ub_gru: GruCell,
    ub_att: MultiHeadAttention,
    ub_empty: ParamId,
    mlp: Mlp,
}

fn learned_vector<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> ParamId {
    let bound = glorot_bound(1, dim);
    let data = (0..dim).map(|_| rng.random_range(-bound..=bound)).collect();
    store.add(name, Tensor::new(vec![1, dim], data).expect("vector shape"))
}

/// Per-change FEL inputs `[ln(1 + Δt in hours), κ / k]`; the first change has
/// `Δt = 0`. Timestamps must be strictly increasing.
pub fn frequency_features(timestamps: &[i64]) -> Result<Vec<[f64; 2]>> {
    let k = timestamps.len();
    let mut out = Vec::with_capacity(k);
    for (i, t) in timestamps.iter().enumerate() {
        let dt = if i == 0 {
            0.0
        } else {
            let d = t - timestamps[i - 1];
            if d <= 0 {
                return Err(Error::Data(format!(
                    "change timestamps not ascending at position {i}"
                )));
            }
            d as f64 / SECONDS_PER_HOUR as f64
        };
        out.push([dt.ln_1p(), (i + 1) as f64 / k as f64]);
    }
    Ok(out)
}

impl CaenModel {
    pub fn new(config: ModelConfig, vocab: Vocab, ablation: Ablation, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let c = &config;
        let (d, heads, hd) = (c.id_dim, c.heads, c.head_dim);

        let user_emb = EmbeddingTable::new(&mut p, "emb.user", vocab.users + 1, d, &mut rng);
        let item_emb = EmbeddingTable::new(&mut p, "emb.item", vocab.items + 1, d, &mut rng);
        let segment_emb = EmbeddingTable::new(
            &mut p,
            "emb.segment",
            vocab.segments + 1,
            c.profile_dim,
            &mut rng,
        );
        let category_emb = EmbeddingTable::new(
            &mut p,
            "emb.category",
            vocab.categories + 1,
            c.profile_dim,
            &mut rng,
        );
        let price_level_emb = EmbeddingTable::new(
            &mut p,
            "emb.price_level",
            PRICE_LEVEL_BUCKETS + 1,
            c.profile_dim,
            &mut rng,
        );

        let ub_gru = GruCell::new(&mut p, "ub.gru", d, c.ub_hidden, &mut rng);
        let ub_att = MultiHeadAttention::projected(
            &mut p,
            "ub.att",
            heads,
            d,
            c.ub_hidden,
            c.ub_hidden,
            hd,
            hd,
            c.ub_hidden,
            &mut rng,
        );
        let ub_empty = learned_vector(&mut p, "ub.empty", c.ub_hidden, &mut rng);

        let item = if ablation.uses_item_branch() {
            let discount = EmbeddingTable::new(
                &mut p,
                "emb.attr.discount",
                DISCOUNT_BUCKETS + 1,
                d,
                &mut rng,
            );
            let level = EmbeddingTable::new(
                &mut p,
                "emb.attr.price_level",
                PRICE_LEVEL_BUCKETS + 1,
                d,
                &mut rng,
            );
            let rank = EmbeddingTable::new(
                &mut p,
                "emb.attr.category_rank",
                CATEGORY_RANK_BUCKETS + 1,
                d,
                &mut rng,
            );
            let aal = (ablation != Ablation::Nh).then(|| {
                MultiHeadAttention::unprojected_values(&mut p, "aal", heads, d, d, d, hd, &mut rng)
            });
            let empty_state = learned_vector(&mut p, "aal.empty_state", d, &mut rng);
            let evolution = if ablation == Ablation::Ns {
                let w = p.add("ns.w", glorot_uniform(&mut rng, d, c.sel_hidden));
                let b = p.add("ns.b", Tensor::zeros(vec![c.sel_hidden]));
                Evolution::Dense { w, b }
            } else {
                Evolution::Gru(GruCell::new(&mut p, "sel.gru", d, c.sel_hidden, &mut rng))
            };
            let pal = MultiHeadAttention::projected(
                &mut p,
                "pal",
                heads,
                2 * d,
                c.sel_hidden + d,
                c.sel_hidden,
                hd,
                hd,
                c.sel_hidden,
                &mut rng,
            );
            let cold_item = learned_vector(&mut p, "pal.cold_item", c.sel_hidden, &mut rng);
            Some(ItemBranch {
                discount,
                level,
                rank,
                aal,
                empty_state,
                evolution,
                pal,
                cold_item,
            })
        } else {
            None
        };
        let fel = ablation
            .uses_frequency()
            .then(|| GruCell::new(&mut p, "fel.gru", 2, c.fel_hidden, &mut rng));
        let mlp = Mlp::new(&mut p, "mlp", c.decision_width(), &c.mlp_hidden, &mut rng);

        Ok(Self {
            config,
            vocab,
            ablation,
            params: p,
            user_emb,
            item_emb,
            segment_emb,
            category_emb,
            price_level_emb,
            item,
            fel,
            ub_gru,
            ub_att,
            ub_empty,
            mlp,
        })
    }

    /// Copies every parameter whose name and shape also exist in `other`.
    /// Returns how many were copied.
    pub fn copy_matching_params(&mut self, other: &ParamStore) -> usize {
        let mut n = 0;
        for id in self.params.ids().collect::<Vec<_>>() {
            if let Some(src) = other.id(self.params.name(id)) {
                if other.get(src).shape() == self.params.get(id).shape() {
                    *self.params.get_mut(id) = other.get(src).clone();
                    n += 1;
                }
            }
        }
        n
    }

    pub fn forward(&self, g: &mut Graph, batch: &[&TrainingSample]) -> Result<ForwardOutput> {
        let Some(first) = batch.first() else {
            return Err(Error::Data("empty batch".into()));
        };
        let (n_states, n_users, n_behaviors) = (
            first.item.states.len(),
            first.item.states.first().map_or(0, |s| s.user_ids.len()),
            first.behaviors.item_ids.len(),
        );
        for s in batch {
            let ok = s.item.states.len() == n_states
                && s.item.state_mask.len() == n_states
                && s.item
                    .states
                    .iter()
                    .all(|st| st.user_ids.len() == n_users && st.user_mask.len() == n_users)
                && s.behaviors.item_ids.len() == n_behaviors
                && s.behaviors.mask.len() == n_behaviors;
            if !ok {
                return Err(Error::Data(format!(
                    "sample for user {} item {} is not padded like the rest of its batch",
                    s.user_id, s.item_id
                )));
            }
        }
        let b = batch.len();
        let segs: Vec<usize> = batch.iter().map(|s| s.user_segment as usize).collect();
        let cats: Vec<usize> = batch.iter().map(|s| s.item_category as usize).collect();
        let levels: Vec<usize> = batch.iter().map(|s| s.item_price_level as usize).collect();
        let seg = self.segment_emb.lookup(g, &segs)?;
        let cat = self.category_emb.lookup(g, &cats)?;
        let level = self.price_level_emb.lookup(g, &levels)?;

        let (user_repr, ub) = self.user_behavior(g, batch, n_behaviors)?;

        let mut out_aal = None;
        let mut aal_rows = Vec::new();
        let mut aal_diag = None;
        let mut pal_diag = None;
        let item_repr = match &self.item {
            Some(it) => {
                let r = self.item_behavior(g, it, batch, n_states, n_users)?;
                out_aal = r.aal_out;
                aal_rows = r.aal_rows;
                aal_diag = r.aal;
                pal_diag = r.pal;
                r.repr
            }
            None => g.constant(Tensor::zeros(vec![b, self.config.sel_hidden])),
        };
        let frequency = match &self.fel {
            Some(cell) => self.frequency_extraction(g, cell, batch)?,
            None => g.constant(Tensor::zeros(vec![b, self.config.fel_hidden])),
        };
        let x = g
            .tape
            .concat_last(&[seg, cat, level, user_repr, item_repr, frequency])?;
        let probs = self.mlp.forward(g, x)?;
        Ok(ForwardOutput {
            probs,
            item_repr,
            frequency,
            user_repr,
            aal_out: out_aal,
            aal_rows,
            aal: aal_diag,
            pal: pal_diag,
            ub,
        })
    }

    /// GRU over the behavior sequence, then attention queried by the target
    /// item. Users without behaviors get a learned vector.
    fn user_behavior(
        &self,
        g: &mut Graph,
        batch: &[&TrainingSample],
        steps: usize,
    ) -> Result<(Var, Option<AttentionDiag>)> {
        let b = batch.len();
        let hidden = self.config.ub_hidden;
        let mut xs = Vec::with_capacity(steps);
        let mut active = Vec::with_capacity(steps);
        for t in 0..steps {
            let act: Vec<bool> = batch.iter().map(|s| s.behaviors.mask[t]).collect();
            let ids: Vec<usize> = batch
                .iter()
                .map(|s| {
                    if s.behaviors.mask[t] {
                        s.behaviors.item_ids[t] as usize
                    } else {
                        0
                    }
                })
                .collect();
            xs.push(self.item_emb.lookup(g, &ids)?);
            active.push(act);
        }
        let h0 = g.constant(Tensor::zeros(vec![b, hidden]));
        let hs = self.ub_gru.run_masked(g, &xs, &active, h0)?;

        let warm: Vec<usize> = (0..b).filter(|i| !batch[*i].behaviors.is_empty()).collect();
        let mut parts = Vec::new();
        let mut diag = None;
        if !warm.is_empty() {
            let w = warm.len();
            let stack = g.tape.concat_last(&hs)?;
            let hw = g.tape.gather_rows(stack, &warm, None)?;
            let hw = g.tape.reshape(hw, &[w, steps, hidden])?;
            let targets: Vec<usize> = warm.iter().map(|i| batch[*i].item_id as usize).collect();
            let q = self.item_emb.lookup(g, &targets)?;
            let q = g.tape.reshape(q, &[w, 1, self.config.id_dim])?;
            let mask: Vec<bool> = warm
                .iter()
                .flat_map(|i| batch[*i].behaviors.mask.iter().copied())
                .collect();
            let att = self.ub_att.forward(g, q, hw, hw, &mask)?;
            parts.push(g.tape.reshape(att.out, &[w, self.ub_att.out_dim])?);
            diag = Some(AttentionDiag {
                weights: att.weights,
                rows: warm.iter().map(|i| (*i, 0)).collect(),
                mask,
            });
        }
        parts.push(g.param(self.ub_empty));
        let table = g.tape.concat_rows(&parts)?;
        let mut next = 0;
        let idx: Vec<usize> = (0..b)
            .map(|i| {
                if batch[i].behaviors.is_empty() {
                    warm.len()
                } else {
                    next += 1;
                    next - 1
                }
            })
            .collect();
        Ok((g.tape.gather_rows(table, &idx, None)?, diag))
    }

    /// Sum of the three bucket embeddings of each attribute, `[n, id_dim]`.
    fn attribute_embedding(
        &self,
        g: &mut Graph,
        it: &ItemBranch,
        attrs: &[AttributeFeatures],
    ) -> Result<Var> {
        let d: Vec<usize> = attrs.iter().map(|a| a.discount as usize).collect();
        let l: Vec<usize> = attrs.iter().map(|a| a.price_level as usize).collect();
        let r: Vec<usize> = attrs.iter().map(|a| a.category_rank as usize).collect();
        let d = it.discount.lookup(g, &d)?;
        let l = it.level.lookup(g, &l)?;
        let r = it.rank.lookup(g, &r)?;
        let dl = g.tape.add(d, l)?;
        Ok(g.tape.add(dl, r)?)
    }

    fn item_behavior(
        &self,
        g: &mut Graph,
        it: &ItemBranch,
        batch: &[&TrainingSample],
        n_states: usize,
        n_users: usize,
    ) -> Result<ItemBranchOutput> {
        let b = batch.len();
        let d = self.config.id_dim;
        let hidden = self.config.sel_hidden;

        // Attribute embedding of every state slot, sample-major; padding is zero.
        let attrs: Vec<AttributeFeatures> = batch
            .iter()
            .flat_map(|s| {
                s.item.states.iter().zip(&s.item.state_mask).map(|(st, m)| {
                    if *m {
                        st.attribute
                    } else {
                        AttributeFeatures::PADDING
                    }
                })
            })
            .collect();
        let attr = self.attribute_embedding(g, it, &attrs)?;

        // Attribute attention over each non-empty real state.
        let rows: Vec<(usize, usize)> = (0..b)
            .flat_map(|i| (0..n_states).map(move |s| (i, s)))
            .filter(|&(i, s)| batch[i].item.state_mask[s] && !batch[i].item.states[s].is_empty)
            .collect();
        let mut aal_out = None;
        let mut aal_diag = None;
        let mut table_parts = Vec::new();
        if !rows.is_empty() {
            let n = rows.len();
            let q_idx: Vec<usize> = rows.iter().map(|(i, s)| i * n_states + s).collect();
            let q = g.tape.gather_rows(attr, &q_idx, None)?;
            let q = g.tape.reshape(q, &[n, 1, d])?;
            let mut ids = Vec::with_capacity(n * n_users);
            let mut mask = Vec::with_capacity(n * n_users);
            for (i, s) in &rows {
                let st = &batch[*i].item.states[*s];
                ids.extend(st.user_ids.iter().zip(&st.user_mask).map(|(u, m)| {
                    if *m {
                        *u as usize
                    } else {
                        0
                    }
                }));
                mask.extend_from_slice(&st.user_mask);
            }
            let kv = self.user_emb.lookup(g, &ids)?;
            let kv = g.tape.reshape(kv, &[n, n_users, d])?;
            let out = match &it.aal {
                Some(att) => {
                    let a = att.forward(g, q, kv, kv, &mask)?;
                    aal_diag = Some(AttentionDiag {
                        weights: a.weights,
                        rows: rows.clone(),
                        mask,
                    });
                    a.out
                }
                None => {
                    let mut w = Vec::with_capacity(n * n_users);
                    for chunk in mask.chunks(n_users) {
                        let k = chunk.iter().filter(|m| **m).count() as f64;
                        w.extend(chunk.iter().map(|m| if *m { 1.0 / k } else { 0.0 }));
                    }
                    let w = g.constant(Tensor::new(vec![n, 1, n_users], w)?);
                    g.tape.batch_matmul(w, kv, false)?
                }
            };
            let out = g.tape.reshape(out, &[n, d])?;
            aal_out = Some(out);
            table_parts.push(out);
        }
        let empty_row = rows.len();
        let zero_row = rows.len() + 1;
        table_parts.push(g.param(it.empty_state));
        table_parts.push(g.constant(Tensor::zeros(vec![1, d])));
        let table = g.tape.concat_rows(&table_parts)?;

        // Slot lookup into the table for each (sample, state).
        let mut slot = vec![zero_row; b * n_states];
        for (i, s) in batch.iter().enumerate() {
            for k in 0..n_states {
                if s.item.state_mask[k] {
                    slot[i * n_states + k] = empty_row;
                }
            }
        }
        for (r, (i, s)) in rows.iter().enumerate() {
            slot[i * n_states + s] = r;
        }

        let mut hs = Vec::with_capacity(n_states);
        let mut active = Vec::with_capacity(n_states);
        let mut xs = Vec::with_capacity(n_states);
        for k in 0..n_states {
            let idx: Vec<usize> = (0..b).map(|i| slot[i * n_states + k]).collect();
            xs.push(g.tape.gather_rows(table, &idx, None)?);
            active.push(
                batch
                    .iter()
                    .map(|s| s.item.state_mask[k])
                    .collect::<Vec<bool>>(),
            );
        }
        match &it.evolution {
            Evolution::Gru(cell) => {
                let h0 = g.constant(Tensor::zeros(vec![b, hidden]));
                hs = cell.run_masked(g, &xs, &active, h0)?;
            }
            Evolution::Dense { w, b: bias } => {
                for x in &xs {
                    let y = g.linear(*x, *w, Some(*bias))?;
                    hs.push(g.tape.tanh(y)?);
                }
            }
        }

        // Personalized attention over the states of items with history.
        let warm: Vec<usize> = (0..b)
            .filter(|i| batch[*i].item.state_mask.iter().any(|m| *m))
            .collect();
        let mut parts = Vec::new();
        let mut pal_diag = None;
        if !warm.is_empty() {
            let w = warm.len();
            let stack = g.tape.concat_last(&hs)?;
            let hw = g.tape.gather_rows(stack, &warm, None)?;
            let hw = g.tape.reshape(hw, &[w, n_states, hidden])?;
            let attr_by_sample = g.tape.reshape(attr, &[b, n_states * d])?;
            let aw = g.tape.gather_rows(attr_by_sample, &warm, None)?;
            let aw = g.tape.reshape(aw, &[w, n_states, d])?;
            let k = g.tape.concat_last(&[hw, aw])?;
            let users: Vec<usize> = warm.iter().map(|i| batch[*i].user_id as usize).collect();
            let u = self.user_emb.lookup(g, &users)?;
            let current: Vec<AttributeFeatures> = warm
                .iter()
                .map(|i| batch[*i].item.current_attribute)
                .collect();
            let alpha = self.attribute_embedding(g, it, &current)?;
            let q = g.tape.concat_last(&[u, alpha])?;
            let q = g.tape.reshape(q, &[w, 1, 2 * d])?;
            let mask: Vec<bool> = warm
                .iter()
                .flat_map(|i| batch[*i].item.state_mask.iter().copied())
                .collect();
            let att = it.pal.forward(g, q, k, hw, &mask)?;
            parts.push(g.tape.reshape(att.out, &[w, hidden])?);
            pal_diag = Some(AttentionDiag {
                weights: att.weights,
                rows: warm.iter().map(|i| (*i, 0)).collect(),
                mask,
            });
        }
        parts.push(g.param(it.cold_item));
        let table = g.tape.concat_rows(&parts)?;
        let mut next = 0;
        let idx: Vec<usize> = (0..b)
            .map(|i| {
                if warm.binary_search(&i).is_ok() {
                    next += 1;
                    next - 1
                } else {
                    warm.len()
                }
            })
            .collect();
        let repr = g.tape.gather_rows(table, &idx, None)?;
        Ok(ItemBranchOutput {
            repr,
            aal_out,
            aal_rows: rows,
            aal: aal_diag,
            pal: pal_diag,
        })
    }

    /// GRU over per-change features; items without changes give zeros.
    fn frequency_extraction(
        &self,
        g: &mut Graph,
        cell: &GruCell,
        batch: &[&TrainingSample],
    ) -> Result<Var> {
        let b = batch.len();
        let feats = batch
            .iter()
            .map(|s| frequency_features(&s.item.change_timestamps))
            .collect::<Result<Vec<_>>>()?;
        let steps = feats.iter().map(Vec::len).max().unwrap_or(0);
        let mut xs = Vec::with_capacity(steps);
        let mut active = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut x = vec![0.0; b * 2];
            let mut act = vec![false; b];
            for (i, f) in feats.iter().enumerate() {
                if let Some(v) = f.get(t) {
                    x[2 * i] = v[0];
                    x[2 * i + 1] = v[1];
                    act[i] = true;
                }
            }
            xs.push(g.constant(Tensor::new(vec![b, 2], x)?));
            active.push(act);
        }
        let h0 = g.constant(Tensor::zeros(vec![b, self.config.fel_hidden]));
        let hs = cell.run_masked(g, &xs, &active, h0)?;
        Ok(hs.last().copied().unwrap_or(h0))
    }

    /// Click probabilities in evaluation mode, scored in chunks.
    pub fn predict(&self, samples: &[TrainingSample], batch_size: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(batch_size.max(1)) {
            let refs: Vec<&TrainingSample> = chunk.iter().collect();
            let mut g = Graph::new(&self.params, false);
            let f = self.forward(&mut g, &refs)?;
            out.extend_from_slice(g.value(f.probs).data());
        }
        Ok(out)
    }
}

struct ItemBranchOutput {
    repr: Var,
    aal_out: Option<Var>,
    aal_rows: Vec<(usize, usize)>,
    aal: Option<AttentionDiag>,
    pal: Option<AttentionDiag>,
}
