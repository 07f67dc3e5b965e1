#![allow(dead_code)]

pub mod spl;

use caen_core::data::{
    AttributeFeatures, AttributeStateInput, ItemBehaviorInput, TrainingSample, TruncationConfig,
    UserBehaviorInput, CATEGORY_RANK_BUCKETS, DISCOUNT_BUCKETS, PRICE_LEVEL_BUCKETS,
};
use caen_core::model::{Ablation, CaenModel, ModelConfig, Vocab};
use rand::Rng;

pub const VOCAB: Vocab = Vocab {
    users: 30,
    items: 20,
    categories: 4,
    segments: 3,
};

pub fn small_config() -> ModelConfig {
    ModelConfig {
        mlp_hidden: vec![16, 8],
        ..Default::default()
    }
}

pub fn model(ablation: Ablation, seed: u64) -> CaenModel {
    CaenModel::new(small_config(), VOCAB, ablation, seed).unwrap()
}

pub fn random_attribute<R: Rng>(rng: &mut R) -> AttributeFeatures {
    AttributeFeatures {
        discount: rng.random_range(1..=DISCOUNT_BUCKETS as u32),
        price_level: rng.random_range(1..=PRICE_LEVEL_BUCKETS as u32),
        category_rank: rng.random_range(1..=CATEGORY_RANK_BUCKETS as u32),
    }
}

pub struct Shape {
    pub states: usize,
    /// Users in each real state.
    pub users: Vec<usize>,
    pub behaviors: usize,
    pub changes: usize,
}

pub fn random_shape<R: Rng>(rng: &mut R) -> Shape {
    let states = rng.random_range(0..=8);
    Shape {
        states,
        users: (0..states)
            .map(|_| {
                if rng.random_bool(0.2) {
                    0
                } else {
                    rng.random_range(1..=12)
                }
            })
            .collect(),
        behaviors: rng.random_range(0..=20),
        changes: if states == 0 {
            0
        } else {
            rng.random_range(0..=states)
        },
    }
}

/// A padded sample with the given real content and random ids.
pub fn sample_with<R: Rng>(rng: &mut R, shape: &Shape) -> TrainingSample {
    let t = TruncationConfig::default();
    let mut states = Vec::new();
    for k in 0..t.max_states {
        if k < shape.states {
            let n = shape.users[k];
            let mut user_ids: Vec<u32> = (0..n)
                .map(|_| rng.random_range(1..=VOCAB.users as u32))
                .collect();
            let mut user_mask = vec![true; n];
            user_ids.resize(t.max_users_per_state, 0);
            user_mask.resize(t.max_users_per_state, false);
            states.push(AttributeStateInput {
                attribute: random_attribute(rng),
                user_ids,
                user_mask,
                start_time: 1000 * k as i64,
                is_empty: n == 0,
            });
        } else {
            states.push(AttributeStateInput {
                attribute: AttributeFeatures::PADDING,
                user_ids: vec![0; t.max_users_per_state],
                user_mask: vec![false; t.max_users_per_state],
                start_time: 0,
                is_empty: true,
            });
        }
    }
    let mut item_ids: Vec<u32> = (0..shape.behaviors)
        .map(|_| rng.random_range(1..=VOCAB.items as u32))
        .collect();
    let mut mask = vec![true; shape.behaviors];
    item_ids.resize(t.max_behaviors, 0);
    mask.resize(t.max_behaviors, false);
    let mut ts = 0i64;
    let change_timestamps = (0..shape.changes)
        .map(|_| {
            ts += rng.random_range(600..200_000);
            ts
        })
        .collect();
    let current = if shape.states > 0 {
        states[shape.states - 1].attribute
    } else {
        random_attribute(rng)
    };
    TrainingSample {
        user_id: rng.random_range(1..=VOCAB.users as u32),
        item_id: rng.random_range(1..=VOCAB.items as u32),
        timestamp: 10_000_000,
        label: rng.random_range(0..2),
        user_segment: rng.random_range(1..=VOCAB.segments as u32),
        item_category: rng.random_range(1..=VOCAB.categories as u32),
        item_price_level: rng.random_range(1..=PRICE_LEVEL_BUCKETS as u32),
        behaviors: UserBehaviorInput { item_ids, mask },
        item: ItemBehaviorInput {
            state_mask: (0..t.max_states).map(|k| k < shape.states).collect(),
            states,
            change_timestamps,
            current_attribute: current,
        },
        total_states: shape.states,
        true_ctr: None,
    }
}

pub fn random_sample<R: Rng>(rng: &mut R) -> TrainingSample {
    let shape = random_shape(rng);
    sample_with(rng, &shape)
}

/// Randomizes every bias so zero-initialized vectors do not hide bugs.
pub fn jitter<R: Rng>(model: &mut CaenModel, rng: &mut R) {
    for v in model.params.values_mut() {
        for x in v.data_mut() {
            if *x == 0.0 {
                *x = rng.random_range(-0.1..0.1);
            }
        }
    }
    // keep padding rows zero
    for id in model.params.ids().collect::<Vec<_>>() {
        if model.params.name(id).starts_with("emb.") {
            let t = model.params.get_mut(id);
            let dim = t.shape()[1];
            t.data_mut()[..dim].fill(0.0);
        }
    }
}
