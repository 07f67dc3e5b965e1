//! Assembly of training samples: histories strictly before the exposure,
//! truncated to the most recent entries and padded with id 0.

use super::events::{
    AttributeChangeEvent, ExposureEvent, InteractionEvent, ItemProfile, Timestamp, UserProfile,
    SECONDS_PER_DAY,
};
use super::features::{AttributeFeatures, PriceBucketizer};
use super::partition::{partition_states, Horizon};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruncationConfig {
    pub max_states: usize,
    pub max_users_per_state: usize,
    pub max_behaviors: usize,
    pub horizon_days: i64,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        Self {
            max_states: 8,
            max_users_per_state: 50,
            max_behaviors: 20,
            horizon_days: 30,
        }
    }
}

impl TruncationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_states == 0
            || self.max_users_per_state == 0
            || self.max_behaviors == 0
            || self.horizon_days <= 0
        {
            return Err(Error::Config(
                "truncation lengths and horizon must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One attribute state as fed to the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeStateInput {
    pub attribute: AttributeFeatures,
    /// Most recent users, oldest first, padded with 0.
    pub user_ids: Vec<u32>,
    pub user_mask: Vec<bool>,
    pub start_time: Timestamp,
    pub is_empty: bool,
}

impl AttributeStateInput {
    fn padding(users: usize) -> Self {
        Self {
            attribute: AttributeFeatures::PADDING,
            user_ids: vec![0; users],
            user_mask: vec![false; users],
            start_time: 0,
            is_empty: true,
        }
    }

    pub fn real_users(&self) -> impl Iterator<Item = u32> + '_ {
        self.user_ids
            .iter()
            .zip(&self.user_mask)
            .filter(|(_, m)| **m)
            .map(|(u, _)| *u)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemBehaviorInput {
    /// Kept states oldest first, then padding.
    pub states: Vec<AttributeStateInput>,
    pub state_mask: Vec<bool>,
    /// Attribute change times inside the horizon, ascending.
    pub change_timestamps: Vec<Timestamp>,
    pub current_attribute: AttributeFeatures,
}

impl ItemBehaviorInput {
    pub fn num_real_states(&self) -> usize {
        self.state_mask.iter().filter(|m| **m).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserBehaviorInput {
    /// Most recent clicked items, oldest first, padded with 0.
    pub item_ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl UserBehaviorInput {
    pub fn len(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub user_id: u32,
    pub item_id: u32,
    pub timestamp: Timestamp,
    pub label: u8,
    pub user_segment: u32,
    pub item_category: u32,
    /// Price-level bucket of the current price.
    pub item_price_level: u32,
    pub behaviors: UserBehaviorInput,
    pub item: ItemBehaviorInput,
    /// Attribute states in the horizon before truncation.
    pub total_states: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_ctr: Option<f64>,
}

fn in_window<'a>(events: &'a [InteractionEvent], h: Horizon) -> &'a [InteractionEvent] {
    let lo = events.partition_point(|e| e.timestamp < h.start);
    let hi = events.partition_point(|e| e.timestamp < h.end);
    &events[lo..hi]
}

/// Builds one sample from histories of the exposed user and item.
///
/// Histories may contain events at or after the exposure; only clicks inside
/// `[t - horizon, t)` are used. Inputs must be time-sorted.
#[allow(clippy::too_many_arguments)]
pub fn build_sample(
    exposure: &ExposureEvent,
    user: &UserProfile,
    item: &ItemProfile,
    user_history: &[InteractionEvent],
    item_history: &[InteractionEvent],
    item_changes: &[AttributeChangeEvent],
    buckets: &PriceBucketizer,
    trunc: &TruncationConfig,
) -> TrainingSample {
    let horizon = Horizon {
        start: exposure.timestamp - trunc.horizon_days * SECONDS_PER_DAY,
        end: exposure.timestamp,
    };

    let behaviors: Vec<u32> = in_window(user_history, horizon)
        .iter()
        .filter(|e| e.clicked)
        .map(|e| e.item_id)
        .collect();
    let keep = &behaviors[behaviors.len().saturating_sub(trunc.max_behaviors)..];
    let mut item_ids = keep.to_vec();
    let mut mask = vec![true; keep.len()];
    item_ids.resize(trunc.max_behaviors, 0);
    mask.resize(trunc.max_behaviors, false);

    let clicks: Vec<InteractionEvent> = in_window(item_history, horizon)
        .iter()
        .filter(|e| e.clicked)
        .cloned()
        .collect();
    let partition = partition_states(
        item.item_id,
        &clicks,
        item_changes,
        horizon,
        item.base_price,
    );
    let total_states = partition.states.len();
    let current_value = partition.states.last().map_or(item.base_price, |s| s.value);
    let current_attribute = buckets.features(item.item_id, current_value);

    let mut states = Vec::with_capacity(trunc.max_states);
    if !clicks.is_empty() {
        let first = total_states.saturating_sub(trunc.max_states);
        for s in &partition.states[first..] {
            let users = &s.user_ids[s.user_ids.len().saturating_sub(trunc.max_users_per_state)..];
            let mut user_ids = users.to_vec();
            let mut user_mask = vec![true; users.len()];
            user_ids.resize(trunc.max_users_per_state, 0);
            user_mask.resize(trunc.max_users_per_state, false);
            states.push(AttributeStateInput {
                attribute: buckets.features(item.item_id, s.value),
                user_ids,
                user_mask,
                start_time: s.start,
                is_empty: users.is_empty(),
            });
        }
    }
    let mut state_mask = vec![true; states.len()];
    state_mask.resize(trunc.max_states, false);
    states.resize_with(trunc.max_states, || {
        AttributeStateInput::padding(trunc.max_users_per_state)
    });

    let changes: Vec<Timestamp> = item_changes
        .iter()
        .map(|c| c.timestamp)
        .filter(|t| horizon.start < *t && *t < horizon.end)
        .collect();
    let change_timestamps = changes[changes.len().saturating_sub(trunc.max_states)..].to_vec();

    TrainingSample {
        user_id: exposure.user_id,
        item_id: exposure.item_id,
        timestamp: exposure.timestamp,
        label: exposure.clicked as u8,
        user_segment: user.segment,
        item_category: item.category,
        item_price_level: current_attribute.price_level,
        behaviors: UserBehaviorInput { item_ids, mask },
        item: ItemBehaviorInput {
            states,
            state_mask,
            change_timestamps,
            current_attribute,
        },
        total_states,
        true_ctr: exposure.true_ctr,
    }
}

/// Per-user and per-item indexes over an event corpus.
#[derive(Clone, Debug)]
pub struct SampleBuilder {
    trunc: TruncationConfig,
    buckets: PriceBucketizer,
    users: Vec<Option<UserProfile>>,
    items: Vec<Option<ItemProfile>>,
    user_clicks: Vec<Vec<InteractionEvent>>,
    item_clicks: Vec<Vec<InteractionEvent>>,
    item_changes: Vec<Vec<AttributeChangeEvent>>,
}

impl SampleBuilder {
    pub fn new(
        users: &[UserProfile],
        items: &[ItemProfile],
        interactions: &[InteractionEvent],
        changes: &[AttributeChangeEvent],
        trunc: TruncationConfig,
    ) -> Result<Self> {
        trunc.validate()?;
        let n_users = users.iter().map(|u| u.user_id as usize).max().unwrap_or(0) + 1;
        let n_items = items.iter().map(|i| i.item_id as usize).max().unwrap_or(0) + 1;
        let mut user_index = vec![None; n_users];
        for u in users {
            if u.user_id == 0 {
                return Err(Error::Data("user id 0 is reserved for padding".into()));
            }
            user_index[u.user_id as usize] = Some(u.clone());
        }
        let mut item_index = vec![None; n_items];
        for i in items {
            if i.item_id == 0 {
                return Err(Error::Data("item id 0 is reserved for padding".into()));
            }
            item_index[i.item_id as usize] = Some(i.clone());
        }
        let mut user_clicks = vec![Vec::new(); n_users];
        let mut item_clicks = vec![Vec::new(); n_items];
        for ev in interactions {
            let (u, i) = (ev.user_id as usize, ev.item_id as usize);
            if u >= n_users || user_index[u].is_none() || i >= n_items || item_index[i].is_none() {
                return Err(Error::Data(format!(
                    "interaction references unknown user {} or item {}",
                    ev.user_id, ev.item_id
                )));
            }
            user_clicks[u].push(ev.clone());
            item_clicks[i].push(ev.clone());
        }
        let mut item_changes = vec![Vec::new(); n_items];
        for c in changes {
            let i = c.item_id as usize;
            if i >= n_items || item_index[i].is_none() {
                return Err(Error::Data(format!(
                    "change references unknown item {}",
                    c.item_id
                )));
            }
            item_changes[i].push(c.clone());
        }
        for list in user_clicks.iter_mut().chain(item_clicks.iter_mut()) {
            list.sort_by_key(|e| e.timestamp);
        }
        for list in &mut item_changes {
            list.sort_by_key(|c| c.timestamp);
            if list.windows(2).any(|w| w[0].timestamp >= w[1].timestamp) {
                return Err(Error::Data(format!(
                    "item {} has non-increasing change timestamps",
                    list[0].item_id
                )));
            }
        }
        Ok(Self {
            trunc,
            buckets: PriceBucketizer::new(items),
            users: user_index,
            items: item_index,
            user_clicks,
            item_clicks,
            item_changes,
        })
    }

    pub fn truncation(&self) -> &TruncationConfig {
        &self.trunc
    }

    pub fn build(&self, exposure: &ExposureEvent) -> Result<TrainingSample> {
        let (u, i) = (exposure.user_id as usize, exposure.item_id as usize);
        let user = self.users.get(u).and_then(Option::as_ref);
        let item = self.items.get(i).and_then(Option::as_ref);
        let (Some(user), Some(item)) = (user, item) else {
            return Err(Error::Data(format!(
                "exposure references unknown user {} or item {}",
                exposure.user_id, exposure.item_id
            )));
        };
        Ok(build_sample(
            exposure,
            user,
            item,
            &self.user_clicks[u],
            &self.item_clicks[i],
            &self.item_changes[i],
            &self.buckets,
            &self.trunc,
        ))
    }

    pub fn build_all(&self, exposures: &[ExposureEvent]) -> Result<Vec<TrainingSample>> {
        exposures.iter().map(|e| self.build(e)).collect()
    }
}
