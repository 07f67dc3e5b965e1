//! Synthetic e-commerce world with price changes and a logistic ground truth.
//!
//! Users belong to one of three price-sensitivity segments. Items have a
//! category, base price, quality, popularity and a latent taste vector; their
//! price follows a piecewise-constant discount trajectory whose change times
//! are a Poisson process. The click probability of user `u` on item `i` at
//! time `t` is
//!
//! ```text
//! p = σ(bias + w_pop·g_i + w_quality·a_u·q_i·(z_u·z_i)/√L + w_sensitivity·s_u·appeal(i, t))
//! appeal(i, t) = discount(i, t) + w_reference·drop(i, t)
//! ```
//!
//! `drop` is the cut from the previous price to the current one as a share of
//! the base price (zero after a raise), so the price path matters and not
//! only the current price. `s_u` and `a_u` come from the user's segment. A segment with small
//! `a_u` (deal hunters) clicks on discounts rather than taste, and segments
//! may browse at different rates.
//!
//! Background browsing produces the interaction log (clicks only); a separate
//! stream of exposures after the history window is labelled and negative
//! sampled.

use super::events::{
    AttributeChangeEvent, ExposureEvent, InteractionEvent, ItemProfile, Timestamp, UserProfile,
    SECONDS_PER_DAY,
};
use super::partition::Horizon;
use crate::error::{Error, Result};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticWorldConfig {
    pub seed: u64,
    pub n_users: usize,
    pub n_items: usize,
    pub n_categories: usize,
    pub latent_dim: usize,
    /// Shares of the price-sensitive, neutral and premium segments.
    pub segment_shares: [f64; 3],
    /// Sensitivity `s_u` of each segment.
    pub segment_sensitivity: [f64; 3],
    /// Taste weight `a_u` of each segment.
    pub segment_affinity: [f64; 3],
    /// Multiplier on `views_per_user_per_day` for each segment.
    pub segment_activity: [f64; 3],
    /// Log-scale mean and spread of base prices; each category adds an
    /// offset drawn with `category_price_spread`.
    pub log_price_mean: f64,
    pub log_price_sd: f64,
    pub category_price_spread: f64,
    pub quality_min: f64,
    pub quality_max: f64,
    /// Spread of the log-normal popularity weight used to pick viewed items.
    pub popularity_sd: f64,
    /// Expected price changes per item per `horizon_days`.
    pub change_rate: f64,
    /// Items with higher popularity change price more often:
    /// `λ_i ∝ exp(coupling · g_i)`, normalized to keep the mean at `change_rate`.
    pub activity_popularity_coupling: f64,
    pub discount_levels: Vec<f64>,
    /// Items open at the first discount level instead of a random one.
    pub start_at_base_price: bool,
    pub horizon_days: i64,
    pub exposure_days: i64,
    pub test_days: i64,
    pub views_per_user_per_day: usize,
    /// Raw exposures drawn before negative sampling.
    pub exposures: usize,
    /// Negatives kept per positive.
    pub negative_ratio: f64,
    pub bias: f64,
    pub w_popularity: f64,
    pub w_quality: f64,
    pub w_sensitivity: f64,
    pub w_reference: f64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_users: 2000,
            n_items: 1000,
            n_categories: 20,
            latent_dim: 8,
            segment_shares: [0.3, 0.5, 0.2],
            segment_sensitivity: [1.0, 0.0, -0.5],
            segment_affinity: [1.0, 1.0, 1.0],
            segment_activity: [1.0, 1.0, 1.0],
            log_price_mean: 50f64.ln(),
            log_price_sd: 0.4,
            category_price_spread: 0.5,
            quality_min: 0.5,
            quality_max: 1.5,
            popularity_sd: 0.8,
            change_rate: 1.73,
            activity_popularity_coupling: 0.5,
            discount_levels: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            start_at_base_price: false,
            horizon_days: 30,
            exposure_days: 8,
            test_days: 1,
            views_per_user_per_day: 10,
            exposures: 70_000,
            negative_ratio: 5.0,
            bias: -3.5,
            w_popularity: 0.5,
            w_quality: 2.0,
            w_sensitivity: 3.0,
            w_reference: 0.0,
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_users == 0 || self.n_items == 0 || self.n_categories == 0 || self.latent_dim == 0
        {
            return bad("user, item, category and latent counts must be positive");
        }
        if self
            .segment_shares
            .iter()
            .any(|s| !s.is_finite() || *s < 0.0)
        {
            return bad("segment shares must be non-negative");
        }
        if (self.segment_shares.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("segment shares must sum to 1");
        }
        if self
            .segment_activity
            .iter()
            .any(|a| !(*a >= 0.0 && a.is_finite()))
            || self.segment_affinity.iter().any(|a| !a.is_finite())
        {
            return bad("segment activity must be non-negative and affinity finite");
        }
        if !(self.change_rate >= 0.0 && self.change_rate.is_finite()) {
            return bad("change_rate must be a non-negative number");
        }
        if self.discount_levels.is_empty()
            || self.discount_levels.iter().any(|d| !(0.0..1.0).contains(d))
        {
            return bad("discount levels must lie in [0, 1)");
        }
        if self.change_rate > 0.0 && self.discount_levels.len() < 2 {
            return bad("price changes need at least two discount levels");
        }
        if self.horizon_days <= 0
            || self.exposure_days <= 0
            || self.test_days <= 0
            || self.test_days >= self.exposure_days
        {
            return bad("day counts must be positive with test_days < exposure_days");
        }
        if self.views_per_user_per_day == 0 || self.exposures == 0 {
            return bad("views and exposures must be positive");
        }
        if !(self.negative_ratio > 0.0) {
            return bad("negative_ratio must be positive");
        }
        if !(self.quality_min <= self.quality_max)
            || self.log_price_sd < 0.0
            || self.popularity_sd < 0.0
        {
            return bad("distribution parameters out of range");
        }
        Ok(())
    }

    /// First exposure time; history before it spans `horizon_days`.
    pub fn exposure_start(&self) -> Timestamp {
        self.horizon_days * SECONDS_PER_DAY
    }

    pub fn end(&self) -> Timestamp {
        (self.horizon_days + self.exposure_days) * SECONDS_PER_DAY
    }

    /// Exposures at or after this time form the test split.
    pub fn test_start(&self) -> Timestamp {
        self.end() - self.test_days * SECONDS_PER_DAY
    }
}

/// Hidden generator state needed to recompute click probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub user_latent: Vec<Vec<f64>>,
    pub user_sensitivity: Vec<f64>,
    pub user_affinity: Vec<f64>,
    pub item_latent: Vec<Vec<f64>>,
    pub item_quality: Vec<f64>,
    pub item_popularity: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticWorld {
    pub config: SyntheticWorldConfig,
    pub users: Vec<UserProfile>,
    pub items: Vec<ItemProfile>,
    pub interactions: Vec<InteractionEvent>,
    pub changes: Vec<AttributeChangeEvent>,
    pub exposures: Vec<ExposureEvent>,
    pub truth: GroundTruth,
}

fn sigmoid(x: f64) -> f64 {
    crate::tensor::tape::sigmoid(x)
}

/// Price of an item at `t` from its sorted change list.
pub fn price_at(changes: &[AttributeChangeEvent], base_price: f64, t: Timestamp) -> f64 {
    let k = changes.partition_point(|c| c.timestamp <= t);
    if k == 0 {
        base_price
    } else {
        changes[k - 1].new_value
    }
}

// Each generation phase draws from its own ChaCha stream.
const CATALOG_STREAM: u64 = 1;
const PRICE_STREAM: u64 = 2;
const BROWSING_STREAM: u64 = 3;
const EXPOSURE_STREAM: u64 = 4;

fn phase_rng(seed: u64, phase: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(phase);
    rng
}

impl SyntheticWorld {
    pub fn generate(config: &SyntheticWorldConfig) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let l = cfg.latent_dim;
        let mut rng = phase_rng(cfg.seed, CATALOG_STREAM);

        // Index 0 of every per-entity vector is the unused padding slot.
        let seg_index =
            WeightedIndex::new(cfg.segment_shares).map_err(|e| Error::Config(e.to_string()))?;
        let mut users = Vec::with_capacity(cfg.n_users);
        let mut user_latent = vec![vec![0.0; l]];
        let mut user_sensitivity = vec![0.0];
        let mut user_affinity = vec![0.0];
        for u in 1..=cfg.n_users {
            let seg = seg_index.sample(&mut rng);
            users.push(UserProfile {
                user_id: u as u32,
                segment: seg as u32 + 1,
            });
            user_sensitivity.push(cfg.segment_sensitivity[seg]);
            user_affinity.push(cfg.segment_affinity[seg]);
            user_latent.push((0..l).map(|_| rng.sample(StandardNormal)).collect());
        }

        let cat_offsets: Vec<f64> = (0..cfg.n_categories)
            .map(|_| cfg.category_price_spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut items = Vec::with_capacity(cfg.n_items);
        let mut item_latent = vec![vec![0.0; l]];
        let mut item_quality = vec![0.0];
        let mut item_popularity = vec![0.0];
        for i in 1..=cfg.n_items {
            let cat = rng.random_range(0..cfg.n_categories);
            let log_price = cfg.log_price_mean
                + cat_offsets[cat]
                + cfg.log_price_sd * rng.sample::<f64, _>(StandardNormal);
            items.push(ItemProfile {
                item_id: i as u32,
                category: cat as u32 + 1,
                base_price: (log_price.exp() * 100.0).round() / 100.0,
            });
            item_quality.push(rng.random_range(cfg.quality_min..=cfg.quality_max));
            item_popularity.push(rng.sample(StandardNormal));
            item_latent.push((0..l).map(|_| rng.sample(StandardNormal)).collect());
        }

        let changes = Self::price_trajectories(&cfg, &items, &item_popularity)?;
        let truth = GroundTruth {
            user_latent,
            user_sensitivity,
            user_affinity,
            item_latent,
            item_quality,
            item_popularity,
        };
        let mut world = Self {
            config: cfg,
            users,
            items,
            interactions: Vec::new(),
            changes,
            exposures: Vec::new(),
            truth,
        };
        world.interactions = world.browse()?;
        world.exposures = world.expose()?;
        Ok(world)
    }

    fn price_trajectories(
        cfg: &SyntheticWorldConfig,
        items: &[ItemProfile],
        popularity: &[f64],
    ) -> Result<Vec<AttributeChangeEvent>> {
        let mut rng = phase_rng(cfg.seed, PRICE_STREAM);
        let c = cfg.activity_popularity_coupling;
        let norm = (c * c / 2.0).exp();
        let levels = &cfg.discount_levels;
        let end = cfg.end();
        let mut out = Vec::new();
        for item in items {
            let price = |d: f64| ((item.base_price * (1.0 - d)) * 100.0).round() / 100.0;
            let drawn = rng.random_range(0..levels.len());
            let mut level = if cfg.start_at_base_price { 0 } else { drawn };
            out.push(AttributeChangeEvent {
                item_id: item.item_id,
                timestamp: 0,
                new_value: price(levels[level]),
            });
            let per_second = cfg.change_rate * (c * popularity[item.item_id as usize]).exp()
                / norm
                / (cfg.horizon_days * SECONDS_PER_DAY) as f64;
            if per_second <= 0.0 {
                continue;
            }
            let gap = Exp::new(per_second).map_err(|e| Error::Config(e.to_string()))?;
            let mut t = 0.0;
            let mut last_value = price(levels[level]);
            loop {
                t += gap.sample(&mut rng).max(1.0);
                if t >= end as f64 {
                    break;
                }
                let mut next = rng.random_range(0..levels.len() - 1);
                if next >= level {
                    next += 1;
                }
                level = next;
                let value = price(levels[level]);
                // Rounding can merge two levels on very cheap items.
                if value == last_value {
                    continue;
                }
                last_value = value;
                out.push(AttributeChangeEvent {
                    item_id: item.item_id,
                    timestamp: t as Timestamp,
                    new_value: value,
                });
            }
        }
        out.sort_by_key(|c| (c.timestamp, c.item_id));
        // Two draws can land in the same second after truncation; keep the later.
        let mut dedup: Vec<AttributeChangeEvent> = Vec::with_capacity(out.len());
        let mut last_per_item: Vec<Option<usize>> = vec![None; items.len() + 1];
        for c in out {
            match last_per_item[c.item_id as usize] {
                Some(k) if dedup[k].timestamp == c.timestamp => dedup[k] = c,
                _ => {
                    last_per_item[c.item_id as usize] = Some(dedup.len());
                    dedup.push(c);
                }
            }
        }
        Ok(dedup)
    }

    fn item_changes(&self) -> Vec<Vec<AttributeChangeEvent>> {
        let mut per_item = vec![Vec::new(); self.items.len() + 1];
        for c in &self.changes {
            per_item[c.item_id as usize].push(c.clone());
        }
        per_item
    }

    /// Current discount of an item relative to its base price.
    pub fn discount(
        &self,
        item_changes: &[AttributeChangeEvent],
        item_id: u32,
        t: Timestamp,
    ) -> f64 {
        let base = self.items[item_id as usize - 1].base_price;
        (1.0 - price_at(item_changes, base, t) / base).max(0.0)
    }

    /// Last price cut as a share of the base price; zero after a raise or
    /// before the first change.
    pub fn price_drop(
        &self,
        item_changes: &[AttributeChangeEvent],
        item_id: u32,
        t: Timestamp,
    ) -> f64 {
        let base = self.items[item_id as usize - 1].base_price;
        let k = item_changes.partition_point(|c| c.timestamp <= t);
        if k < 2 {
            return 0.0;
        }
        ((item_changes[k - 2].new_value - item_changes[k - 1].new_value) / base).max(0.0)
    }

    /// The price term `discount + w_reference · drop` at time `t`.
    pub fn price_appeal(
        &self,
        item_changes: &[AttributeChangeEvent],
        item_id: u32,
        t: Timestamp,
    ) -> f64 {
        self.discount(item_changes, item_id, t)
            + self.config.w_reference * self.price_drop(item_changes, item_id, t)
    }

    /// Ground-truth click probability given the price term.
    pub fn click_probability(&self, user_id: u32, item_id: u32, appeal: f64) -> f64 {
        let (u, i) = (user_id as usize, item_id as usize);
        let t = &self.truth;
        let cfg = &self.config;
        let affinity: f64 = t.user_latent[u]
            .iter()
            .zip(&t.item_latent[i])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / (cfg.latent_dim as f64).sqrt();
        sigmoid(
            cfg.bias
                + cfg.w_popularity * t.item_popularity[i]
                + cfg.w_quality * t.user_affinity[u] * t.item_quality[i] * affinity
                + cfg.w_sensitivity * t.user_sensitivity[u] * appeal,
        )
    }

    fn view_index(&self) -> Result<WeightedIndex<f64>> {
        let weights: Vec<f64> = self.truth.item_popularity[1..]
            .iter()
            .map(|g| (self.config.popularity_sd * g).exp())
            .collect();
        WeightedIndex::new(weights).map_err(|e| Error::Config(e.to_string()))
    }

    fn browse(&self) -> Result<Vec<InteractionEvent>> {
        let cfg = &self.config;
        let mut rng = phase_rng(cfg.seed, BROWSING_STREAM);
        let views = self.view_index()?;
        let changes = self.item_changes();
        let per_user: Vec<usize> = self
            .users
            .iter()
            .map(|u| {
                (cfg.views_per_user_per_day as f64 * cfg.segment_activity[u.segment as usize - 1])
                    .round() as usize
            })
            .collect();
        let mut out = Vec::new();
        for day in 0..cfg.horizon_days + cfg.exposure_days {
            for u in 1..=cfg.n_users as u32 {
                for _ in 0..per_user[u as usize - 1] {
                    let i = views.sample(&mut rng) as u32 + 1;
                    let t = day * SECONDS_PER_DAY + rng.random_range(0..SECONDS_PER_DAY);
                    let p =
                        self.click_probability(u, i, self.price_appeal(&changes[i as usize], i, t));
                    if rng.random::<f64>() < p {
                        out.push(InteractionEvent {
                            user_id: u,
                            item_id: i,
                            timestamp: t,
                            clicked: true,
                        });
                    }
                }
            }
        }
        out.sort_by_key(|e| (e.timestamp, e.user_id, e.item_id));
        Ok(out)
    }

    fn expose(&self) -> Result<Vec<ExposureEvent>> {
        let cfg = &self.config;
        let mut rng = phase_rng(cfg.seed, EXPOSURE_STREAM);
        let views = self.view_index()?;
        let changes = self.item_changes();
        let (start, end) = (cfg.exposure_start(), cfg.end());
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for _ in 0..cfg.exposures {
            let u = rng.random_range(1..=cfg.n_users as u32);
            let i = views.sample(&mut rng) as u32 + 1;
            let t = rng.random_range(start..end);
            let p = self.click_probability(u, i, self.price_appeal(&changes[i as usize], i, t));
            let clicked = rng.random::<f64>() < p;
            let ev = ExposureEvent {
                user_id: u,
                item_id: i,
                timestamp: t,
                clicked,
                true_ctr: Some(p),
            };
            if clicked {
                positives.push(ev);
            } else {
                negatives.push(ev);
            }
        }
        let keep =
            ((positives.len() as f64 * cfg.negative_ratio).round() as usize).min(negatives.len());
        negatives.shuffle(&mut rng);
        negatives.truncate(keep);
        let mut out = positives;
        out.extend(negatives);
        out.sort_by_key(|e| (e.timestamp, e.user_id, e.item_id));
        Ok(out)
    }

    /// Mean number of attribute states per item over `horizon`.
    pub fn mean_states_per_item(&self, horizon: Horizon) -> f64 {
        mean_states_per_item(&self.changes, self.items.len(), horizon)
    }
}

/// Average of `1 + changes strictly inside the horizon` over all items.
pub fn mean_states_per_item(
    changes: &[AttributeChangeEvent],
    n_items: usize,
    horizon: Horizon,
) -> f64 {
    let inside = changes
        .iter()
        .filter(|c| horizon.start < c.timestamp && c.timestamp < horizon.end)
        .count();
    1.0 + inside as f64 / n_items as f64
}
