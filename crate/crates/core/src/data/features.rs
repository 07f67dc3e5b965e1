//! Price features of an attribute state, bucketized to embedding ids.
//!
//! Bucket ids start at 1; 0 is the padding id.

use super::events::ItemProfile;
use serde::{Deserialize, Serialize};

pub const DISCOUNT_BUCKETS: usize = 10;
pub const PRICE_LEVEL_BUCKETS: usize = 5;
pub const CATEGORY_RANK_BUCKETS: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeFeatures {
    /// Decile of `1 - price / base_price`.
    pub discount: u32,
    /// Quintile of the price among all catalog base prices.
    pub price_level: u32,
    /// Decile of the price's rank among its category's base prices.
    pub category_rank: u32,
}

impl AttributeFeatures {
    pub const PADDING: AttributeFeatures = AttributeFeatures {
        discount: 0,
        price_level: 0,
        category_rank: 0,
    };
}

fn decile(fraction: f64, buckets: usize) -> u32 {
    let b = (fraction * buckets as f64 + 1e-9).floor().max(0.0) as usize;
    (b.min(buckets - 1) + 1) as u32
}

#[derive(Clone, Debug)]
pub struct PriceBucketizer {
    base_price: Vec<f64>,
    category: Vec<u32>,
    level_cutoffs: Vec<f64>,
    category_prices: Vec<Vec<f64>>,
}

impl PriceBucketizer {
    pub fn new(items: &[ItemProfile]) -> Self {
        let max_item = items.iter().map(|i| i.item_id as usize).max().unwrap_or(0);
        let max_cat = items.iter().map(|i| i.category as usize).max().unwrap_or(0);
        let mut base_price = vec![0.0; max_item + 1];
        let mut category = vec![0; max_item + 1];
        let mut category_prices = vec![Vec::new(); max_cat + 1];
        for it in items {
            base_price[it.item_id as usize] = it.base_price;
            category[it.item_id as usize] = it.category;
            category_prices[it.category as usize].push(it.base_price);
        }
        for prices in &mut category_prices {
            prices.sort_by(f64::total_cmp);
        }
        let mut all: Vec<f64> = items.iter().map(|i| i.base_price).collect();
        all.sort_by(f64::total_cmp);
        let level_cutoffs = (1..PRICE_LEVEL_BUCKETS)
            .map(|q| {
                if all.is_empty() {
                    0.0
                } else {
                    all[(q * all.len() / PRICE_LEVEL_BUCKETS).min(all.len() - 1)]
                }
            })
            .collect();
        Self {
            base_price,
            category,
            level_cutoffs,
            category_prices,
        }
    }

    pub fn features(&self, item_id: u32, price: f64) -> AttributeFeatures {
        let base = self.base_price[item_id as usize];
        let discount = if base > 0.0 {
            (1.0 - price / base).max(0.0)
        } else {
            0.0
        };
        let price_level = 1 + self.level_cutoffs.iter().filter(|c| **c <= price).count() as u32;
        let peers = &self.category_prices[self.category[item_id as usize] as usize];
        let below = peers.partition_point(|p| *p < price);
        let rank = if peers.is_empty() {
            0.0
        } else {
            below as f64 / peers.len() as f64
        };
        AttributeFeatures {
            discount: decile(discount, DISCOUNT_BUCKETS),
            price_level,
            category_rank: decile(rank, CATEGORY_RANK_BUCKETS),
        }
    }
}
