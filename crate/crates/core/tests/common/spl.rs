//! Brute-force oracles for state partitioning and sample leakage.

use caen_core::data::{
    partition_states, AttributeChangeEvent, Dataset, Horizon, InteractionEvent, TrainingSample,
    SECONDS_PER_DAY,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

/// Fuzzes `n_items` random items and checks every partition against a
/// linear-scan oracle. Returns the number of interactions checked.
pub fn fuzz_partition(n_items: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    for item in 1..=n_items as u32 {
        let horizon = Horizon {
            start: rng.random_range(0..1000),
            end: rng.random_range(1000..3000),
        };
        let mut t = rng.random_range(-200..horizon.start + 50);
        let mut changes = Vec::new();
        for _ in 0..rng.random_range(0..12) {
            changes.push(AttributeChangeEvent {
                item_id: item,
                timestamp: t,
                new_value: rng.random_range(1..100) as f64,
            });
            // Zero gaps are not allowed; small gaps hit boundaries often.
            t += if rng.random_bool(0.3) {
                rng.random_range(1..5)
            } else {
                rng.random_range(1..600)
            };
        }
        // Land some changes exactly on the horizon edges.
        if rng.random_bool(0.2) {
            if let Some(c) = changes.iter_mut().find(|c| c.timestamp >= horizon.start) {
                c.timestamp = horizon.start;
            }
        }
        changes.sort_by_key(|c| c.timestamp);
        changes.dedup_by_key(|c| c.timestamp);
        let mut events: Vec<InteractionEvent> = (0..rng.random_range(0..40))
            .map(|k| InteractionEvent {
                user_id: k + 1,
                item_id: item,
                timestamp: rng.random_range(horizon.start - 300..horizon.end + 300),
                clicked: true,
            })
            .collect();
        if let (Some(e), Some(c)) = (events.first_mut(), changes.get(changes.len() / 2)) {
            e.timestamp = c.timestamp;
        }
        events.sort_by_key(|e| e.timestamp);
        let initial = 500.0;
        let p = partition_states(item, &events, &changes, horizon, initial);

        let inside: Vec<&AttributeChangeEvent> = changes
            .iter()
            .filter(|c| horizon.start < c.timestamp && c.timestamp < horizon.end)
            .collect();
        if p.states.len() != inside.len() + 1 {
            return Err(format!(
                "item {item}: {} states for {} changes",
                p.states.len(),
                inside.len()
            ));
        }
        if p.states.first().map(|s| s.start) != Some(horizon.start)
            || p.states.last().map(|s| s.end) != Some(horizon.end)
        {
            return Err(format!("item {item}: states do not tile the horizon"));
        }
        for w in p.states.windows(2) {
            if w[0].end != w[1].start || w[0].start >= w[0].end {
                return Err(format!(
                    "item {item}: states overlap or are empty intervals"
                ));
            }
        }
        let kept: usize = p.states.iter().map(|s| s.user_ids.len()).sum();
        let in_horizon = events
            .iter()
            .filter(|e| horizon.contains(e.timestamp))
            .count();
        if kept != in_horizon || p.dropped != events.len() - in_horizon {
            return Err(format!(
                "item {item}: kept {kept} of {in_horizon}, dropped {}",
                p.dropped
            ));
        }
        for e in &events {
            let located: Vec<usize> = (0..p.states.len())
                .filter(|k| p.states[*k].user_ids.contains(&e.user_id))
                .collect();
            if !horizon.contains(e.timestamp) {
                if !located.is_empty() {
                    return Err(format!(
                        "item {item}: event at {} leaked into a state",
                        e.timestamp
                    ));
                }
                continue;
            }
            let idx = inside.iter().filter(|c| c.timestamp <= e.timestamp).count();
            let value = changes
                .iter()
                .rev()
                .find(|c| c.timestamp <= e.timestamp)
                .map_or(initial, |c| c.new_value);
            let s = &p.states[idx];
            if located != [idx]
                || s.value != value
                || !(s.start <= e.timestamp && e.timestamp < s.end)
            {
                return Err(format!(
                    "item {item}: event at {} misplaced (found {located:?}, want {idx})",
                    e.timestamp
                ));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// Checks that no sample feature uses information at or after its exposure
/// or outside the horizon. Returns the number of samples scanned.
pub fn scan_leakage(
    ds: &Dataset,
    samples: &[TrainingSample],
    horizon_days: i64,
) -> Result<usize, String> {
    let mut clicks: HashMap<(u32, u32), Vec<i64>> = HashMap::new();
    for e in ds.interactions.iter().filter(|e| e.clicked) {
        clicks
            .entry((e.user_id, e.item_id))
            .or_default()
            .push(e.timestamp);
    }
    let mut changes: HashMap<u32, Vec<i64>> = HashMap::new();
    for c in &ds.changes {
        changes.entry(c.item_id).or_default().push(c.timestamp);
    }
    let clicked_in = |u: u32, i: u32, lo: i64, hi: i64| {
        clicks
            .get(&(u, i))
            .is_some_and(|ts| ts.iter().any(|t| lo <= *t && *t < hi))
    };
    for s in samples {
        let (lo, hi) = (s.timestamp - horizon_days * SECONDS_PER_DAY, s.timestamp);
        for (i, m) in s.behaviors.item_ids.iter().zip(&s.behaviors.mask) {
            if *m && !clicked_in(s.user_id, *i, lo, hi) {
                return Err(format!(
                    "user {} behavior item {i} has no click in window",
                    s.user_id
                ));
            }
        }
        let real = s.item.num_real_states();
        for (k, st) in s.item.states.iter().enumerate().take(real) {
            let end = s
                .item
                .states
                .get(k + 1)
                .filter(|_| k + 1 < real)
                .map_or(hi, |n| n.start_time);
            if st.start_time < lo || end > hi {
                return Err(format!("item {} state outside window", s.item_id));
            }
            for u in st.real_users() {
                if !clicked_in(u, s.item_id, st.start_time, end) {
                    return Err(format!(
                        "item {} state user {u} has no click in its interval",
                        s.item_id
                    ));
                }
            }
        }
        if s.item
            .change_timestamps
            .iter()
            .any(|t| *t <= lo || *t >= hi)
        {
            return Err(format!("item {} change outside window", s.item_id));
        }
        let known = changes.get(&s.item_id).cloned().unwrap_or_default();
        if s.item.change_timestamps.iter().any(|t| !known.contains(t)) {
            return Err(format!("item {} invented a change", s.item_id));
        }
    }
    Ok(samples.len())
}
