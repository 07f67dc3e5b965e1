//! Attribute-based state partitioning.
//!
//! An item's history inside a horizon is cut at every attribute change. Each
//! maximal interval of constant attribute value becomes one state holding the
//! users who interacted during it.

use super::events::{AttributeChangeEvent, InteractionEvent, Timestamp};

/// Half-open time window `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Horizon {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Horizon {
    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeState {
    pub item_id: u32,
    pub value: f64,
    pub start: Timestamp,
    pub end: Timestamp,
    /// Interacting users in time order.
    pub user_ids: Vec<u32>,
}

impl AttributeState {
    pub fn is_empty(&self) -> bool {
        self.user_ids.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Partition {
    pub states: Vec<AttributeState>,
    /// Interactions that fell outside the horizon.
    pub dropped: usize,
}

/// Splits the horizon into states at every change strictly inside it.
///
/// `initial_value` is the attribute in effect before any change; changes at
/// or before `horizon.start` override it. Both inputs must be time-sorted.
pub fn partition_states(
    item_id: u32,
    interactions: &[InteractionEvent],
    changes: &[AttributeChangeEvent],
    horizon: Horizon,
    initial_value: f64,
) -> Partition {
    let mut value = initial_value;
    let mut cuts: Vec<(Timestamp, f64)> = Vec::new();
    for c in changes {
        if c.timestamp <= horizon.start {
            value = c.new_value;
        } else if c.timestamp < horizon.end {
            cuts.push((c.timestamp, c.new_value));
        }
    }
    let mut states = Vec::with_capacity(cuts.len() + 1);
    let mut start = horizon.start;
    for (t, next_value) in cuts {
        states.push(AttributeState {
            item_id,
            value,
            start,
            end: t,
            user_ids: Vec::new(),
        });
        start = t;
        value = next_value;
    }
    states.push(AttributeState {
        item_id,
        value,
        start,
        end: horizon.end,
        user_ids: Vec::new(),
    });

    let mut dropped = 0;
    for ev in interactions {
        if !horizon.contains(ev.timestamp) {
            dropped += 1;
            continue;
        }
        let idx = states.partition_point(|s| s.end <= ev.timestamp);
        states[idx].user_ids.push(ev.user_id);
    }
    Partition { states, dropped }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn click(user_id: u32, timestamp: Timestamp) -> InteractionEvent {
        InteractionEvent {
            user_id,
            item_id: 1,
            timestamp,
            clicked: true,
        }
    }

    fn change(timestamp: Timestamp, new_value: f64) -> AttributeChangeEvent {
        AttributeChangeEvent {
            item_id: 1,
            timestamp,
            new_value,
        }
    }

    const H: Horizon = Horizon { start: 0, end: 100 };

    #[test]
    fn no_changes_single_state() {
        let p = partition_states(1, &[click(1, 5), click(2, 6), click(3, 90)], &[], H, 10.0);
        assert_eq!(p.states.len(), 1);
        assert_eq!(p.states[0].user_ids, vec![1, 2, 3]);
        assert_eq!(p.states[0].value, 10.0);
    }

    #[test]
    fn revisited_value_opens_new_state() {
        let changes = [change(0, 10.0), change(30, 8.0), change(60, 10.0)];
        let p = partition_states(
            1,
            &[click(1, 10), click(2, 40), click(3, 70)],
            &changes,
            H,
            99.0,
        );
        let values: Vec<f64> = p.states.iter().map(|s| s.value).collect();
        assert_eq!(values, vec![10.0, 8.0, 10.0]);
        assert_eq!(p.states[1].user_ids, vec![2]);
        assert_eq!((p.states[1].start, p.states[1].end), (30, 60));
    }

    #[test]
    fn empty_states_are_kept_and_outside_events_dropped() {
        let p = partition_states(
            1,
            &[click(1, -5), click(2, 80), click(3, 100)],
            &[change(20, 5.0), change(50, 6.0)],
            H,
            7.0,
        );
        assert_eq!(p.states.len(), 3);
        assert!(p.states[0].is_empty() && p.states[1].is_empty());
        assert_eq!(p.states[2].user_ids, vec![2]);
        assert_eq!(p.dropped, 2);
    }

    #[test]
    fn change_at_boundary_moves_interaction() {
        let p = partition_states(1, &[click(1, 20), click(2, 19)], &[change(20, 5.0)], H, 7.0);
        assert_eq!(p.states[0].user_ids, vec![2]);
        assert_eq!(p.states[1].user_ids, vec![1]);
    }
}
