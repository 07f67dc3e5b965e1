//! AUC, log loss and the state-count stratified report.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Labels as 0/1 floats; anything else is rejected.
fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|l| **l > 1) {
        return Err(Error::Data(format!("label {l} is not 0 or 1")));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score {s}")));
    }
    Ok(())
}

/// Rank-based AUC. Tied scores share their average rank, so every tied
/// positive/negative pair counts one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|l| **l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data(
            "AUC needs both positive and negative labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps average ranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 average to (i + j + 2) / 2.
        let twice_avg = (i + j + 2) as u128;
        let tied_pos = order[i..=j].iter().filter(|k| labels[**k] == 1).count() as u128;
        twice_rank_sum += twice_avg * tied_pos;
        i = j + 1;
    }
    let p = pos as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / 2.0 / (pos as f64 * neg as f64))
}

/// Mean binary cross-entropy with predictions clamped to `[1e-7, 1 - 1e-7]`.
pub fn logloss(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    if labels.is_empty() {
        return Err(Error::Data("log loss of an empty set".into()));
    }
    let y: Vec<f64> = labels.iter().map(|l| *l as f64).collect();
    Ok(crate::tensor::tape::bce_mean(scores, &y)?)
}

/// Largest state-count bucket; it also holds every larger count.
pub const MAX_STATE_BUCKET: usize = 9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    /// `"1"` .. `"8"` or `"9+"`.
    pub bucket: String,
    pub count: usize,
    pub logloss: f64,
    /// Absent when the bucket holds a single class.
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: usize,
    pub auc: f64,
    pub logloss: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub buckets: Vec<BucketMetrics>,
    /// Wall-clock seconds spent scoring; not part of reproducibility checks.
    pub runtime_secs: f64,
}

impl MetricsReport {
    /// The report without its wall-clock field.
    pub fn without_runtime(&self) -> Self {
        Self {
            runtime_secs: 0.0,
            ..self.clone()
        }
    }
}

pub fn state_bucket(states: usize) -> usize {
    states.clamp(1, MAX_STATE_BUCKET)
}

fn bucket_name(b: usize) -> String {
    if b == MAX_STATE_BUCKET {
        format!("{MAX_STATE_BUCKET}+")
    } else {
        b.to_string()
    }
}

/// Overall metrics plus one entry per populated state-count bucket.
/// Counts below 1 fall in bucket 1.
pub fn stratified_report(
    scores: &[f64],
    labels: &[u8],
    state_counts: &[usize],
) -> Result<MetricsReport> {
    if state_counts.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} state counts for {} labels",
            state_counts.len(),
            labels.len()
        )));
    }
    let mut report = overall_report(scores, labels)?;
    for b in 1..=MAX_STATE_BUCKET {
        let idx: Vec<usize> = (0..labels.len())
            .filter(|i| state_bucket(state_counts[*i]) == b)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let s: Vec<f64> = idx.iter().map(|i| scores[*i]).collect();
        let l: Vec<u8> = idx.iter().map(|i| labels[*i]).collect();
        report.buckets.push(BucketMetrics {
            bucket: bucket_name(b),
            count: idx.len(),
            logloss: logloss(&s, &l)?,
            auc: auc(&s, &l).ok(),
        });
    }
    Ok(report)
}

pub fn overall_report(scores: &[f64], labels: &[u8]) -> Result<MetricsReport> {
    Ok(MetricsReport {
        count: labels.len(),
        auc: auc(scores, labels)?,
        logloss: logloss(scores, labels)?,
        buckets: Vec::new(),
        runtime_secs: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pairwise(scores: &[f64], labels: &[u8]) -> f64 {
        let mut twice = 0u64;
        let mut pairs = 0u64;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1;
                    if scores[i] > scores[j] {
                        twice += 2;
                    } else if scores[i] == scores[j] {
                        twice += 1;
                    }
                }
            }
        }
        twice as f64 / 2.0 / pairs as f64
    }

    #[test]
    fn simple_cases() {
        assert_eq!(auc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        assert!(auc(&[0.2, 0.4], &[1, 1]).is_err());
        assert!(
            (logloss(&[0.5; 4], &[1, 0, 0, 1]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15
        );
        assert!(logloss(&[0.5], &[2]).is_err());
    }

    #[test]
    fn auc_matches_pairwise_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(2..=200);
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(0..20) as f64) / 20.0)
                .collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            assert_eq!(auc(&scores, &labels).unwrap(), pairwise(&scores, &labels));
        }
    }

    #[test]
    fn base_rate_minimizes_constant_logloss() {
        let labels = [1, 0, 0, 0, 1, 0, 0, 0, 0, 0];
        let at = |p: f64| logloss(&[p; 10], &labels).unwrap();
        assert!(at(0.2) < at(0.1) && at(0.2) < at(0.3));
    }

    #[test]
    fn buckets_partition_samples() {
        let scores = [0.1, 0.8, 0.3, 0.6, 0.2, 0.9];
        let labels = [0, 1, 0, 1, 1, 0];
        let states = [1, 1, 3, 3, 12, 9];
        let r = stratified_report(&scores, &labels, &states).unwrap();
        let names: Vec<&str> = r.buckets.iter().map(|b| b.bucket.as_str()).collect();
        assert_eq!(names, vec!["1", "3", "9+"]);
        assert_eq!(r.buckets.iter().map(|b| b.count).sum::<usize>(), 6);
        assert_eq!(r.buckets[0].auc, Some(1.0));
        assert_eq!(r.buckets[1].logloss, logloss(&[0.3, 0.6], &[0, 1]).unwrap());
    }
}
