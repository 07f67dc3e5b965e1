//! AUC of the generator's true click probabilities: an upper bound for any
//! learned scorer on the same exposures.

use super::events::ExposureEvent;
use crate::error::{Error, Result};
use crate::metrics::auc;

pub fn bayes_auc_oracle(exposures: &[ExposureEvent]) -> Result<f64> {
    let mut scores = Vec::with_capacity(exposures.len());
    let mut labels = Vec::with_capacity(exposures.len());
    for e in exposures {
        let p = e.true_ctr.ok_or_else(|| {
            Error::Data(format!("exposure of user {} has no true_ctr", e.user_id))
        })?;
        scores.push(p);
        labels.push(e.clicked as u8);
    }
    auc(&scores, &labels)
}
