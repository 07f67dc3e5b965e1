//! Backward-vs-finite-difference comparison on the full model.

use crate::data::TrainingSample;
use crate::error::{Error, Result};
use crate::model::{ctr_loss, CaenModel};
use crate::nn::{Graph, ParamId};
use crate::tensor::{finite_diff_coords, grad_rel_error, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub name: String,
    pub numel: usize,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_error < self.tolerance)
    }

    pub fn worst(&self) -> Option<&GroupCheck> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

fn batch_loss(
    model: &CaenModel,
    values: &[Tensor],
    batch: &[&TrainingSample],
    labels: &[u8],
) -> Result<f64> {
    let mut g = Graph::from_values(values, false);
    let out = model.forward(&mut g, batch)?;
    let loss = ctr_loss(&mut g, out.probs, labels)?;
    Ok(g.value(loss).item()?)
}

/// Checks every parameter tensor. Tensors with at most `max_coords` entries
/// are checked exhaustively; larger ones at `max_coords` coordinates, half
/// drawn from entries with a nonzero analytic gradient.
pub fn gradient_check(
    model: &CaenModel,
    batch: &[&TrainingSample],
    max_coords: usize,
    h: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let labels: Vec<u8> = batch.iter().map(|s| s.label).collect();
    let mut g = Graph::new(&model.params, true);
    let out = model.forward(&mut g, batch)?;
    let loss = ctr_loss(&mut g, out.probs, &labels)?;
    let grads = g.param_grads(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::new();
    let mut owner = Vec::new();
    for (p, grad) in grads.iter().enumerate() {
        let n = grad.numel();
        let picked: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            let nonzero: Vec<usize> = (0..n).filter(|i| grad.data()[*i] != 0.0).collect();
            let mut picked: Vec<usize> = (0..max_coords)
                .map(|k| {
                    if k % 2 == 0 && !nonzero.is_empty() {
                        nonzero[rng.random_range(0..nonzero.len())]
                    } else {
                        rng.random_range(0..n)
                    }
                })
                .collect();
            picked.sort_unstable();
            picked.dedup();
            picked
        };
        for i in picked {
            coords.push((p, i));
            owner.push(p);
        }
    }

    let fd = finite_diff_coords(
        |vals| {
            batch_loss(model, vals, batch, &labels)
                .map_err(|e| TensorError::NonFinite(e.to_string()))
        },
        model.params.values(),
        &coords,
        h,
    )
    .map_err(|e| Error::Numeric(format!("finite differences: {e}")))?;

    let mut groups: Vec<GroupCheck> = model
        .params
        .ids()
        .map(|id: ParamId| GroupCheck {
            name: model.params.name(id).to_string(),
            numel: model.params.get(id).numel(),
            checked: 0,
            max_rel_error: 0.0,
        })
        .collect();
    for ((p, i), f) in coords.iter().zip(fd) {
        let e = grad_rel_error(grads[*p].data()[*i], f);
        let gc = &mut groups[*p];
        gc.checked += 1;
        gc.max_rel_error = gc.max_rel_error.max(e);
    }
    Ok(GradCheckReport {
        tolerance,
        step: h,
        groups,
    })
}
