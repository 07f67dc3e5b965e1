//! The CAEN network, its ablations and the CTR loss.

mod caen;
mod checkpoint;

pub use caen::{AttentionDiag, CaenModel, ForwardOutput};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointManifest, ParamEntry, CHECKPOINT_FORMAT,
};

use crate::error::{Error, Result};
use crate::nn::Graph;
use crate::tensor::{TensorError, Var};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Which parts of the item-behavior branch are active.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    #[default]
    Full,
    /// State evolution GRU replaced by a shared per-state dense layer.
    Ns,
    /// Attribute attention replaced by mean pooling over a state's users.
    Nh,
    /// Frequency branch zeroed.
    Nf,
    /// Whole item-behavior branch zeroed: profiles and user behavior only.
    Ub,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::Ns,
        Ablation::Nh,
        Ablation::Nf,
        Ablation::Ub,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::Ns => "ns",
            Ablation::Nh => "nh",
            Ablation::Nf => "nf",
            Ablation::Ub => "ub",
        }
    }

    pub(crate) fn uses_item_branch(self) -> bool {
        self != Ablation::Ub
    }

    pub(crate) fn uses_frequency(self) -> bool {
        !matches!(self, Ablation::Nf | Ablation::Ub)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?}; expected full, ns, nh, nf or ub"
                ))
            })
    }
}

/// Layer widths. Attribute embeddings share the id width because the
/// attribute is the query over user embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub id_dim: usize,
    pub profile_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub sel_hidden: usize,
    pub fel_hidden: usize,
    pub ub_hidden: usize,
    pub mlp_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            id_dim: 32,
            profile_dim: 16,
            heads: 2,
            head_dim: 16,
            sel_hidden: 32,
            fel_hidden: 16,
            ub_hidden: 32,
            mlp_hidden: vec![1024, 512, 128],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.id_dim,
            self.profile_dim,
            self.heads,
            self.head_dim,
            self.sel_hidden,
            self.fel_hidden,
            self.ub_hidden,
        ];
        if dims.contains(&0) || self.mlp_hidden.contains(&0) {
            return Err(Error::Config("model widths must be positive".into()));
        }
        Ok(())
    }

    /// Width of the decision MLP input.
    pub fn decision_width(&self) -> usize {
        3 * self.profile_dim + self.ub_hidden + self.sel_hidden + self.fel_hidden
    }
}

/// Largest id of each vocabulary; tables get one extra padding row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vocab {
    pub users: usize,
    pub items: usize,
    pub categories: usize,
    pub segments: usize,
}

impl Vocab {
    pub fn from_catalog(
        users: &[crate::data::UserProfile],
        items: &[crate::data::ItemProfile],
    ) -> Self {
        Self {
            users: users.iter().map(|u| u.user_id as usize).max().unwrap_or(0),
            items: items.iter().map(|i| i.item_id as usize).max().unwrap_or(0),
            categories: items.iter().map(|i| i.category as usize).max().unwrap_or(0),
            segments: users.iter().map(|u| u.segment as usize).max().unwrap_or(0),
        }
    }
}

/// Mean binary cross-entropy of a batch, predictions clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn ctr_loss(g: &mut Graph, probs: Var, labels: &[u8]) -> Result<Var> {
    if let Some(l) = labels.iter().find(|l| **l > 1) {
        return Err(TensorError::InvalidLabel(*l as f64).into());
    }
    let y: Vec<f64> = labels.iter().map(|l| *l as f64).collect();
    Ok(g.tape.bce_mean(probs, &y)?)
}
