//! A data directory: catalog, event logs and the train/test cut.
//!
//! ```text
//! <dir>/meta.json          test_start and the generating world config
//! <dir>/users.jsonl        UserProfile
//! <dir>/items.jsonl        ItemProfile
//! <dir>/interactions.jsonl InteractionEvent
//! <dir>/changes.jsonl      AttributeChangeEvent
//! <dir>/exposures.jsonl    ExposureEvent
//! <dir>/samples.jsonl      TrainingSample (optional export)
//! ```

use super::events::{
    read_events, write_events, AttributeChangeEvent, ExposureEvent, InteractionEvent, ItemProfile,
    Timestamp, UserProfile,
};
use super::sample::{SampleBuilder, TrainingSample, TruncationConfig};
use super::synth::{SyntheticWorld, SyntheticWorldConfig};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    /// Exposures at or after this time are held out.
    pub test_start: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<SyntheticWorldConfig>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub users: Vec<UserProfile>,
    pub items: Vec<ItemProfile>,
    pub interactions: Vec<InteractionEvent>,
    pub changes: Vec<AttributeChangeEvent>,
    pub exposures: Vec<ExposureEvent>,
}

/// Samples split by exposure time.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSamples {
    pub train: Vec<TrainingSample>,
    pub test: Vec<TrainingSample>,
}

impl From<SyntheticWorld> for Dataset {
    fn from(w: SyntheticWorld) -> Self {
        Self {
            meta: DatasetMeta {
                test_start: w.config.test_start(),
                world: Some(w.config.clone()),
            },
            users: w.users,
            items: w.items,
            interactions: w.interactions,
            changes: w.changes,
            exposures: w.exposures,
        }
    }
}

impl Dataset {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta =
            serde_json::to_string_pretty(&self.meta).map_err(|e| Error::Data(e.to_string()))?;
        let meta_path = dir.join("meta.json");
        fs::write(&meta_path, meta + "\n").map_err(|e| Error::io(&meta_path, e))?;
        write_events(&dir.join("users.jsonl"), &self.users)?;
        write_events(&dir.join("items.jsonl"), &self.items)?;
        write_events(&dir.join("interactions.jsonl"), &self.interactions)?;
        write_events(&dir.join("changes.jsonl"), &self.changes)?;
        write_events(&dir.join("exposures.jsonl"), &self.exposures)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: meta_path.clone(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        Ok(Self {
            meta,
            users: read_events(&dir.join("users.jsonl"))?,
            items: read_events(&dir.join("items.jsonl"))?,
            interactions: read_events(&dir.join("interactions.jsonl"))?,
            changes: read_events(&dir.join("changes.jsonl"))?,
            exposures: read_events(&dir.join("exposures.jsonl"))?,
        })
    }

    pub fn sample_builder(&self, trunc: &TruncationConfig) -> Result<SampleBuilder> {
        SampleBuilder::new(
            &self.users,
            &self.items,
            &self.interactions,
            &self.changes,
            trunc.clone(),
        )
    }

    /// Assembles every exposure and splits at `meta.test_start`.
    pub fn samples(&self, trunc: &TruncationConfig) -> Result<SplitSamples> {
        let builder = self.sample_builder(trunc)?;
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for e in &self.exposures {
            let s = builder.build(e)?;
            if e.timestamp >= self.meta.test_start {
                test.push(s);
            } else {
                train.push(s);
            }
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::Data(format!(
                "split at {} leaves {} train and {} test samples",
                self.meta.test_start,
                train.len(),
                test.len()
            )));
        }
        Ok(SplitSamples { train, test })
    }
}

pub fn write_samples(path: &Path, samples: &[TrainingSample]) -> Result<()> {
    write_events(path, samples)
}

pub fn read_samples(path: &Path) -> Result<Vec<TrainingSample>> {
    read_events(path)
}
