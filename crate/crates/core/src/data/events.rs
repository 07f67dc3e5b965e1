//! Event records and their line-delimited JSON files.

use crate::error::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub type Timestamp = i64;

pub const SECONDS_PER_HOUR: i64 = 3600;
pub const SECONDS_PER_DAY: i64 = 86_400;

/// A user-item interaction. Ids start at 1; 0 is reserved for padding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionEvent {
    pub user_id: u32,
    pub item_id: u32,
    pub timestamp: Timestamp,
    pub clicked: bool,
}

/// The core attribute (price) of an item changed to `new_value`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeChangeEvent {
    pub item_id: u32,
    pub timestamp: Timestamp,
    pub new_value: f64,
}

/// One impression to be scored. `true_ctr` is the generator's click
/// probability when known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExposureEvent {
    pub user_id: u32,
    pub item_id: u32,
    pub timestamp: Timestamp,
    pub clicked: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_ctr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserProfile {
    pub user_id: u32,
    pub segment: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemProfile {
    pub item_id: u32,
    pub category: u32,
    pub base_price: f64,
}

/// Writes one JSON object per line.
pub fn write_events<T: Serialize>(path: &Path, events: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ev in events {
        serde_json::to_writer(&mut w, ev).map_err(|e| Error::Data(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a line-delimited JSON file. Blank lines are skipped; a malformed
/// line fails with its 1-based line number.
pub fn read_events<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(ev);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.jsonl");
        let events = vec![
            InteractionEvent {
                user_id: 1,
                item_id: 2,
                timestamp: 1_650_000_000,
                clicked: true,
            },
            InteractionEvent {
                user_id: 7,
                item_id: 3,
                timestamp: 1_650_000_100,
                clicked: false,
            },
        ];
        write_events(&path, &events).unwrap();
        assert_eq!(read_events::<InteractionEvent>(&path).unwrap(), events);
    }

    #[test]
    fn empty_file_is_empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(read_events::<AttributeChangeEvent>(&path)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            "{\"item_id\":1,\"timestamp\":5,\"new_value\":9.5}\n{\"item_id\":1,\"timestamp\":\n",
        )
        .unwrap();
        match read_events::<AttributeChangeEvent>(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            "{\"item_id\":1,\"timestamp\":5,\"new_value\":9.5,\"x\":1}\n",
        )
        .unwrap();
        assert!(read_events::<AttributeChangeEvent>(&path).is_err());
    }
}
