//! On-disk layout:
//!
//! ```text
//! sessions/<sid>/header.json
//! sessions/<sid>/initial/<image>.json      COCO-style box sets served to the worker
//! sessions/<sid>/events.jsonl              append-only event log
//! sessions/<sid>/snapshots/<seq>/<image>.json
//! sessions/<sid>/outcome.json
//! published/<image>.json
//! rejected/<sid>/<image>.json
//! qualified.json
//! ```

use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use panobox_core::coco::{load_boxset, load_boxset_dir, save_boxset, CocoError};
use panobox_core::fsio::write_atomic;
use panobox_core::model::{BoxSet, ObjectClass};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::EditEvent;
use crate::service::Outcome;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json in {0}: {1}")]
    Json(PathBuf, serde_json::Error),
    #[error("box set: {0}")]
    Coco(#[from] CocoError),
}

/// Everything needed to rebuild a session besides its events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub session_id: String,
    pub worker_id: String,
    pub batch_id: String,
    pub counter: u64,
    pub images: Vec<String>,
    pub gold: Vec<String>,
    pub class_order: Vec<ObjectClass>,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, StoreError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| StoreError::Json(path.to_path_buf(), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let text = serde_json::to_string_pretty(value).expect("store records serialize") + "\n";
    write_atomic(path, text)?;
    Ok(())
}

fn file_name(image_id: &str) -> String {
    format!("{image_id}.json")
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for d in ["sessions", "published", "rejected"] {
            fs::create_dir_all(root.join(d))?;
        }
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn session_dir(&self, sid: &str) -> PathBuf {
        self.root.join("sessions").join(sid)
    }

    pub fn create_session(&self, header: &SessionHeader, initial: &[BoxSet]) -> Result<(), StoreError> {
        let dir = self.session_dir(&header.session_id);
        fs::create_dir_all(dir.join("initial"))?;
        for s in initial {
            save_boxset(dir.join("initial").join(file_name(&s.panorama_id)), s)?;
        }
        fs::File::create(dir.join("events.jsonl"))?;
        write_json(&dir.join("header.json"), header)
    }

    pub fn append_events(&self, sid: &str, events: &[EditEvent]) -> Result<(), StoreError> {
        if events.is_empty() {
            return Ok(());
        }
        let mut f = OpenOptions::new().append(true).open(self.session_dir(sid).join("events.jsonl"))?;
        let mut buf = String::new();
        for e in events {
            buf.push_str(&serde_json::to_string(e).expect("events serialize"));
            buf.push('\n');
        }
        f.write_all(buf.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    pub fn snapshot(&self, sid: &str, seq: u64, sets: &[BoxSet]) -> Result<(), StoreError> {
        let dir = self.session_dir(sid).join("snapshots").join(format!("{seq:08}"));
        fs::create_dir_all(&dir)?;
        for s in sets {
            save_boxset(dir.join(file_name(&s.panorama_id)), s)?;
        }
        Ok(())
    }

    pub fn write_outcome(&self, sid: &str, outcome: &Outcome) -> Result<(), StoreError> {
        write_json(&self.session_dir(sid).join("outcome.json"), outcome)
    }

    pub fn publish(&self, set: &BoxSet) -> Result<(), StoreError> {
        save_boxset(self.root.join("published").join(file_name(&set.panorama_id)), set)?;
        Ok(())
    }

    pub fn reject(&self, sid: &str, sets: &[BoxSet]) -> Result<(), StoreError> {
        let dir = self.root.join("rejected").join(sid);
        fs::create_dir_all(&dir)?;
        for s in sets {
            save_boxset(dir.join(file_name(&s.panorama_id)), s)?;
        }
        Ok(())
    }

    pub fn save_qualified(&self, workers: &BTreeSet<String>) -> Result<(), StoreError> {
        write_json(&self.root.join("qualified.json"), workers)
    }

    pub fn load_qualified(&self) -> Result<BTreeSet<String>, StoreError> {
        let p = self.root.join("qualified.json");
        if p.exists() {
            read_json(&p)
        } else {
            Ok(BTreeSet::new())
        }
    }

    pub fn load_published(&self) -> Result<Vec<BoxSet>, StoreError> {
        Ok(load_boxset_dir(self.root.join("published"))?)
    }

    pub fn session_ids(&self) -> Result<Vec<String>, StoreError> {
        let mut ids: Vec<String> = fs::read_dir(self.root.join("sessions"))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("header.json").exists())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn load_session(&self, sid: &str) -> Result<StoredSession, StoreError> {
        let dir = self.session_dir(sid);
        let header: SessionHeader = read_json(&dir.join("header.json"))?;
        let initial = header
            .images
            .iter()
            .map(|id| load_boxset(dir.join("initial").join(file_name(id))))
            .collect::<Result<Vec<_>, _>>()?;
        let events = self.load_events(sid)?;
        let outcome_path = dir.join("outcome.json");
        let outcome = if outcome_path.exists() { Some(read_json(&outcome_path)?) } else { None };
        Ok(StoredSession { header, initial, events, outcome })
    }

    pub fn load_events(&self, sid: &str) -> Result<Vec<EditEvent>, StoreError> {
        let path = self.session_dir(sid).join("events.jsonl");
        let f = fs::File::open(&path)?;
        let mut out = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| StoreError::Json(path.clone(), e))?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct StoredSession {
    pub header: SessionHeader,
    pub initial: Vec<BoxSet>,
    pub events: Vec<EditEvent>,
    pub outcome: Option<Outcome>,
}
