use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use panobox_core::coco::{parse_boxset, save_boxset};
use panobox_core::fsio::write_atomic;
use panobox_core::model::BoxSet;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Failure tied to individual input records, each listed separately.
#[derive(Debug)]
pub struct Diagnostics {
    pub context: String,
    pub records: Vec<String>,
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} invalid record(s)", self.context, self.records.len())
    }
}

impl std::error::Error for Diagnostics {}

pub fn check(context: impl Into<String>, records: Vec<String>) -> anyhow::Result<()> {
    if records.is_empty() {
        Ok(())
    } else {
        Err(Diagnostics { context: context.into(), records }.into())
    }
}

fn json_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every `*.json` box set in `dir`, in file name order. All bad
/// files are reported, not only the first.
pub fn load_sets(dir: &Path) -> anyhow::Result<Vec<BoxSet>> {
    let files = json_files(dir)?;
    let loaded: Vec<Result<BoxSet, String>> = files
        .par_iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            parse_boxset(&text).map_err(|e| format!("{}: {e}", p.display()))
        })
        .collect();
    let mut sets = Vec::with_capacity(loaded.len());
    let mut bad = Vec::new();
    for r in loaded {
        match r {
            Ok(s) => sets.push(s),
            Err(e) => bad.push(e),
        }
    }
    let mut seen = BTreeMap::new();
    for s in &sets {
        if seen.insert(s.panorama_id.as_str(), ()).is_some() {
            bad.push(format!("{}: panorama `{}` appears in more than one file", dir.display(), s.panorama_id));
        }
    }
    check(format!("box sets in {}", dir.display()), bad)?;
    Ok(sets)
}

/// File name for a panorama id, refusing ids that would escape the directory.
pub fn set_file(id: &str) -> Result<String, String> {
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        Err(format!("panorama id `{id}` cannot be used as a file name"))
    } else {
        Ok(format!("{id}.json"))
    }
}

/// Writes one `<id>.json` per set into `dir`, in parallel.
pub fn write_sets(dir: &Path, sets: &[BoxSet]) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let bad: Vec<String> = sets
        .par_iter()
        .filter_map(|s| {
            let name = match set_file(&s.panorama_id) {
                Ok(n) => n,
                Err(e) => return Some(e),
            };
            save_boxset(dir.join(name), s).err().map(|e| format!("{}: {e}", s.panorama_id))
        })
        .collect();
    check(format!("writing {}", dir.display()), bad)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write_text(path, serde_json::to_string_pretty(value)? + "\n")
}

pub fn write_text(path: &Path, text: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_atomic(path, text).with_context(|| format!("writing {}", path.display()))
}
