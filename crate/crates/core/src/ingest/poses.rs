use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{normalize_deg, GeoPoint, PanoramaMeta, Surface};

/// One line of a pose file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub heading_deg: f64,
    pub timestamp_iso8601: DateTime<Utc>,
    pub surface: Surface,
    #[serde(default = "default_width")]
    pub width_px: u32,
    #[serde(default = "default_height")]
    pub height_px: u32,
    #[serde(default)]
    pub roll_deg: f64,
    #[serde(default)]
    pub pitch_deg: f64,
}

fn default_width() -> u32 {
    PanoramaMeta::DEFAULT_WIDTH
}

fn default_height() -> u32 {
    PanoramaMeta::DEFAULT_HEIGHT
}

impl From<PoseRecord> for PanoramaMeta {
    fn from(r: PoseRecord) -> Self {
        PanoramaMeta {
            id: r.id,
            position: GeoPoint::new(r.x, r.y),
            heading: normalize_deg(r.heading_deg),
            timestamp: r.timestamp_iso8601,
            surface: r.surface,
            width_px: r.width_px,
            height_px: r.height_px,
            roll: r.roll_deg,
            pitch: r.pitch_deg,
        }
    }
}

impl From<&PanoramaMeta> for PoseRecord {
    fn from(m: &PanoramaMeta) -> Self {
        PoseRecord {
            id: m.id.clone(),
            x: m.position.x,
            y: m.position.y,
            heading_deg: m.heading,
            timestamp_iso8601: m.timestamp,
            surface: m.surface,
            width_px: m.width_px,
            height_px: m.height_px,
            roll_deg: m.roll,
            pitch_deg: m.pitch,
        }
    }
}

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("reading poses: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Record { line: usize, source: serde_json::Error },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
}

/// Parses JSON-lines pose records; blank lines are skipped.
pub fn parse_poses(text: &str) -> Result<Vec<PanoramaMeta>, PoseError> {
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let line = i + 1;
        if l.trim().is_empty() {
            continue;
        }
        let rec: PoseRecord = serde_json::from_str(l).map_err(|source| PoseError::Record { line, source })?;
        if !(rec.x.is_finite() && rec.y.is_finite() && rec.heading_deg.is_finite()) {
            return Err(PoseError::Invalid { line, reason: "non-finite position or heading".into() });
        }
        if rec.width_px == 0 || rec.height_px == 0 {
            return Err(PoseError::Invalid { line, reason: "zero image dimension".into() });
        }
        out.push(rec.into());
    }
    Ok(out)
}

pub fn load_poses(path: impl AsRef<Path>) -> Result<Vec<PanoramaMeta>, PoseError> {
    parse_poses(&std::fs::read_to_string(path)?)
}

pub fn format_poses(panos: &[PanoramaMeta]) -> String {
    panos.iter().map(|m| serde_json::to_string(&PoseRecord::from(m)).expect("pose serializes") + "\n").collect()
}

pub fn save_poses(path: impl AsRef<Path>, panos: &[PanoramaMeta]) -> std::io::Result<()> {
    crate::fsio::write_atomic(path, format_poses(panos))
}
