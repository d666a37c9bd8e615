use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{normalize_deg, GeoPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    Land,
    Water,
}

/// Pose and image geometry of one captured panorama.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanoramaMeta {
    pub id: String,
    pub position: GeoPoint,
    /// Vehicle heading, degrees clockwise from true north, in [0, 360).
    pub heading: f64,
    pub timestamp: DateTime<Utc>,
    pub surface: Surface,
    pub width_px: u32,
    pub height_px: u32,
    /// Stored for completeness; input imagery is already levelled.
    pub roll: f64,
    pub pitch: f64,
}

impl PanoramaMeta {
    pub const DEFAULT_WIDTH: u32 = 1400;
    pub const DEFAULT_HEIGHT: u32 = 700;

    pub fn new(id: impl Into<String>, position: GeoPoint, heading: f64, timestamp: DateTime<Utc>) -> Self {
        PanoramaMeta {
            id: id.into(),
            position,
            heading: normalize_deg(heading),
            timestamp,
            surface: Surface::Land,
            width_px: Self::DEFAULT_WIDTH,
            height_px: Self::DEFAULT_HEIGHT,
            roll: 0.0,
            pitch: 0.0,
        }
    }

    /// True when the image has the 2:1 aspect of a full equirectangular panorama.
    pub fn is_equirectangular(&self) -> bool {
        self.width_px == 2 * self.height_px
    }
}
