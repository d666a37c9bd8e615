//! Equirectangular projection of measured objects onto panorama pixels.
//!
//! x is linear in azimuth relative to the vehicle heading and y is linear in
//! elevation angle, with the horizon at half the image height. Objects whose
//! angular extent crosses the image seam come out as a linked pair of boxes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Measured3D;
use crate::model::{angular_diff, clockwise_span, BBox, PanoramaMeta, Rect, Surface};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    pub land_camera_height_m: f64,
    pub water_camera_height_m: f64,
    /// Fraction of the image width where the heading direction lands.
    pub forward_x_fraction: f64,
    /// Boxes narrower or shorter than this after clamping are dropped.
    pub min_box_px: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            land_camera_height_m: 2.0,
            water_camera_height_m: 1.0,
            forward_x_fraction: 0.5,
            min_box_px: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub camera_height_m: f64,
    pub heading_deg: f64,
    pub width_px: u32,
    pub height_px: u32,
    pub forward_x_fraction: f64,
}

impl CameraModel {
    pub fn for_panorama(meta: &PanoramaMeta, cfg: &ProjectionConfig) -> Self {
        CameraModel {
            camera_height_m: match meta.surface {
                Surface::Land => cfg.land_camera_height_m,
                Surface::Water => cfg.water_camera_height_m,
            },
            heading_deg: meta.heading,
            width_px: meta.width_px,
            height_px: meta.height_px,
            forward_x_fraction: cfg.forward_x_fraction,
        }
    }

    fn w(&self) -> f64 {
        self.width_px as f64
    }

    fn h(&self) -> f64 {
        self.height_px as f64
    }
}

/// Horizontal pixel position of a compass azimuth.
pub fn azimuth_to_x(cm: &CameraModel, azimuth_deg: f64) -> f64 {
    let turns = cm.forward_x_fraction + angular_diff(azimuth_deg, cm.heading_deg) / 360.0;
    cm.w() * turns.rem_euclid(1.0)
}

/// Vertical pixel position of a point `height_above_ground_m` above the
/// ground at horizontal distance `distance_m` from the camera.
pub fn elevation_to_y(cm: &CameraModel, height_above_ground_m: f64, distance_m: f64) -> f64 {
    let phi = (height_above_ground_m - cm.camera_height_m).atan2(distance_m).to_degrees();
    cm.h() * (0.5 - phi / 180.0)
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum ProjectionError {
    #[error("object spans the full panorama")]
    FullCircle,
    #[error("projected box is smaller than the minimum size")]
    Degenerate,
}

/// One box, or two seam-split halves sharing a link id.
#[derive(Debug, Clone, PartialEq)]
pub enum Projected {
    Single(BBox),
    Linked(BBox, BBox),
}

impl Projected {
    pub fn into_boxes(self) -> Vec<BBox> {
        match self {
            Projected::Single(b) => vec![b],
            Projected::Linked(a, b) => vec![a, b],
        }
    }
}

/// Link id given to the two halves of a seam-split object.
pub fn seam_link_id(object_id: &str) -> String {
    format!("seam:{object_id}")
}

/// Start azimuth and clockwise angular width of the object's horizontal extent.
pub fn angular_extent(m: &Measured3D) -> (f64, f64) {
    match (m.azimuth_left_deg, m.azimuth_right_deg) {
        (Some(l), Some(r)) => (l, clockwise_span(l, r)),
        _ => {
            let half = (m.width_m / (2.0 * m.distance_m)).atan().to_degrees();
            (m.azimuth_center_deg - half, 2.0 * half)
        }
    }
}

/// Projects one measured object to pixel space.
pub fn project_box(cm: &CameraModel, m: &Measured3D, min_box_px: f64) -> Result<Projected, ProjectionError> {
    let (start, span) = angular_extent(m);
    if span >= 360.0 {
        return Err(ProjectionError::FullCircle);
    }
    let w = cm.w();
    let y_min = elevation_to_y(cm, m.height_m, m.distance_m).clamp(0.0, cm.h());
    let y_max = elevation_to_y(cm, 0.0, m.distance_m).clamp(0.0, cm.h());
    if y_max - y_min < min_box_px {
        return Err(ProjectionError::Degenerate);
    }

    let x_left = azimuth_to_x(cm, start);
    let x_right = x_left + span / 360.0 * w;

    let make = |x0: f64, x1: f64| {
        let mut b = BBox::new(m.class, Rect::new(x0, y_min, x1, y_max));
        b.object_id = Some(m.object_id.clone());
        b.distance_m = Some(m.distance_m);
        b.source = Some(m.source.clone());
        b.metadata = m.metadata.clone();
        b
    };
    let wide_enough = |x0: f64, x1: f64| x1 - x0 >= min_box_px;

    if x_right <= w {
        return if wide_enough(x_left, x_right) {
            Ok(Projected::Single(make(x_left, x_right)))
        } else {
            Err(ProjectionError::Degenerate)
        };
    }
    let tail = x_right - w;
    match (wide_enough(x_left, w), wide_enough(0.0, tail)) {
        (true, true) => {
            let link = seam_link_id(&m.object_id);
            let mut right = make(x_left, w);
            let mut left = make(0.0, tail);
            right.link_id = Some(link.clone());
            left.link_id = Some(link);
            Ok(Projected::Linked(right, left))
        }
        (true, false) => Ok(Projected::Single(make(x_left, w))),
        (false, true) => Ok(Projected::Single(make(0.0, tail))),
        (false, false) => Err(ProjectionError::Degenerate),
    }
}
