//! Event vocabulary and the box operations behind it.

use chrono::{DateTime, Utc};
use panobox_core::model::{BBox, ObjectClass, Rect, Stage, EDGE_EPS};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Task of the three-step protocol an image is in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStage {
    Adjust,
    AddVerify,
    FinalVerify,
    Done,
}

impl TaskStage {
    pub const TIMED: [TaskStage; 3] = [TaskStage::Adjust, TaskStage::AddVerify, TaskStage::FinalVerify];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EditKind {
    Move {
        box_id: u64,
        dx: f64,
        dy: f64,
    },
    /// New corners `[x_min, y_min, x_max, y_max]`.
    Resize {
        box_id: u64,
        rect: [f64; 4],
    },
    Delete {
        box_id: u64,
    },
    /// Top, bottom, left-most and right-most points, in that order.
    CreateByExtremes {
        class: ObjectClass,
        points: [Point; 4],
    },
    Link {
        a: u64,
        b: u64,
    },
    Unlink {
        box_id: u64,
    },
    Verify {
        box_id: u64,
    },
    /// Leaves the add phase of the current class.
    FinishClass {
        class: ObjectClass,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditEvent {
    /// Position in the session log, starting at 1.
    pub seq: u64,
    pub image_id: String,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub kind: EditKind,
}

/// What the client should present next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Instruction {
    Adjust { image_id: String, box_ids: Vec<u64> },
    Verify { image_id: String, stage: TaskStage, class: ObjectClass, box_ids: Vec<u64> },
    Add { image_id: String, stage: TaskStage, class: ObjectClass },
    Complete,
}

/// A box as seen by the client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkBox {
    pub id: u64,
    #[serde(flatten)]
    pub bbox: BBox,
}

/// Stage reported to clients; gold sets show as refined.
pub fn public_stage(stage: Stage) -> Stage {
    if stage == Stage::Gold {
        Stage::Refined
    } else {
        stage
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("extreme points are inverted")]
    InvertedExtremes,
    #[error("box has zero area")]
    ZeroArea,
    #[error("box leaves the image")]
    OutOfImage,
    #[error("neither box touches an opposite image edge")]
    NotAtEdges,
    #[error("linked boxes must have the same class")]
    ClassMismatch,
    #[error("box {0} is already linked")]
    AlreadyLinked(u64),
    #[error("box {0} is not linked")]
    NotLinked(u64),
    #[error("linked boxes cannot move horizontally")]
    LinkedHorizontalMove,
    #[error("resize detaches linked box {0} from the image edge")]
    LinkDetached(u64),
    #[error("unknown box {0}")]
    UnknownBox(u64),
    #[error("event targets box {got}, expected one of {expected:?}")]
    NotActive { got: u64, expected: Vec<u64> },
    #[error("event not allowed now: {0}")]
    OutOfOrder(String),
    #[error("expected event {expected}, got {got}")]
    Sequence { expected: u64, got: u64 },
    #[error("event {0} conflicts with the one already recorded")]
    Conflict(u64),
    #[error("timestamp is earlier than the previous event")]
    TimeTravel,
    #[error("image `{0}` is not part of this session")]
    UnknownImage(String),
    #[error("session is complete")]
    Complete,
}

/// Tight box around four extreme clicks.
pub fn box_from_extremes(top: Point, bottom: Point, left: Point, right: Point) -> Result<Rect, ProtocolError> {
    if left.x > right.x || top.y > bottom.y {
        return Err(ProtocolError::InvertedExtremes);
    }
    let pts = [top, bottom, left, right];
    let fold = |f: fn(f64, f64) -> f64, g: fn(&Point) -> f64, init: f64| pts.iter().map(g).fold(init, f);
    let r = Rect::new(
        fold(f64::min, |p| p.x, f64::INFINITY),
        fold(f64::min, |p| p.y, f64::INFINITY),
        fold(f64::max, |p| p.x, f64::NEG_INFINITY),
        fold(f64::max, |p| p.y, f64::NEG_INFINITY),
    );
    if !(r.width() > 0.0 && r.height() > 0.0) {
        return Err(ProtocolError::ZeroArea);
    }
    Ok(r)
}

fn touches_left(b: &BBox) -> bool {
    b.x_min.abs() <= EDGE_EPS
}

fn touches_right(b: &BBox, width: f64) -> bool {
    (b.x_max - width).abs() <= EDGE_EPS
}

/// Joins a box on the left image edge with one on the right edge. Both
/// take the union of their y-ranges.
pub fn link_boxes(a: &mut BBox, b: &mut BBox, width: f64, link_id: &str) -> Result<(), ProtocolError> {
    if a.class != b.class {
        return Err(ProtocolError::ClassMismatch);
    }
    let ok = (touches_left(a) && touches_right(b, width)) || (touches_left(b) && touches_right(a, width));
    if !ok {
        return Err(ProtocolError::NotAtEdges);
    }
    let (y0, y1) = (a.y_min.min(b.y_min), a.y_max.max(b.y_max));
    for m in [a, b] {
        m.y_min = y0;
        m.y_max = y1;
        m.link_id = Some(link_id.to_string());
    }
    Ok(())
}

pub fn unlink_boxes(a: &mut BBox, b: &mut BBox) {
    a.link_id = None;
    b.link_id = None;
}

/// Checks a rectangle lies inside the image with positive area.
pub fn check_rect(r: &Rect, width: f64, height: f64) -> Result<(), ProtocolError> {
    if !r.is_finite() || r.width() <= 0.0 || r.height() <= 0.0 {
        return Err(ProtocolError::ZeroArea);
    }
    if r.x_min < 0.0 || r.y_min < 0.0 || r.x_max > width || r.y_max > height {
        return Err(ProtocolError::OutOfImage);
    }
    Ok(())
}
