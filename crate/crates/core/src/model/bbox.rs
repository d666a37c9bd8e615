use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Metadata, ObjectClass};

/// Axis-aligned pixel rectangle, origin top-left, y downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Rect { x_min, y_min, x_max, y_max }
    }

    pub fn width(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y_max - self.y_min).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let r = Rect::new(
            self.x_min.max(other.x_min),
            self.y_min.max(other.y_min),
            self.x_max.min(other.x_max),
            self.y_max.min(other.y_max),
        );
        (r.x_min < r.x_max && r.y_min < r.y_max).then_some(r)
    }

    pub fn intersection_area(&self, other: &Rect) -> f64 {
        self.intersection(other).map_or(0.0, |r| r.area())
    }

    /// Smallest rectangle enclosing both.
    pub fn enclosing(&self, other: &Rect) -> Rect {
        Rect::new(
            self.x_min.min(other.x_min),
            self.y_min.min(other.y_min),
            self.x_max.max(other.x_max),
            self.y_max.max(other.y_max),
        )
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Rect {
        Rect::new(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }

    pub fn clamp_to(&self, width: f64, height: f64) -> Rect {
        Rect::new(
            self.x_min.clamp(0.0, width),
            self.y_min.clamp(0.0, height),
            self.x_max.clamp(0.0, width),
            self.y_max.clamp(0.0, height),
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite())
    }
}

/// One annotation box on a panorama.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub class: ObjectClass,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<String>,
    /// Shared by the two halves of an object split by the panorama seam.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: Metadata,
}

impl BBox {
    pub fn new(class: ObjectClass, rect: Rect) -> Self {
        BBox {
            class,
            x_min: rect.x_min,
            y_min: rect.y_min,
            x_max: rect.x_max,
            y_max: rect.y_max,
            object_id: None,
            link_id: None,
            distance_m: None,
            source: None,
            metadata: Metadata::new(),
        }
    }

    pub fn rect(&self) -> Rect {
        Rect::new(self.x_min, self.y_min, self.x_max, self.y_max)
    }

    pub fn set_rect(&mut self, r: Rect) {
        self.x_min = r.x_min;
        self.y_min = r.y_min;
        self.x_max = r.x_max;
        self.y_max = r.y_max;
    }

    pub fn width(&self) -> f64 {
        self.rect().width()
    }

    pub fn height(&self) -> f64 {
        self.rect().height()
    }

    pub fn area(&self) -> f64 {
        self.rect().area()
    }
}

/// Lifecycle of a box set, from generation through human verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generated,
    Refined,
    HumanAdjusted,
    HumanVerified,
    Gold,
}

#[derive(Debug, Error, PartialEq)]
pub enum BoxSetError {
    #[error("stage cannot move backwards from {from:?} to {to:?}")]
    StageRegression { from: Stage, to: Stage },
    #[error("box {index} is outside the {width}x{height} image or inverted")]
    OutOfImage { index: usize, width: u32, height: u32 },
    #[error("link `{0}` does not join exactly two boxes")]
    LinkArity(String),
    #[error("linked boxes `{0}` must touch opposite image edges with equal heights")]
    LinkGeometry(String),
}

/// All boxes of one panorama at one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub panorama_id: String,
    pub width_px: u32,
    pub height_px: u32,
    pub stage: Stage,
    pub boxes: Vec<BBox>,
}

/// Tolerance for "touches the image edge" and "equal heights" checks.
pub const EDGE_EPS: f64 = 1e-6;

impl BoxSet {
    pub fn new(panorama_id: impl Into<String>, width_px: u32, height_px: u32, stage: Stage) -> Self {
        BoxSet { panorama_id: panorama_id.into(), width_px, height_px, stage, boxes: Vec::new() }
    }

    pub fn advance(&mut self, to: Stage) -> Result<(), BoxSetError> {
        if to < self.stage {
            return Err(BoxSetError::StageRegression { from: self.stage, to });
        }
        self.stage = to;
        Ok(())
    }

    /// Boxes grouped by link id; unlinked boxes are absent.
    pub fn links(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, b) in self.boxes.iter().enumerate() {
            if let Some(l) = &b.link_id {
                map.entry(l.as_str()).or_default().push(i);
            }
        }
        map
    }

    /// Checks in-image clamping and the linked-pair contract.
    pub fn validate(&self) -> Result<(), BoxSetError> {
        let (w, h) = (self.width_px as f64, self.height_px as f64);
        for (index, b) in self.boxes.iter().enumerate() {
            let r = b.rect();
            let ok = r.is_finite()
                && r.x_min >= 0.0
                && r.y_min >= 0.0
                && r.x_max <= w
                && r.y_max <= h
                && r.x_min < r.x_max
                && r.y_min < r.y_max;
            if !ok {
                return Err(BoxSetError::OutOfImage { index, width: self.width_px, height: self.height_px });
            }
        }
        for (link, members) in self.links() {
            let [a, b] = members[..] else {
                return Err(BoxSetError::LinkArity(link.to_string()));
            };
            let (a, b) = (&self.boxes[a], &self.boxes[b]);
            if !is_valid_link_pair(a, b, w) {
                return Err(BoxSetError::LinkGeometry(link.to_string()));
            }
        }
        Ok(())
    }
}

/// One box on the left edge, the other on the right edge, same y-range.
pub fn is_valid_link_pair(a: &BBox, b: &BBox, width: f64) -> bool {
    let touches_left = |x: &BBox| x.x_min.abs() <= EDGE_EPS;
    let touches_right = |x: &BBox| (x.x_max - width).abs() <= EDGE_EPS;
    let sides = (touches_left(a) && touches_right(b)) || (touches_left(b) && touches_right(a));
    sides && (a.y_min - b.y_min).abs() <= EDGE_EPS && (a.y_max - b.y_max).abs() <= EDGE_EPS
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(r: Rect) -> BBox {
        BBox::new(ObjectClass::Building, r)
    }

    #[test]
    fn stage_is_monotone() {
        let mut s = BoxSet::new("p", 1400, 700, Stage::Generated);
        s.advance(Stage::Refined).unwrap();
        s.advance(Stage::Refined).unwrap();
        assert_eq!(
            s.advance(Stage::Generated),
            Err(BoxSetError::StageRegression { from: Stage::Refined, to: Stage::Generated })
        );
    }

    #[test]
    fn validate_catches_out_of_image() {
        let mut s = BoxSet::new("p", 100, 50, Stage::Refined);
        s.boxes.push(bx(Rect::new(10., 10., 20., 20.)));
        assert!(s.validate().is_ok());
        s.boxes.push(bx(Rect::new(90., 10., 101., 20.)));
        assert!(matches!(s.validate(), Err(BoxSetError::OutOfImage { index: 1, .. })));
    }

    #[test]
    fn validate_link_contract() {
        let mut s = BoxSet::new("p", 100, 50, Stage::Refined);
        let mut a = bx(Rect::new(0., 10., 5., 20.));
        let mut b = bx(Rect::new(90., 10., 100., 20.));
        a.link_id = Some("l".into());
        b.link_id = Some("l".into());
        s.boxes = vec![a.clone(), b.clone()];
        assert!(s.validate().is_ok());

        s.boxes[1].y_max = 21.0;
        assert_eq!(s.validate(), Err(BoxSetError::LinkGeometry("l".into())));

        s.boxes = vec![a];
        assert_eq!(s.validate(), Err(BoxSetError::LinkArity("l".into())));
    }

    #[test]
    fn rect_algebra() {
        let a = Rect::new(0., 0., 10., 10.);
        let b = Rect::new(5., 0., 20., 10.);
        assert_eq!(a.intersection_area(&b), 50.0);
        assert_eq!(a.enclosing(&b), Rect::new(0., 0., 20., 10.));
        assert!(a.intersection(&Rect::new(10., 0., 12., 1.)).is_none());
    }
}
