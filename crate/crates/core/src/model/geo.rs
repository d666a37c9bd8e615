use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ObjectClass;
use crate::planar;

/// Metadata payload carried from source objects through to annotations.
pub type Metadata = BTreeMap<String, serde_json::Value>;

/// A position in a planar metric CRS: meters east (`x`) and north (`y`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub x: f64,
    pub y: f64,
}

impl GeoPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        GeoPoint { x, y }
    }

    pub fn distance(self, other: GeoPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Compass bearing from `self` to `to`, degrees clockwise from north in [0, 360).
    pub fn azimuth_to(self, to: GeoPoint) -> f64 {
        normalize_deg((to.x - self.x).atan2(to.y - self.y).to_degrees())
    }

    pub fn midpoint(self, other: GeoPoint) -> GeoPoint {
        GeoPoint::new((self.x + other.x) / 2.0, (self.y + other.y) / 2.0)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Wraps an angle into [0, 360).
pub fn normalize_deg(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Signed shortest rotation from `b` to `a`, in (-180, 180].
pub fn angular_diff(a: f64, b: f64) -> f64 {
    let d = normalize_deg(a - b);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Clockwise sweep from `from` to `to`, in [0, 360).
pub fn clockwise_span(from: f64, to: f64) -> f64 {
    normalize_deg(to - from)
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("polyline needs at least 2 distinct points")]
    ShortPolyline,
    #[error("polygon needs at least 3 distinct vertices")]
    ShortPolygon,
    #[error("polygon ring self-intersects")]
    SelfIntersecting,
}

/// An ordered vertex list with no zero-length segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GeoPoint>", into = "Vec<GeoPoint>")]
pub struct Polyline(Vec<GeoPoint>);

impl Polyline {
    /// Consecutive duplicate points are collapsed before validation.
    pub fn new(mut points: Vec<GeoPoint>) -> Result<Self, GeometryError> {
        if !points.iter().all(|p| p.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        points.dedup();
        if points.len() < 2 {
            return Err(GeometryError::ShortPolyline);
        }
        Ok(Polyline(points))
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = (GeoPoint, GeoPoint)> + '_ {
        self.0.windows(2).map(|w| (w[0], w[1]))
    }
}

impl TryFrom<Vec<GeoPoint>> for Polyline {
    type Error = GeometryError;
    fn try_from(v: Vec<GeoPoint>) -> Result<Self, Self::Error> {
        Polyline::new(v)
    }
}

impl From<Polyline> for Vec<GeoPoint> {
    fn from(p: Polyline) -> Self {
        p.0
    }
}

/// A simple polygon stored as a closed ring (first vertex repeated last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GeoPoint>", into = "Vec<GeoPoint>")]
pub struct Polygon(Vec<GeoPoint>);

impl Polygon {
    /// Accepts open or closed rings; rejects self-intersection.
    pub fn new(mut ring: Vec<GeoPoint>) -> Result<Self, GeometryError> {
        if !ring.iter().all(|p| p.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        ring.dedup();
        if ring.len() > 1 && ring.first() == ring.last() {
            ring.pop();
        }
        if ring.len() < 3 {
            return Err(GeometryError::ShortPolygon);
        }
        if ring_self_intersects(&ring) {
            return Err(GeometryError::SelfIntersecting);
        }
        let first = ring[0];
        ring.push(first);
        Ok(Polygon(ring))
    }

    /// Closed ring, first == last.
    pub fn ring(&self) -> &[GeoPoint] {
        &self.0
    }

    /// Distinct vertices (the ring without its closing point).
    pub fn vertices(&self) -> &[GeoPoint] {
        &self.0[..self.0.len() - 1]
    }

    pub fn edges(&self) -> impl Iterator<Item = (GeoPoint, GeoPoint)> + '_ {
        self.0.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn area(&self) -> f64 {
        planar::signed_area(self.vertices()).abs()
    }

    /// Area-weighted centroid; vertex mean for degenerate rings.
    pub fn centroid(&self) -> GeoPoint {
        let v = self.vertices();
        let a = planar::signed_area(v);
        if a == 0.0 {
            let n = v.len() as f64;
            return GeoPoint::new(v.iter().map(|p| p.x).sum::<f64>() / n, v.iter().map(|p| p.y).sum::<f64>() / n);
        }
        let (mut cx, mut cy) = (0.0, 0.0);
        for (p, q) in self.edges() {
            let cross = p.x * q.y - q.x * p.y;
            cx += (p.x + q.x) * cross;
            cy += (p.y + q.y) * cross;
        }
        GeoPoint::new(cx / (6.0 * a), cy / (6.0 * a))
    }

    /// Strictly inside; boundary points are not contained.
    pub fn contains(&self, p: GeoPoint) -> bool {
        planar::point_in_ring(p, self.vertices()) && self.boundary_distance(p) > 0.0
    }

    pub fn boundary_distance(&self, p: GeoPoint) -> f64 {
        self.edges().map(|(a, b)| planar::point_segment_distance(p, a, b)).fold(f64::INFINITY, f64::min)
    }
}

impl TryFrom<Vec<GeoPoint>> for Polygon {
    type Error = GeometryError;
    fn try_from(v: Vec<GeoPoint>) -> Result<Self, Self::Error> {
        Polygon::new(v)
    }
}

impl From<Polygon> for Vec<GeoPoint> {
    fn from(p: Polygon) -> Self {
        p.0
    }
}

fn ring_self_intersects(ring: &[GeoPoint]) -> bool {
    let n = ring.len();
    let edge = |i: usize| (ring[i], ring[(i + 1) % n]);
    for i in 0..n {
        let (a1, a2) = edge(i);
        for j in i + 1..n {
            let (b1, b2) = edge(j);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // neighbours share one vertex; only a collinear fold-back is a violation
                let (shared, other_a, other_b) = if j == i + 1 { (a2, a1, b2) } else { (a1, a2, b1) };
                if planar::orient(shared, other_a, other_b) == 0.0 {
                    let dot = (other_a.x - shared.x) * (other_b.x - shared.x)
                        + (other_a.y - shared.y) * (other_b.y - shared.y);
                    if dot > 0.0 {
                        return true;
                    }
                }
                continue;
            }
            if planar::segments_intersect(a1, a2, b1, b2) {
                return true;
            }
        }
    }
    false
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "coordinates")]
pub enum Geometry {
    Point(GeoPoint),
    Polyline(Polyline),
    Polygon(Polygon),
}

impl Geometry {
    /// Axis-aligned extent as (min, max).
    pub fn extent(&self) -> (GeoPoint, GeoPoint) {
        let pts: &[GeoPoint] = match self {
            Geometry::Point(p) => std::slice::from_ref(p),
            Geometry::Polyline(l) => l.points(),
            Geometry::Polygon(p) => p.vertices(),
        };
        let mut lo = GeoPoint::new(f64::INFINITY, f64::INFINITY);
        let mut hi = GeoPoint::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in pts {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    /// Euclidean distance from `p` to the geometry; 0 inside a polygon.
    pub fn distance_to(&self, p: GeoPoint) -> f64 {
        match self {
            Geometry::Point(q) => q.distance(p),
            Geometry::Polyline(l) => {
                l.segments().map(|(a, b)| planar::point_segment_distance(p, a, b)).fold(f64::INFINITY, f64::min)
            }
            Geometry::Polygon(poly) => {
                if planar::point_in_ring(p, poly.vertices()) {
                    0.0
                } else {
                    poly.boundary_distance(p)
                }
            }
        }
    }

    /// Point for objects, centroid for polygons, chord midpoint for lines.
    pub fn representative_point(&self) -> GeoPoint {
        match self {
            Geometry::Point(p) => *p,
            Geometry::Polygon(p) => p.centroid(),
            Geometry::Polyline(l) => {
                let pts = l.points();
                pts[0].midpoint(pts[pts.len() - 1])
            }
        }
    }
}

/// One geospatial object from a map source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrbanObject {
    pub id: String,
    pub class: ObjectClass,
    pub geometry: Geometry,
    pub source: String,
    #[serde(default)]
    pub metadata: Metadata,
    #[serde(default)]
    pub height_override: Option<f64>,
    #[serde(default)]
    pub width_override: Option<f64>,
}

impl UrbanObject {
    pub fn new(id: impl Into<String>, class: ObjectClass, geometry: Geometry, source: impl Into<String>) -> Self {
        UrbanObject {
            id: id.into(),
            class,
            geometry,
            source: source.into(),
            metadata: Metadata::new(),
            height_override: None,
            width_override: None,
        }
    }
}
