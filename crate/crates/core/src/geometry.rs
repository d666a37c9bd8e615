//! Real-world measurements of map objects as seen from a camera position:
//! minimum distance, apparent width, height and compass azimuths.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{object_height_from_grids, ElevationGrid, ObjectStore};
use crate::model::{
    clockwise_span, normalize_deg, ClassTable, GeoPoint, Geometry, Metadata, ObjectClass, Polygon, Polyline,
    UrbanObject,
};
use crate::planar;

pub const DEFAULT_QUERY_RADIUS_M: f64 = 150.0;

/// Height used when a class has no prior and elevation data is missing.
pub const DEFAULT_FALLBACK_HEIGHT_M: f64 = 8.0;

const ANGLE_TIE_EPS: f64 = 1e-12;

/// Everything the projection step needs to know about one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measured3D {
    pub object_id: String,
    pub class: ObjectClass,
    pub source: String,
    pub distance_m: f64,
    pub width_m: f64,
    pub height_m: f64,
    pub azimuth_center_deg: f64,
    pub azimuth_left_deg: Option<f64>,
    pub azimuth_right_deg: Option<f64>,
    pub metadata: Metadata,
}

/// Apparent extent of an object: chord width and the two bounding azimuths.
/// The clockwise sweep from `az_left_deg` to `az_right_deg` covers the object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibleSpan {
    pub width_m: f64,
    pub az_left_deg: f64,
    pub az_right_deg: f64,
    pub left: GeoPoint,
    pub right: GeoPoint,
}

impl VisibleSpan {
    /// Azimuth halfway along the clockwise sweep from left to right.
    pub fn center_azimuth(&self) -> f64 {
        normalize_deg(self.az_left_deg + clockwise_span(self.az_left_deg, self.az_right_deg) / 2.0)
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum MeasureError {
    #[error("camera lies inside the object")]
    CameraInsideObject,
    #[error("camera lies on the object")]
    ZeroDistance,
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum WidthError {
    #[error("camera lies inside the polygon")]
    CameraInside,
    #[error("degenerate polygon")]
    Degenerate,
    #[error("polyline does not reach the query disk")]
    OutsideDisk,
    /// The clipped part collapsed to a single point.
    #[error("clipped polyline is a single point")]
    DegenerateClip(GeoPoint),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasureConfig {
    pub query_radius_m: f64,
    pub fallback_height_m: f64,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig { query_radius_m: DEFAULT_QUERY_RADIUS_M, fallback_height_m: DEFAULT_FALLBACK_HEIGHT_M }
    }
}

/// Surface and terrain models used for object heights.
#[derive(Debug, Clone, Copy)]
pub struct Elevation<'a> {
    pub dsm: &'a ElevationGrid,
    pub dtm: &'a ElevationGrid,
}

/// All objects whose geometry intersects the closed disk around the camera.
pub fn query_radius(store: &ObjectStore, cam: GeoPoint, radius: f64) -> Vec<&UrbanObject> {
    assert!(radius > 0.0, "radius must be positive");
    store.within(cam, radius)
}

/// Distance from the camera to the nearest point of the geometry.
pub fn min_distance(geom: &Geometry, cam: GeoPoint) -> Result<f64, MeasureError> {
    if let Geometry::Polygon(p) = geom {
        if p.contains(cam) {
            return Err(MeasureError::CameraInsideObject);
        }
    }
    Ok(geom.distance_to(cam))
}

fn nearest_point_on(edges: impl Iterator<Item = (GeoPoint, GeoPoint)>, cam: GeoPoint) -> Option<GeoPoint> {
    edges.map(|(a, b)| planar::closest_on_segment(cam, a, b)).min_by(|p, q| p.distance(cam).total_cmp(&q.distance(cam)))
}

/// Orders two azimuths so that the clockwise sweep between them covers the
/// object: the sweep containing the nearest point wins; when that point sits
/// on a sweep boundary, the sweep containing more of `others` wins; the
/// shorter sweep breaks any remaining tie.
fn orient_span(a: f64, b: f64, near: Option<f64>, others: &[f64]) -> (f64, f64) {
    let ab = clockwise_span(a, b);
    let ba = clockwise_span(b, a);
    let strictly_in = |from: f64, span: f64, x: f64| {
        let s = clockwise_span(from, x);
        s > 1e-9 && s < span - 1e-9
    };
    if let Some(n) = near {
        match (strictly_in(a, ab, n), strictly_in(b, ba, n)) {
            (true, false) => return (a, b),
            (false, true) => return (b, a),
            _ => {}
        }
    }
    let count = |from: f64, span: f64| others.iter().filter(|&&x| strictly_in(from, span, x)).count();
    match count(a, ab).cmp(&count(b, ba)) {
        std::cmp::Ordering::Greater => (a, b),
        std::cmp::Ordering::Less => (b, a),
        std::cmp::Ordering::Equal if ab <= ba => (a, b),
        std::cmp::Ordering::Equal => (b, a),
    }
}

/// True when the segment camera→vertex meets the polygon boundary only at the vertex.
pub fn vertex_visible(poly: &Polygon, index: usize, cam: GeoPoint) -> bool {
    let v = poly.vertices()[index];
    poly.edges().all(|(a, b)| {
        if a == v || b == v {
            // an incident edge blocks only when it folds back along the sight line
            let u = if a == v { b } else { a };
            let collinear = planar::orient(cam, v, u) == 0.0;
            let toward_cam = (cam.x - v.x) * (u.x - v.x) + (cam.y - v.y) * (u.y - v.y) > 0.0;
            !(collinear && toward_cam)
        } else {
            !planar::segments_intersect(cam, v, a, b)
        }
    })
}

fn subtended_angle(cam: GeoPoint, p: GeoPoint, q: GeoPoint) -> f64 {
    let (ux, uy) = (p.x - cam.x, p.y - cam.y);
    let (vx, vy) = (q.x - cam.x, q.y - cam.y);
    (ux * vy - uy * vx).abs().atan2(ux * vx + uy * vy)
}

/// Apparent width of a polygon: among vertices with an unobstructed line of
/// sight, the pair subtending the largest angle at the camera. Ties prefer
/// the pair nearer to the camera.
pub fn visible_width_polygon(poly: &Polygon, cam: GeoPoint) -> Result<VisibleSpan, WidthError> {
    if poly.area() == 0.0 {
        return Err(WidthError::Degenerate);
    }
    if poly.contains(cam) {
        return Err(WidthError::CameraInside);
    }
    let verts = poly.vertices();
    let visible: Vec<GeoPoint> = (0..verts.len()).filter(|&i| vertex_visible(poly, i, cam)).map(|i| verts[i]).collect();
    if visible.len() < 2 {
        return Err(WidthError::Degenerate);
    }

    let mut best: Option<(f64, f64, GeoPoint, GeoPoint)> = None;
    for (i, &p) in visible.iter().enumerate() {
        for &q in &visible[i + 1..] {
            let angle = subtended_angle(cam, p, q);
            let dist = p.distance(cam) + q.distance(cam);
            let better = match best {
                None => true,
                Some((ba, bd, ..)) => angle > ba + ANGLE_TIE_EPS || ((angle - ba).abs() <= ANGLE_TIE_EPS && dist < bd),
            };
            if better {
                best = Some((angle, dist, p, q));
            }
        }
    }
    let (_, _, p, q) = best.expect("at least one pair");
    let near = nearest_point_on(poly.edges(), cam).map(|n| cam.azimuth_to(n));
    let others: Vec<f64> = verts.iter().map(|v| cam.azimuth_to(*v)).collect();
    let (az_p, az_q) = (cam.azimuth_to(p), cam.azimuth_to(q));
    let (l, r) = orient_span(az_p, az_q, near, &others);
    let (left, right) = if l == az_p && r == az_q { (p, q) } else { (q, p) };
    Ok(VisibleSpan { width_m: p.distance(q), az_left_deg: l, az_right_deg: r, left, right })
}

/// The part of a polyline inside the disk, as the ordered list of its points.
fn clip_polyline(line: &Polyline, c: GeoPoint, r: f64) -> Vec<GeoPoint> {
    let mut out: Vec<GeoPoint> = Vec::new();
    for (a, b) in line.segments() {
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let (fx, fy) = (a.x - c.x, a.y - c.y);
        let qa = dx * dx + dy * dy;
        let qb = 2.0 * (fx * dx + fy * dy);
        let qc = fx * fx + fy * fy - r * r;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            continue;
        }
        let s = disc.sqrt();
        let t0 = ((-qb - s) / (2.0 * qa)).max(0.0);
        let t1 = ((-qb + s) / (2.0 * qa)).min(1.0);
        if t0 > t1 {
            continue;
        }
        let at = |t: f64| {
            if t == 0.0 {
                a
            } else if t == 1.0 {
                b
            } else {
                GeoPoint::new(a.x + t * dx, a.y + t * dy)
            }
        };
        let (p0, p1) = (at(t0), at(t1));
        if out.last() != Some(&p0) {
            out.push(p0);
        }
        if p1 != p0 {
            out.push(p1);
        }
    }
    out
}

/// Apparent width of a polyline: the chord between the two ends of the part
/// that falls inside the query disk.
pub fn visible_width_polyline(line: &Polyline, cam: GeoPoint, radius: f64) -> Result<VisibleSpan, WidthError> {
    let clipped = clip_polyline(line, cam, radius);
    let (Some(&first), Some(&last)) = (clipped.first(), clipped.last()) else {
        return Err(WidthError::OutsideDisk);
    };
    let width = first.distance(last);
    if width == 0.0 {
        return Err(WidthError::DegenerateClip(first));
    }
    let near = nearest_point_on(clipped.windows(2).map(|w| (w[0], w[1])), cam)
        .filter(|n| *n != cam)
        .map(|n| cam.azimuth_to(n));
    let others: Vec<f64> = clipped.iter().filter(|p| **p != cam).map(|p| cam.azimuth_to(*p)).collect();
    let (az_f, az_l) = (cam.azimuth_to(first), cam.azimuth_to(last));
    let (l, r) = orient_span(az_f, az_l, near, &others);
    let (left, right) = if l == az_f && r == az_l { (first, last) } else { (last, first) };
    Ok(VisibleSpan { width_m: width, az_left_deg: l, az_right_deg: r, left, right })
}

/// Derives the full set of measurements for one object.
///
/// Width comes from the polygon/polyline routine when the geometry allows,
/// else the object's override, else the class prior. Height comes from the
/// override, else elevation data for classes that use it, else the class
/// prior, else `cfg.fallback_height_m`.
pub fn measure(
    obj: &UrbanObject,
    cam: GeoPoint,
    classes: &ClassTable,
    elevation: Option<Elevation<'_>>,
    cfg: &MeasureConfig,
) -> Result<Measured3D, MeasureError> {
    let distance = min_distance(&obj.geometry, cam)?;
    if distance <= 0.0 {
        return Err(MeasureError::ZeroDistance);
    }
    let spec = classes.get(obj.class);

    let span = match &obj.geometry {
        Geometry::Point(_) => Err(WidthError::Degenerate),
        Geometry::Polygon(p) => visible_width_polygon(p, cam),
        Geometry::Polyline(l) => visible_width_polyline(l, cam, cfg.query_radius_m),
    };
    let fallback_width = obj.width_override.unwrap_or(spec.width_estimate);
    let (width_m, azimuth_center_deg, left, right) = match span {
        Ok(s) => (s.width_m, s.center_azimuth(), Some(s.az_left_deg), Some(s.az_right_deg)),
        Err(WidthError::DegenerateClip(p)) => (fallback_width, cam.azimuth_to(p), None, None),
        Err(_) => (fallback_width, cam.azimuth_to(obj.geometry.representative_point()), None, None),
    };

    let from_grids = || {
        let e = elevation.filter(|_| spec.height_from_elevation)?;
        object_height_from_grids(obj, e.dsm, e.dtm).ok().filter(|h| *h > 0.0)
    };
    let height_m = obj.height_override.or_else(from_grids).or(spec.height_estimate).unwrap_or(cfg.fallback_height_m);

    Ok(Measured3D {
        object_id: obj.id.clone(),
        class: obj.class,
        source: obj.source.clone(),
        distance_m: distance,
        width_m,
        height_m,
        azimuth_center_deg,
        azimuth_left_deg: left,
        azimuth_right_deg: right,
        metadata: obj.metadata.clone(),
    })
}
