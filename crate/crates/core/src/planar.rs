//! Planar primitives over [`GeoPoint`]: orientation, segment intersection,
//! point/segment distance, point-in-polygon.

use crate::model::GeoPoint;

/// Twice the signed area of triangle (a, b, c); positive when counter-clockwise.
pub fn orient(a: GeoPoint, b: GeoPoint, c: GeoPoint) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: GeoPoint, b: GeoPoint, p: GeoPoint) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test, touching and collinear overlap included.
pub fn segments_intersect(p1: GeoPoint, p2: GeoPoint, q1: GeoPoint, q2: GeoPoint) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Closest point to `p` on segment [a, b].
pub fn closest_on_segment(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> GeoPoint {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return a;
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    GeoPoint::new(a.x + t * dx, a.y + t * dy)
}

pub fn point_segment_distance(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> f64 {
    p.distance(closest_on_segment(p, a, b))
}

/// Even-odd test. Points exactly on the boundary may land on either side;
/// callers that care check boundary distance separately.
pub fn point_in_ring(p: GeoPoint, ring: &[GeoPoint]) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Shoelace area of an open vertex ring, signed (counter-clockwise positive).
pub fn signed_area(ring: &[GeoPoint]) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        / 2.0
}

/// Intersections of segment [a, b] with the circle |p - c| = r, as segment
/// parameters t in [0, 1], ascending.
pub fn segment_circle_params(a: GeoPoint, b: GeoPoint, c: GeoPoint, r: f64) -> Vec<f64> {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let (fx, fy) = (a.x - c.x, a.y - c.y);
    let qa = dx * dx + dy * dy;
    let qb = 2.0 * (fx * dx + fy * dy);
    let qc = fx * fx + fy * fy - r * r;
    let disc = qb * qb - 4.0 * qa * qc;
    if qa == 0.0 || disc < 0.0 {
        return Vec::new();
    }
    let s = disc.sqrt();
    let mut out: Vec<f64> =
        [(-qb - s) / (2.0 * qa), (-qb + s) / (2.0 * qa)].into_iter().filter(|t| (0.0..=1.0).contains(t)).collect();
    out.dedup();
    out
}
