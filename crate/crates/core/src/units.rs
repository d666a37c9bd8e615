//! Grouping of boxes into annotation units: a single box, or the two halves
//! of a seam-split object treated as one.

use std::collections::BTreeMap;

use crate::model::{is_valid_link_pair, BBox, BoxSet, ObjectClass, Rect, EDGE_EPS};

#[derive(Debug, Clone, PartialEq)]
pub struct BoxUnit {
    /// One box, or `[right, left]` for a linked pair (right touches x = width).
    pub members: Vec<BBox>,
    /// Position of the first member in the originating set.
    pub first: usize,
}

impl BoxUnit {
    pub fn single(b: BBox, first: usize) -> Self {
        BoxUnit { members: vec![b], first }
    }

    pub fn is_linked(&self) -> bool {
        self.members.len() == 2
    }

    pub fn class(&self) -> ObjectClass {
        self.members[0].class
    }

    pub fn area(&self) -> f64 {
        self.members.iter().map(BBox::area).sum()
    }

    pub fn distance(&self) -> Option<f64> {
        self.members.iter().filter_map(|b| b.distance_m).reduce(f64::min)
    }

    pub fn object_id(&self) -> Option<&str> {
        self.members[0].object_id.as_deref()
    }

    pub fn rects(&self) -> impl Iterator<Item = Rect> + '_ {
        self.members.iter().map(BBox::rect)
    }

    /// Extent in a widened x domain where the left half continues past
    /// `width`: `[x_min(right), width + x_max(left)]`.
    pub fn unrolled(&self, width: f64) -> Rect {
        match &self.members[..] {
            [b] => b.rect(),
            [r, l] => Rect::new(r.x_min, r.y_min, width + l.x_max, r.y_max),
            _ => unreachable!("units hold one or two boxes"),
        }
    }

    /// Summed pairwise intersection area with another unit.
    pub fn intersection_area(&self, other: &BoxUnit) -> f64 {
        self.rects().flat_map(|a| other.rects().map(move |b| a.intersection_area(&b))).sum()
    }

    /// Fraction of this unit's area covered by `other`.
    pub fn covered_by(&self, other: &BoxUnit) -> f64 {
        let area = self.area();
        if area <= 0.0 {
            return 0.0;
        }
        (self.intersection_area(other) / area).clamp(0.0, 1.0)
    }

    pub fn iou(&self, other: &BoxUnit) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Splits a set into units. Link groups that do not satisfy the pair
/// contract fall back to independent single boxes.
pub fn units_of(set: &BoxSet) -> Vec<BoxUnit> {
    let w = set.width_px as f64;
    let mut pairs: BTreeMap<usize, usize> = BTreeMap::new();
    for members in set.links().values() {
        if let [a, b] = members[..] {
            if is_valid_link_pair(&set.boxes[a], &set.boxes[b], w) {
                pairs.insert(a, b);
            }
        }
    }
    let partner: BTreeMap<usize, usize> = pairs.iter().map(|(&a, &b)| (b, a)).collect();
    let mut out = Vec::with_capacity(set.boxes.len());
    for (i, b) in set.boxes.iter().enumerate() {
        if partner.contains_key(&i) {
            continue;
        }
        match pairs.get(&i) {
            Some(&j) => {
                let (p, q) = (b.clone(), set.boxes[j].clone());
                let members = if (p.x_max - w).abs() <= EDGE_EPS { vec![p, q] } else { vec![q, p] };
                out.push(BoxUnit { members, first: i });
            }
            None => out.push(BoxUnit::single(b.clone(), i)),
        }
    }
    out
}

/// Flattens units back into boxes, ordered by their original position.
pub fn boxes_of(mut units: Vec<BoxUnit>) -> Vec<BBox> {
    units.sort_by_key(|u| u.first);
    units.into_iter().flat_map(|u| u.members).collect()
}

/// Cuts a rectangle of the widened x domain back into image boxes. Halves
/// narrower than `min_px` are dropped; the link survives only when both
/// halves do.
pub fn split_unrolled(template: &BBox, r: Rect, width: f64, min_px: f64, link_id: &str) -> Vec<BBox> {
    let make = |rect: Rect| {
        let mut b = template.clone();
        b.set_rect(rect);
        b.link_id = None;
        b
    };
    let right = (r.x_min < width).then(|| Rect::new(r.x_min, r.y_min, r.x_max.min(width), r.y_max));
    let left = (r.x_max > width).then(|| Rect::new((r.x_min - width).max(0.0), r.y_min, r.x_max - width, r.y_max));
    let keep = |o: Option<Rect>| o.filter(|x| x.width() >= min_px);
    match (keep(right), keep(left)) {
        (Some(a), Some(b)) => {
            let (mut a, mut b) = (make(a), make(b));
            a.link_id = Some(link_id.to_string());
            b.link_id = Some(link_id.to_string());
            vec![a, b]
        }
        (Some(a), None) => vec![make(a)],
        (None, Some(b)) => vec![make(b)],
        (None, None) => vec![],
    }
}
