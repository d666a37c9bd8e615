//! Comparison of a noisy box collection against a clean reference:
//! optimal matching, IoU/GIoU distributions, coordinate shifts and
//! image-level label agreement.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{max_score_assignment, min_cost_assignment};
use crate::model::{BBox, BoxSet, ObjectClass, Rect};
use crate::refine::ZeroArea;
use crate::units::units_of;

/// Intersection over union of two rectangles.
pub fn rect_iou(a: &Rect, b: &Rect) -> Result<f64, ZeroArea> {
    let (aa, ab) = (a.area(), b.area());
    if aa <= 0.0 || ab <= 0.0 {
        return Err(ZeroArea);
    }
    let inter = a.intersection_area(b);
    Ok(inter / (aa + ab - inter))
}

/// Generalized IoU: IoU minus the share of the enclosing box not covered
/// by the union.
pub fn rect_giou(a: &Rect, b: &Rect) -> Result<f64, ZeroArea> {
    let iou = rect_iou(a, b)?;
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let c = a.enclosing(b).area();
    // Rounding can leave the union a hair above the enclosure.
    Ok(iou - ((c - union) / c).max(0.0))
}

pub fn iou(a: &BBox, b: &BBox) -> Result<f64, ZeroArea> {
    rect_iou(&a.rect(), &b.rect())
}

pub fn giou(a: &BBox, b: &BBox) -> Result<f64, ZeroArea> {
    rect_giou(&a.rect(), &b.rect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchCost {
    /// Maximize total IoU.
    Iou,
    /// Maximize total GIoU.
    Giou,
    /// Minimize total Euclidean distance between coordinate 4-vectors.
    CoordL2,
}

fn coord_l2(a: &Rect, b: &Rect) -> f64 {
    let d = [a.x_min - b.x_min, a.y_min - b.y_min, a.x_max - b.x_max, a.y_max - b.y_max];
    d.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Optimal one-to-one matching of `noisy` to `clean`, of size
/// `min(|noisy|, |clean|)`. Zero-area boxes score as disjoint.
pub fn match_rects(noisy: &[Rect], clean: &[Rect], cost: MatchCost) -> Vec<(usize, usize)> {
    let matrix: Vec<Vec<f64>> = noisy
        .iter()
        .map(|n| {
            clean
                .iter()
                .map(|c| match cost {
                    MatchCost::Iou => rect_iou(n, c).unwrap_or(0.0),
                    MatchCost::Giou => rect_giou(n, c).unwrap_or(-1.0),
                    MatchCost::CoordL2 => coord_l2(n, c),
                })
                .collect()
        })
        .collect();
    let result = match cost {
        MatchCost::CoordL2 => min_cost_assignment(&matrix),
        _ => max_score_assignment(&matrix),
    };
    // Matrix is rectangular; non-finite entries come only from non-finite boxes.
    result.unwrap_or_default()
}

pub fn match_boxes(noisy: &[BBox], clean: &[BBox], cost: MatchCost) -> Vec<(usize, usize)> {
    let n: Vec<Rect> = noisy.iter().map(BBox::rect).collect();
    let c: Vec<Rect> = clean.iter().map(BBox::rect).collect();
    match_rects(&n, &c, cost)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("panorama `{0}` is missing from the clean collection")]
    MissingClean(String),
    #[error("panorama `{0}` is missing from the noisy collection")]
    MissingNoisy(String),
    #[error("panorama `{0}` appears more than once")]
    Duplicate(String),
}

fn pair_sets<'a>(noisy: &'a [BoxSet], clean: &'a [BoxSet]) -> Result<Vec<(&'a BoxSet, &'a BoxSet)>, NoiseError> {
    let index = |sets: &'a [BoxSet]| -> Result<BTreeMap<&'a str, &'a BoxSet>, NoiseError> {
        let mut m = BTreeMap::new();
        for s in sets {
            if m.insert(s.panorama_id.as_str(), s).is_some() {
                return Err(NoiseError::Duplicate(s.panorama_id.clone()));
            }
        }
        Ok(m)
    };
    let (n, c) = (index(noisy)?, index(clean)?);
    if let Some(id) = n.keys().find(|k| !c.contains_key(*k)) {
        return Err(NoiseError::MissingClean(id.to_string()));
    }
    if let Some(id) = c.keys().find(|k| !n.contains_key(*k)) {
        return Err(NoiseError::MissingNoisy(id.to_string()));
    }
    Ok(n.into_iter().map(|(k, s)| (s, c[k])).collect())
}

/// Per-class instances as rectangles; linked pairs become one unrolled box.
fn instances(set: &BoxSet) -> Vec<(ObjectClass, Rect)> {
    let w = set.width_px as f64;
    units_of(set).iter().map(|u| (u.class(), u.unrolled(w))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Linear-interpolated quantile of a sorted sample.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

pub fn quantiles(values: &[f64]) -> Option<Quantiles> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Quantiles {
        min: *v.first()?,
        q25: quantile(&v, 0.25)?,
        median: quantile(&v, 0.5)?,
        q75: quantile(&v, 0.75)?,
        max: *v.last()?,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassOverlap {
    pub noisy_total: usize,
    pub clean_total: usize,
    pub matched: usize,
    pub ious: Vec<f64>,
    pub gious: Vec<f64>,
}

impl ClassOverlap {
    /// Share of noisy boxes that found a clean partner; `None` without noisy boxes.
    pub fn matched_noisy_fraction(&self) -> Option<f64> {
        (self.noisy_total > 0).then(|| self.matched as f64 / self.noisy_total as f64)
    }

    pub fn matched_clean_fraction(&self) -> Option<f64> {
        (self.clean_total > 0).then(|| self.matched as f64 / self.clean_total as f64)
    }

    pub fn iou_quantiles(&self) -> Option<Quantiles> {
        quantiles(&self.ious)
    }

    pub fn giou_quantiles(&self) -> Option<Quantiles> {
        quantiles(&self.gious)
    }

    pub fn merge(&mut self, other: &ClassOverlap) {
        self.noisy_total += other.noisy_total;
        self.clean_total += other.clean_total;
        self.matched += other.matched;
        self.ious.extend_from_slice(&other.ious);
        self.gious.extend_from_slice(&other.gious);
    }
}

/// Signed per-coordinate difference, noisy minus clean, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordShift {
    pub dx_min: f64,
    pub dy_min: f64,
    pub dx_max: f64,
    pub dy_max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub per_class: BTreeMap<ObjectClass, ClassOverlap>,
    pub shifts: Vec<CoordShift>,
}

impl MatchReport {
    /// Combines reports of disjoint image subsets.
    pub fn merge(&mut self, other: &MatchReport) {
        for (c, o) in &other.per_class {
            self.per_class.entry(*c).or_default().merge(o);
        }
        self.shifts.extend_from_slice(&other.shifts);
    }
}

fn image_overlap(noisy: &BoxSet, clean: &BoxSet) -> BTreeMap<ObjectClass, ClassOverlap> {
    let mut by_class: BTreeMap<ObjectClass, (Vec<Rect>, Vec<Rect>)> = BTreeMap::new();
    for (c, r) in instances(noisy) {
        by_class.entry(c).or_default().0.push(r);
    }
    for (c, r) in instances(clean) {
        by_class.entry(c).or_default().1.push(r);
    }
    by_class
        .into_iter()
        .map(|(class, (n, c))| {
            let pairs = match_rects(&n, &c, MatchCost::Giou);
            let mut o =
                ClassOverlap { noisy_total: n.len(), clean_total: c.len(), matched: pairs.len(), ..Default::default() };
            for (i, j) in pairs {
                o.ious.push(rect_iou(&n[i], &c[j]).unwrap_or(0.0));
                o.gious.push(rect_giou(&n[i], &c[j]).unwrap_or(-1.0));
            }
            (class, o)
        })
        .collect()
}

fn image_shifts(noisy: &BoxSet, clean: &BoxSet) -> Vec<CoordShift> {
    let n: Vec<Rect> = instances(noisy).into_iter().map(|x| x.1).collect();
    let c: Vec<Rect> = instances(clean).into_iter().map(|x| x.1).collect();
    match_rects(&n, &c, MatchCost::CoordL2)
        .into_iter()
        .map(|(i, j)| CoordShift {
            dx_min: n[i].x_min - c[j].x_min,
            dy_min: n[i].y_min - c[j].y_min,
            dx_max: n[i].x_max - c[j].x_max,
            dy_max: n[i].y_max - c[j].y_max,
        })
        .collect()
}

/// Class-restricted GIoU matching per image, plus class-agnostic
/// coordinate shifts.
pub fn overlap_report(noisy: &[BoxSet], clean: &[BoxSet]) -> Result<MatchReport, NoiseError> {
    let mut report = MatchReport::default();
    for (n, c) in pair_sets(noisy, clean)? {
        let part = MatchReport { per_class: image_overlap(n, c), shifts: image_shifts(n, c) };
        report.merge(&part);
    }
    Ok(report)
}

pub fn shift_report(noisy: &[BoxSet], clean: &[BoxSet]) -> Result<Vec<CoordShift>, NoiseError> {
    Ok(pair_sets(noisy, clean)?.into_iter().flat_map(|(n, c)| image_shifts(n, c)).collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl LabelCounts {
    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub per_class: BTreeMap<ObjectClass, LabelCounts>,
    /// Fraction of the 22 class presence bits that agree, per image.
    pub image_accuracy: BTreeMap<String, f64>,
}

/// Image-level presence labels of the noisy set against the clean set.
pub fn label_report(noisy: &[BoxSet], clean: &[BoxSet]) -> Result<LabelReport, NoiseError> {
    let mut report = LabelReport::default();
    for c in ObjectClass::ALL {
        report.per_class.insert(c, LabelCounts::default());
    }
    let present = |s: &BoxSet| s.boxes.iter().map(|b| b.class).collect::<BTreeSet<_>>();
    for (n, c) in pair_sets(noisy, clean)? {
        let (pn, pc) = (present(n), present(c));
        let mut agree = 0;
        for class in ObjectClass::ALL {
            let counts = report.per_class.get_mut(&class).expect("all classes inserted");
            match (pn.contains(&class), pc.contains(&class)) {
                (true, true) => counts.tp += 1,
                (true, false) => counts.fp += 1,
                (false, true) => counts.fn_ += 1,
                (false, false) => {}
            }
            agree += usize::from(pn.contains(&class) == pc.contains(&class));
        }
        report.image_accuracy.insert(n.panorama_id.clone(), agree as f64 / ObjectClass::ALL.len() as f64);
    }
    Ok(report)
}

/// Fixed-width histogram over `[lo, hi)`; values outside are clamped into
/// the first or last bin. Returns `(bin_start, count)` rows.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, usize)> {
    let bins = bins.max(1);
    let step = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values.iter().filter(|v| v.is_finite()) {
        let k = (((v - lo) / step).floor().max(0.0) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts.into_iter().enumerate().map(|(i, c)| (lo + i as f64 * step, c)).collect()
}
