//! Occlusion handling and duplicate merging on generated box sets.
//!
//! Rules run in a fixed order: building containment and x-trimming, tree
//! self-occlusion, multi-source merging, and the general occlusion rule.
//! Seam-linked pairs are handled as one unit throughout, so both halves are
//! kept or removed together.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{BBox, BoxSet, BoxSetError, ClassTable, Metadata, ObjectClass, Rect, Stage};
use crate::units::{boxes_of, split_unrolled, units_of, BoxUnit};

/// Boxes thinner than this after trimming are dropped.
pub const MIN_BOX_PX: f64 = 1.0;

/// Containment tolerance for "fully inside".
const CONTAIN_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("box has zero area")]
pub struct ZeroArea;

#[derive(Debug, Error, PartialEq)]
pub enum RefineError {
    #[error("refinement expects a generated box set, got stage {0:?}")]
    Stage(Stage),
    #[error(transparent)]
    Invalid(#[from] BoxSetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub tree_overlap: f64,
    pub general_overlap: f64,
    pub merge_min_iou: f64,
    /// Classes that never occlude under the general rule.
    pub non_blocking: BTreeSet<ObjectClass>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            tree_overlap: 0.30,
            general_overlap: 0.80,
            merge_min_iou: 0.5,
            non_blocking: ClassTable::default().non_blocking(),
        }
    }
}

/// Fraction of `a` covered by `b`.
pub fn overlap_fraction(a: &BBox, b: &BBox) -> Result<f64, ZeroArea> {
    let area = a.area();
    if area <= 0.0 || !area.is_finite() {
        return Err(ZeroArea);
    }
    Ok((a.rect().intersection_area(&b.rect()) / area).clamp(0.0, 1.0))
}

/// Nearer first: smaller distance, then larger area, then object id.
/// Boxes without a distance sort last.
fn nearness(a: &BoxUnit, b: &BoxUnit) -> Ordering {
    let d = |u: &BoxUnit| u.distance().unwrap_or(f64::INFINITY);
    d(a).total_cmp(&d(b))
        .then_with(|| b.area().total_cmp(&a.area()))
        .then_with(|| a.object_id().cmp(&b.object_id()))
        .then_with(|| a.first.cmp(&b.first))
}

fn sorted_units(set: &BoxSet) -> Vec<BoxUnit> {
    let mut units = units_of(set);
    units.sort_by(nearness);
    units
}

fn with_units(set: &BoxSet, units: Vec<BoxUnit>) -> BoxSet {
    BoxSet { boxes: boxes_of(units), ..set.clone() }
}

fn sources(u: &BoxUnit) -> BTreeSet<&str> {
    u.members.iter().filter_map(|b| b.source.as_deref()).flat_map(|s| s.split('+')).collect()
}

/// Same class, disjoint non-empty source sets, matching shape and IoU at
/// least `min_iou`: the same physical object reported by two sources.
fn duplicates(a: &BoxUnit, b: &BoxUnit, min_iou: f64) -> bool {
    if a.class() != b.class() || a.is_linked() != b.is_linked() {
        return false;
    }
    let (sa, sb) = (sources(a), sources(b));
    !sa.is_empty() && !sb.is_empty() && sa.is_disjoint(&sb) && a.iou(b) >= min_iou
}

/// Pulls the x-interval of `r` back to the edge of each occluder that
/// covers one of its sides, widest covered side first.
fn trim_x(mut r: Rect, occluders: &[Rect]) -> Rect {
    loop {
        let mut best: Option<(f64, Rect)> = None;
        for o in occluders {
            if r.intersection_area(o) <= 0.0 {
                continue;
            }
            let candidate = match (o.x_min <= r.x_min, o.x_max >= r.x_max) {
                (true, false) => (o.x_max - r.x_min, Rect { x_min: o.x_max, ..r }),
                (false, true) => (r.x_max - o.x_min, Rect { x_max: o.x_min, ..r }),
                _ => continue,
            };
            if best.is_none_or(|(w, _)| candidate.0 > w) {
                best = Some(candidate);
            }
        }
        match best {
            Some((_, next)) => r = next,
            None => return r,
        }
    }
}

/// Occluder rectangles expressed in the occludee's x domain.
fn occluder_rects(occludee: &BoxUnit, occluder: &BoxUnit, width: f64) -> Vec<Rect> {
    let mut out: Vec<Rect> = occluder.rects().collect();
    if occludee.is_linked() {
        out.extend(occluder.rects().map(|r| r.translate(width, 0.0)));
    }
    out
}

fn trimmed(unit: BoxUnit, occluders: &[Rect], width: f64) -> Option<BoxUnit> {
    let before = unit.unrolled(width);
    let after = trim_x(before, occluders);
    if after == before {
        return Some(unit);
    }
    let boxes = if unit.is_linked() {
        let link = unit.members[0].link_id.clone().unwrap_or_default();
        split_unrolled(&unit.members[0], after, width, MIN_BOX_PX, &link)
    } else if after.width() >= MIN_BOX_PX {
        let mut b = unit.members[0].clone();
        b.set_rect(after);
        vec![b]
    } else {
        vec![]
    };
    (!boxes.is_empty()).then_some(BoxUnit { members: boxes, first: unit.first })
}

/// Removes boxes fully inside a nearer building box and trims the x extent
/// of boxes partially behind one. Multi-source duplicates of the same object
/// (see [`merge_duplicates`]) do not occlude each other.
pub fn refine_buildings(set: &BoxSet, merge_min_iou: f64) -> BoxSet {
    let width = set.width_px as f64;
    let mut done: Vec<BoxUnit> = Vec::new();
    for unit in sorted_units(set) {
        let blockers: Vec<&BoxUnit> = done
            .iter()
            .filter(|b| b.class() == ObjectClass::Building && b.distance().is_some())
            .filter(|b| !duplicates(&unit, b, merge_min_iou))
            .collect();
        if blockers.iter().any(|b| unit.covered_by(b) >= 1.0 - CONTAIN_EPS) {
            continue;
        }
        let rects: Vec<Rect> = blockers.iter().flat_map(|b| occluder_rects(&unit, b, width)).collect();
        let Some(u) = trimmed(unit, &rects, width) else { continue };
        if !blockers.iter().any(|b| u.covered_by(b) >= 1.0 - CONTAIN_EPS) {
            done.push(u);
        }
    }
    with_units(set, done)
}

/// Removes tree boxes covered by more than `threshold` by a nearer surviving
/// tree box, nearest first.
pub fn refine_trees(set: &BoxSet, threshold: f64, merge_min_iou: f64) -> BoxSet {
    let mut kept: Vec<BoxUnit> = Vec::new();
    for unit in sorted_units(set) {
        let occluded = unit.class() == ObjectClass::Tree
            && kept.iter().any(|t| {
                t.class() == ObjectClass::Tree
                    && t.distance().is_some()
                    && !duplicates(&unit, t, merge_min_iou)
                    && unit.covered_by(t) > threshold
            });
        if !occluded {
            kept.push(unit);
        }
    }
    with_units(set, kept)
}

fn merged_ids(u: &BBox) -> Vec<Value> {
    match u.metadata.get("merged_from") {
        Some(Value::Array(ids)) => ids.clone(),
        _ => u.object_id.iter().map(|id| Value::String(id.clone())).collect(),
    }
}

fn merge_metadata(a: &BBox, b: &BBox) -> Metadata {
    let src = |x: &BBox| x.source.clone().unwrap_or_default();
    let mut out = Metadata::new();
    let keys: BTreeSet<&String> = a.metadata.keys().chain(b.metadata.keys()).filter(|k| *k != "merged_from").collect();
    for k in keys {
        match (a.metadata.get(k), b.metadata.get(k)) {
            (Some(x), Some(y)) if x != y => {
                out.insert(format!("{}:{k}", src(a)), x.clone());
                out.insert(format!("{}:{k}", src(b)), y.clone());
            }
            (Some(x), _) | (None, Some(x)) => {
                out.insert(k.clone(), x.clone());
            }
            (None, None) => {}
        }
    }
    let mut ids = merged_ids(a);
    ids.extend(merged_ids(b));
    ids.sort_by(|x, y| x.as_str().cmp(&y.as_str()));
    ids.dedup();
    out.insert("merged_from".into(), Value::Array(ids));
    out
}

fn merge_pair(a: &BoxUnit, b: &BoxUnit) -> BoxUnit {
    let (near, far) = if nearness(a, b) == Ordering::Greater { (b, a) } else { (a, b) };
    let mut all: Vec<&str> = sources(a).union(&sources(b)).copied().collect();
    all.sort_unstable();
    let source = all.join("+");
    let distance = a.distance().into_iter().chain(b.distance()).reduce(f64::min);
    let metadata = merge_metadata(&near.members[0], &far.members[0]);
    let members = near
        .members
        .iter()
        .zip(&far.members)
        .map(|(n, f)| {
            let mut m = n.clone();
            m.set_rect(n.rect().enclosing(&f.rect()));
            m.distance_m = distance;
            m.source = Some(source.clone());
            m.metadata = metadata.clone();
            m
        })
        .collect::<Vec<_>>();
    let mut unit = BoxUnit { members, first: a.first.min(b.first) };
    if unit.is_linked() {
        // halves of a pair must keep identical heights
        let y0 = unit.members.iter().map(|m| m.y_min).fold(f64::INFINITY, f64::min);
        let y1 = unit.members.iter().map(|m| m.y_max).fold(f64::NEG_INFINITY, f64::max);
        for m in &mut unit.members {
            m.y_min = y0;
            m.y_max = y1;
        }
    }
    unit
}

/// Merges same-class boxes from different sources whose IoU is at least
/// `min_iou` into their union, keeping every source's metadata. The most
/// overlapping pair merges first.
pub fn merge_duplicates(set: &BoxSet, min_iou: f64) -> BoxSet {
    let mut units = units_of(set);
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..units.len() {
            for j in i + 1..units.len() {
                if !duplicates(&units[i], &units[j], min_iou) {
                    continue;
                }
                let iou = units[i].iou(&units[j]);
                if best.is_none_or(|(b, _, _)| iou > b) {
                    best = Some((iou, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { break };
        let merged = merge_pair(&units[i], &units[j]);
        units[i] = merged;
        units.remove(j);
    }
    with_units(set, units)
}

/// Removes boxes covered by more than `threshold` by any nearer box whose
/// class is not in `non_blocking`.
pub fn refine_general(set: &BoxSet, threshold: f64, non_blocking: &BTreeSet<ObjectClass>) -> BoxSet {
    let units = sorted_units(set);
    let kept = units
        .iter()
        .enumerate()
        .filter(|(i, u)| {
            !units[..*i]
                .iter()
                .any(|o| !non_blocking.contains(&o.class()) && o.distance().is_some() && u.covered_by(o) > threshold)
        })
        .map(|(_, u)| u.clone())
        .collect();
    with_units(set, kept)
}

/// Runs all rules in order and marks the set as refined.
pub fn refine_pipeline(set: &BoxSet, cfg: &RefineConfig) -> Result<BoxSet, RefineError> {
    if set.stage != Stage::Generated {
        return Err(RefineError::Stage(set.stage));
    }
    set.validate()?;
    let s = refine_buildings(set, cfg.merge_min_iou);
    let s = refine_trees(&s, cfg.tree_overlap, cfg.merge_min_iou);
    let s = merge_duplicates(&s, cfg.merge_min_iou);
    let mut s = refine_general(&s, cfg.general_overlap, &cfg.non_blocking);
    s.stage = Stage::Refined;
    Ok(s)
}
