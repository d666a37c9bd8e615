//! Evaluation metrics: support-weighted F-score over image labels, COCO-style
//! average precision and recall, and median-IoU scoring of worker boxes
//! against gold boxes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BoxSet, ObjectClass, Rect};
use crate::noise::{match_rects, quantile, rect_iou, MatchCost};
use crate::units::units_of;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no images to evaluate")]
    Empty,
    #[error("image `{0}` is missing from one side")]
    Unaligned(String),
    #[error("gold set has no boxes")]
    EmptyGold,
    #[error("worker and gold sets belong to different panoramas")]
    PanoramaMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassF {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FScoreReport {
    pub per_class: BTreeMap<ObjectClass, ClassF>,
    /// Mean of per-class F weighted by support; classes without support excluded.
    pub weighted: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Image-level multi-label F-score per class and support-weighted mean.
pub fn weighted_fscore(
    pred: &BTreeMap<String, BTreeSet<ObjectClass>>,
    truth: &BTreeMap<String, BTreeSet<ObjectClass>>,
) -> Result<FScoreReport, MetricsError> {
    if truth.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(k) =
        truth.keys().find(|k| !pred.contains_key(*k)).or_else(|| pred.keys().find(|k| !truth.contains_key(*k)))
    {
        return Err(MetricsError::Unaligned(k.clone()));
    }
    let mut per_class = BTreeMap::new();
    for c in ObjectClass::ALL {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (img, t) in truth {
            match (pred[img].contains(&c), t.contains(&c)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let (p, r) = (ratio(tp, tp + fp), ratio(tp, tp + fn_));
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        per_class.insert(c, ClassF { precision: p, recall: r, f, support: tp + fn_ });
    }
    let total: usize = per_class.values().map(|c| c.support).sum();
    let weighted =
        if total == 0 { 0.0 } else { per_class.values().map(|c| c.support as f64 * c.f).sum::<f64>() / total as f64 };
    Ok(FScoreReport { per_class, weighted })
}

/// One scored detection in image pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub class: ObjectClass,
    pub rect: Rect,
    pub score: f64,
}

pub const MAX_DETS_PER_IMAGE: usize = 100;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

const RECALL_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoEval {
    pub thresholds: Vec<f64>,
    /// AP per class, averaged over thresholds.
    pub per_class_ap: BTreeMap<ObjectClass, f64>,
    /// AP per class per threshold, in threshold order.
    pub per_class_ap_by_threshold: BTreeMap<ObjectClass, Vec<f64>>,
    /// Recall per class, averaged over thresholds.
    pub per_class_recall: BTreeMap<ObjectClass, f64>,
    pub map: f64,
    /// AP at the threshold closest to 0.5, averaged over classes.
    pub map50: f64,
    pub recall: f64,
}

/// Per class and threshold, the score-ordered TP flags of all detections
/// and the number of truth boxes.
struct ClassRun {
    scores_tp: Vec<(f64, bool)>,
    n_truth: usize,
}

fn truth_by_image(truth: &[BoxSet]) -> BTreeMap<&str, Vec<(ObjectClass, Rect)>> {
    truth
        .iter()
        .map(|s| {
            let w = s.width_px as f64;
            (s.panorama_id.as_str(), units_of(s).iter().map(|u| (u.class(), u.unrolled(w))).collect())
        })
        .collect()
}

/// Top detections per image by descending score, stable on input order.
fn top_detections(dets: &[Detection]) -> BTreeMap<&str, Vec<&Detection>> {
    let mut by_img: BTreeMap<&str, Vec<&Detection>> = BTreeMap::new();
    for d in dets {
        by_img.entry(&d.image_id).or_default().push(d);
    }
    for v in by_img.values_mut() {
        v.sort_by(|a, b| b.score.total_cmp(&a.score));
        v.truncate(MAX_DETS_PER_IMAGE);
    }
    by_img
}

/// Greedy matching in score order: each detection takes the unmatched
/// truth of highest IoU at or above `thr`.
fn greedy_tp(dets: &[&Detection], truths: &[Rect], thr: f64) -> Vec<bool> {
    let mut used = vec![false; truths.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(f64, usize)> = None;
            for (j, t) in truths.iter().enumerate() {
                if used[j] {
                    continue;
                }
                let iou = rect_iou(&d.rect, t).unwrap_or(0.0);
                if iou >= thr && best.is_none_or(|(b, _)| iou > b) {
                    best = Some((iou, j));
                }
            }
            if let Some((_, j)) = best {
                used[j] = true;
            }
            best.is_some()
        })
        .collect()
}

/// 101-point interpolated AP from score-ordered TP flags.
fn average_precision(run: &ClassRun) -> (f64, f64) {
    let mut v = run.scores_tp.clone();
    v.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n = run.n_truth as f64;
    let mut tp = 0.0;
    let mut precision = Vec::with_capacity(v.len());
    let mut recall = Vec::with_capacity(v.len());
    for (k, (_, hit)) in v.iter().enumerate() {
        tp += f64::from(u8::from(*hit));
        precision.push(tp / (k + 1) as f64);
        recall.push(tp / n);
    }
    for i in (1..precision.len()).rev() {
        precision[i - 1] = precision[i - 1].max(precision[i]);
    }
    let ap = (0..RECALL_POINTS)
        .map(|i| {
            let r = i as f64 / (RECALL_POINTS - 1) as f64;
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum::<f64>()
        / RECALL_POINTS as f64;
    (ap, recall.last().copied().unwrap_or(0.0))
}

/// COCO-style AP and recall at up to 100 detections per image. Classes
/// without truth boxes are excluded from the means. Seam-linked truth
/// pairs count as one unrolled box.
pub fn coco_map(dets: &[Detection], truth: &[BoxSet], thresholds: &[f64]) -> CocoEval {
    let gt = truth_by_image(truth);
    let top = top_detections(dets);
    let classes: BTreeSet<ObjectClass> = gt.values().flatten().map(|(c, _)| *c).collect();
    let mut per_class_ap = BTreeMap::new();
    let mut per_class_ap_by_threshold = BTreeMap::new();
    let mut per_class_recall = BTreeMap::new();
    for &c in &classes {
        let mut aps = Vec::new();
        let mut recalls = Vec::new();
        for &thr in thresholds {
            let mut run = ClassRun { scores_tp: vec![], n_truth: 0 };
            let images: BTreeSet<&str> = gt.keys().copied().chain(top.keys().copied()).collect();
            for img in images {
                let truths: Vec<Rect> =
                    gt.get(img).into_iter().flatten().filter(|(k, _)| *k == c).map(|(_, r)| *r).collect();
                let ds: Vec<&Detection> =
                    top.get(img).into_iter().flatten().copied().filter(|d| d.class == c).collect();
                run.n_truth += truths.len();
                let hits = greedy_tp(&ds, &truths, thr);
                run.scores_tp.extend(ds.iter().zip(hits).map(|(d, h)| (d.score, h)));
            }
            let (ap, rc) = average_precision(&run);
            aps.push(ap);
            recalls.push(rc);
        }
        per_class_ap.insert(c, mean(&aps));
        per_class_recall.insert(c, mean(&recalls));
        per_class_ap_by_threshold.insert(c, aps);
    }
    let i50 =
        thresholds.iter().enumerate().min_by(|a, b| (a.1 - 0.5).abs().total_cmp(&(b.1 - 0.5).abs())).map(|(i, _)| i);
    let map50 = i50.map_or(0.0, |i| mean(&per_class_ap_by_threshold.values().map(|v| v[i]).collect::<Vec<_>>()));
    CocoEval {
        thresholds: thresholds.to_vec(),
        map: mean(&per_class_ap.values().copied().collect::<Vec<_>>()),
        recall: mean(&per_class_recall.values().copied().collect::<Vec<_>>()),
        per_class_ap,
        per_class_ap_by_threshold,
        per_class_recall,
        map50,
    }
}

/// Mean recall over classes and IoU 0.50:0.95 with at most 100 detections
/// per image.
pub fn recall_at_100(dets: &[Detection], truth: &[BoxSet]) -> f64 {
    coco_map(dets, truth, &coco_thresholds()).recall
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub const DEFAULT_GOLD_THRESHOLD: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldScore {
    pub median_iou: f64,
    /// IoU of each gold box with its matched worker box, 0 when unmatched.
    pub samples: Vec<f64>,
    pub pass: bool,
}

/// Median IoU of a worker's boxes against the gold boxes of the same
/// panorama, matched per class by GIoU. Gold boxes left unmatched count
/// as IoU 0.
pub fn gold_score(worker: &BoxSet, gold: &BoxSet, threshold: f64) -> Result<GoldScore, MetricsError> {
    if worker.panorama_id != gold.panorama_id {
        return Err(MetricsError::PanoramaMismatch);
    }
    let inst = |s: &BoxSet| {
        let w = s.width_px as f64;
        let mut m: BTreeMap<ObjectClass, Vec<Rect>> = BTreeMap::new();
        for u in units_of(s) {
            m.entry(u.class()).or_default().push(u.unrolled(w));
        }
        m
    };
    let (wk, gd) = (inst(worker), inst(gold));
    if gd.is_empty() {
        return Err(MetricsError::EmptyGold);
    }
    let mut samples = Vec::new();
    for (c, g) in &gd {
        let w = wk.get(c).map(Vec::as_slice).unwrap_or(&[]);
        let pairs = match_rects(w, g, MatchCost::Giou);
        samples.extend(pairs.iter().map(|&(i, j)| rect_iou(&w[i], &g[j]).unwrap_or(0.0)));
        samples.extend(std::iter::repeat_n(0.0, g.len() - pairs.len()));
    }
    samples.sort_by(f64::total_cmp);
    let median_iou = quantile(&samples, 0.5).expect("gold is non-empty");
    Ok(GoldScore { median_iou, samples, pass: median_iou >= threshold })
}
