//! One worker's pass over a batch of images, driven entirely by its event log.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use panobox_core::model::{BBox, BoxSet, ObjectClass, Rect, Stage, EDGE_EPS};
use panobox_core::noise::quantile;
use serde::{Deserialize, Serialize};

use crate::protocol::{
    box_from_extremes, check_rect, link_boxes, unlink_boxes, EditEvent, EditKind, Instruction, ProtocolError,
    TaskStage, WorkBox,
};

#[derive(Debug, Clone, Default, PartialEq)]
struct Progress {
    stage: Option<TaskStage>,
    class_idx: usize,
    adding: bool,
    done: BTreeSet<u64>,
}

/// Boxes of one image being worked on.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageWork {
    pub image_id: String,
    pub width_px: u32,
    pub height_px: u32,
    pub stage: Stage,
    pub boxes: Vec<WorkBox>,
    next_id: u64,
    progress: Progress,
}

impl ImageWork {
    fn new(set: BoxSet) -> Self {
        let boxes: Vec<WorkBox> =
            set.boxes.into_iter().enumerate().map(|(i, bbox)| WorkBox { id: i as u64 + 1, bbox }).collect();
        ImageWork {
            image_id: set.panorama_id,
            width_px: set.width_px,
            height_px: set.height_px,
            stage: set.stage,
            next_id: boxes.len() as u64 + 1,
            boxes,
            progress: Progress { stage: Some(TaskStage::Adjust), ..Default::default() },
        }
    }

    pub fn task_stage(&self) -> TaskStage {
        self.progress.stage.unwrap_or(TaskStage::Done)
    }

    /// Current boxes in id order.
    pub fn boxset(&self) -> BoxSet {
        let mut s = BoxSet::new(self.image_id.clone(), self.width_px, self.height_px, self.stage);
        s.boxes = self.boxes.iter().map(|b| b.bbox.clone()).collect();
        s
    }

    fn get(&self, id: u64) -> Result<&WorkBox, ProtocolError> {
        self.boxes.iter().find(|b| b.id == id).ok_or(ProtocolError::UnknownBox(id))
    }

    fn get_mut(&mut self, id: u64) -> Result<&mut WorkBox, ProtocolError> {
        self.boxes.iter_mut().find(|b| b.id == id).ok_or(ProtocolError::UnknownBox(id))
    }

    /// The box and its linked partner, if any.
    fn unit_of(&self, id: u64) -> Result<Vec<u64>, ProtocolError> {
        let b = self.get(id)?;
        Ok(match &b.bbox.link_id {
            Some(l) => self.boxes.iter().filter(|o| o.bbox.link_id.as_ref() == Some(l)).map(|o| o.id).collect(),
            None => vec![id],
        })
    }

    /// Unfinished units, optionally of one class, leftmost first.
    fn pending_units(&self, class: Option<ObjectClass>) -> Vec<Vec<u64>> {
        let mut groups: BTreeMap<String, Vec<&WorkBox>> = BTreeMap::new();
        for b in &self.boxes {
            if self.progress.done.contains(&b.id) || class.is_some_and(|c| b.bbox.class != c) {
                continue;
            }
            let key = b.bbox.link_id.clone().unwrap_or_else(|| format!("\u{0}{}", b.id));
            groups.entry(key).or_default().push(b);
        }
        let mut units: Vec<(f64, u64, Vec<u64>)> = groups
            .into_values()
            .map(|g| {
                let x = g.iter().map(|b| b.bbox.x_min).fold(f64::INFINITY, f64::min);
                let ids: Vec<u64> = g.iter().map(|b| b.id).collect();
                (x, ids[0], ids)
            })
            .collect();
        units.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        units.into_iter().map(|u| u.2).collect()
    }

    fn active(&self, classes: &[ObjectClass]) -> Option<Vec<u64>> {
        let p = &self.progress;
        match p.stage? {
            TaskStage::Adjust => self.pending_units(None).into_iter().next(),
            TaskStage::AddVerify | TaskStage::FinalVerify if !p.adding => {
                self.pending_units(Some(classes[p.class_idx])).into_iter().next()
            }
            _ => None,
        }
    }

    fn settle(&mut self, classes: &[ObjectClass]) {
        loop {
            let Some(stage) = self.progress.stage else { return };
            match stage {
                TaskStage::Adjust if self.active(classes).is_none() => self.enter(TaskStage::AddVerify),
                TaskStage::AddVerify | TaskStage::FinalVerify => {
                    if self.progress.class_idx >= classes.len() {
                        self.enter(if stage == TaskStage::AddVerify {
                            TaskStage::FinalVerify
                        } else {
                            TaskStage::Done
                        });
                    } else {
                        if !self.progress.adding && self.active(classes).is_none() {
                            self.progress.adding = true;
                        }
                        return;
                    }
                }
                _ => return,
            }
        }
    }

    fn enter(&mut self, stage: TaskStage) {
        self.progress = Progress { stage: (stage != TaskStage::Done).then_some(stage), ..Default::default() };
    }

    fn instruction(&self, classes: &[ObjectClass]) -> Option<Instruction> {
        let stage = self.progress.stage?;
        let image_id = self.image_id.clone();
        Some(match (stage, self.active(classes)) {
            (TaskStage::Adjust, Some(box_ids)) => Instruction::Adjust { image_id, box_ids },
            (_, Some(box_ids)) => {
                Instruction::Verify { image_id, stage, class: classes[self.progress.class_idx], box_ids }
            }
            (_, None) => Instruction::Add { image_id, stage, class: classes[self.progress.class_idx] },
        })
    }

    /// Ids the event may touch: the active unit, or any box of the class
    /// being added to.
    fn check_target(&self, id: u64, classes: &[ObjectClass]) -> Result<(), ProtocolError> {
        let b = self.get(id)?;
        if self.progress.adding {
            let c = classes[self.progress.class_idx];
            return if b.bbox.class == c {
                Ok(())
            } else {
                Err(ProtocolError::OutOfOrder(format!("adding {c}, box {id} is {}", b.bbox.class)))
            };
        }
        let expected = self.active(classes).unwrap_or_default();
        if expected.contains(&id) {
            Ok(())
        } else {
            Err(ProtocolError::NotActive { got: id, expected })
        }
    }

    fn current_add_class(&self, class: ObjectClass, classes: &[ObjectClass]) -> Result<(), ProtocolError> {
        if !self.progress.adding {
            return Err(ProtocolError::OutOfOrder("not in an add phase".into()));
        }
        let c = classes[self.progress.class_idx];
        if c != class {
            return Err(ProtocolError::OutOfOrder(format!("adding {c}, not {class}")));
        }
        Ok(())
    }

    fn dims(&self) -> (f64, f64) {
        (self.width_px as f64, self.height_px as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxAction {
    Verify,
    Delete,
    Create,
}

/// Time spent on one box: from the previous box or class boundary to the
/// event that finished it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedBox {
    pub stage: TaskStage,
    pub action: BoxAction,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub boxes: usize,
    pub median_s: Option<f64>,
}

impl StageTiming {
    fn of<'a>(samples: impl Iterator<Item = &'a TimedBox>) -> Self {
        let mut v: Vec<f64> = samples.map(|t| t.seconds).collect();
        v.sort_by(f64::total_cmp);
        StageTiming { boxes: v.len(), median_s: quantile(&v, 0.5) }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub adjust: StageTiming,
    pub adjust_without_delete: StageTiming,
    pub delete: StageTiming,
    pub add_verify: StageTiming,
    pub final_verify: StageTiming,
}

pub fn timing_report(samples: &[TimedBox]) -> TimingReport {
    let stage = |s: TaskStage| samples.iter().filter(move |t| t.stage == s);
    TimingReport {
        adjust: StageTiming::of(stage(TaskStage::Adjust)),
        adjust_without_delete: StageTiming::of(stage(TaskStage::Adjust).filter(|t| t.action != BoxAction::Delete)),
        delete: StageTiming::of(stage(TaskStage::Adjust).filter(|t| t.action == BoxAction::Delete)),
        add_verify: StageTiming::of(stage(TaskStage::AddVerify)),
        final_verify: StageTiming::of(stage(TaskStage::FinalVerify)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub session_id: String,
    pub worker_id: String,
    pub batch_id: String,
    pub class_order: Vec<ObjectClass>,
    pub images: Vec<ImageWork>,
    pub log: Vec<EditEvent>,
    pub timings: Vec<TimedBox>,
    clock: Option<DateTime<Utc>>,
}

impl Session {
    pub fn new(
        session_id: impl Into<String>,
        worker_id: impl Into<String>,
        batch_id: impl Into<String>,
        sets: Vec<BoxSet>,
        class_order: Vec<ObjectClass>,
    ) -> Self {
        let mut s = Session {
            session_id: session_id.into(),
            worker_id: worker_id.into(),
            batch_id: batch_id.into(),
            images: sets.into_iter().map(ImageWork::new).collect(),
            class_order,
            log: Vec::new(),
            timings: Vec::new(),
            clock: None,
        };
        let classes = s.class_order.clone();
        for w in &mut s.images {
            w.settle(&classes);
        }
        s
    }

    pub fn image(&self, id: &str) -> Option<&ImageWork> {
        self.images.iter().find(|w| w.image_id == id)
    }

    pub fn is_complete(&self) -> bool {
        self.images.iter().all(|w| w.task_stage() == TaskStage::Done)
    }

    pub fn next_item(&self) -> Instruction {
        self.images.iter().find_map(|w| w.instruction(&self.class_order)).unwrap_or(Instruction::Complete)
    }

    /// Applies events atomically: either all are accepted or the session is
    /// unchanged. Events already in the log are skipped when identical.
    /// Returns the newly applied events.
    pub fn apply(&mut self, events: &[EditEvent]) -> Result<Vec<EditEvent>, ProtocolError> {
        let mut next = self.clone();
        let mut fresh = Vec::new();
        for e in events {
            let expected = next.log.len() as u64 + 1;
            if e.seq < expected {
                if e.seq == 0 || next.log[e.seq as usize - 1] != *e {
                    return Err(ProtocolError::Conflict(e.seq));
                }
                continue;
            }
            if e.seq > expected {
                return Err(ProtocolError::Sequence { expected, got: e.seq });
            }
            next.apply_one(e)?;
            next.log.push(e.clone());
            fresh.push(e.clone());
        }
        *self = next;
        Ok(fresh)
    }

    fn apply_one(&mut self, e: &EditEvent) -> Result<(), ProtocolError> {
        if self.log.last().is_some_and(|l| e.timestamp < l.timestamp) {
            return Err(ProtocolError::TimeTravel);
        }
        let idx = self
            .images
            .iter()
            .position(|w| w.image_id == e.image_id)
            .ok_or_else(|| ProtocolError::UnknownImage(e.image_id.clone()))?;
        let current =
            self.images.iter().position(|w| w.task_stage() != TaskStage::Done).ok_or(ProtocolError::Complete)?;
        if idx != current {
            return Err(ProtocolError::OutOfOrder(format!("image `{}` is not the current image", e.image_id)));
        }
        let classes = self.class_order.clone();
        let w = &mut self.images[idx];
        let stage = w.task_stage();
        let (width, height) = w.dims();
        let mut finished = None;
        let mut boundary = false;
        match &e.kind {
            EditKind::Move { box_id, dx, dy } => {
                w.check_target(*box_id, &classes)?;
                let unit = w.unit_of(*box_id)?;
                if unit.len() > 1 && *dx != 0.0 {
                    return Err(ProtocolError::LinkedHorizontalMove);
                }
                for id in &unit {
                    let b = w.get(*id)?;
                    let r = b.bbox.rect().translate(*dx, *dy);
                    check_rect(&r, width, height)?;
                }
                for id in unit {
                    let b = w.get_mut(id)?;
                    let r = b.bbox.rect().translate(*dx, *dy);
                    b.bbox.set_rect(r);
                }
            }
            EditKind::Resize { box_id, rect } => {
                w.check_target(*box_id, &classes)?;
                let r = Rect::new(rect[0], rect[1], rect[2], rect[3]);
                check_rect(&r, width, height)?;
                let unit = w.unit_of(*box_id)?;
                if unit.len() > 1 {
                    let old = w.get(*box_id)?.bbox.rect();
                    let left_edge = old.x_min.abs() <= EDGE_EPS;
                    let keeps = if left_edge { r.x_min.abs() <= EDGE_EPS } else { (r.x_max - width).abs() <= EDGE_EPS };
                    if !keeps {
                        return Err(ProtocolError::LinkDetached(*box_id));
                    }
                }
                for id in unit {
                    let b = w.get_mut(id)?;
                    let mut nr = if id == *box_id { r } else { b.bbox.rect() };
                    nr.y_min = r.y_min;
                    nr.y_max = r.y_max;
                    b.bbox.set_rect(nr);
                }
            }
            EditKind::Delete { box_id } => {
                w.check_target(*box_id, &classes)?;
                let unit = w.unit_of(*box_id)?;
                w.boxes.retain(|b| !unit.contains(&b.id));
                w.progress.done.retain(|id| !unit.contains(id));
                finished = Some(BoxAction::Delete);
            }
            EditKind::Verify { box_id } => {
                w.check_target(*box_id, &classes)?;
                if w.progress.adding {
                    return Err(ProtocolError::OutOfOrder("nothing to verify in an add phase".into()));
                }
                w.progress.done.extend(w.unit_of(*box_id)?);
                finished = Some(BoxAction::Verify);
            }
            EditKind::CreateByExtremes { class, points } => {
                w.current_add_class(*class, &classes)?;
                let [t, b, l, r] = *points;
                let rect = box_from_extremes(t, b, l, r)?;
                check_rect(&rect, width, height)?;
                let id = w.next_id;
                w.next_id += 1;
                w.boxes.push(WorkBox { id, bbox: BBox::new(*class, rect) });
                w.progress.done.insert(id);
                finished = Some(BoxAction::Create);
            }
            EditKind::Link { a, b } => {
                w.check_target(*a, &classes)?;
                for id in [a, b] {
                    if w.get(*id)?.bbox.link_id.is_some() {
                        return Err(ProtocolError::AlreadyLinked(*id));
                    }
                }
                if a == b {
                    return Err(ProtocolError::NotAtEdges);
                }
                let (mut ba, mut bb) = (w.get(*a)?.bbox.clone(), w.get(*b)?.bbox.clone());
                link_boxes(&mut ba, &mut bb, width, &format!("link:{}", e.seq))?;
                w.get_mut(*a)?.bbox = ba;
                w.get_mut(*b)?.bbox = bb;
                if w.progress.adding {
                    w.progress.done.extend([*a, *b]);
                } else {
                    w.progress.done.retain(|id| id != a && id != b);
                }
            }
            EditKind::Unlink { box_id } => {
                w.check_target(*box_id, &classes)?;
                let unit = w.unit_of(*box_id)?;
                let [p, q] = unit[..] else { return Err(ProtocolError::NotLinked(*box_id)) };
                let (mut bp, mut bq) = (w.get(p)?.bbox.clone(), w.get(q)?.bbox.clone());
                unlink_boxes(&mut bp, &mut bq);
                w.get_mut(p)?.bbox = bp;
                w.get_mut(q)?.bbox = bq;
                if !w.progress.adding {
                    w.progress.done.retain(|id| *id != p && *id != q);
                }
            }
            EditKind::FinishClass { class } => {
                w.current_add_class(*class, &classes)?;
                w.progress.class_idx += 1;
                w.progress.adding = false;
                w.progress.done.clear();
                boundary = true;
            }
        }
        w.settle(&classes);
        if let Some(action) = finished {
            if let Some(start) = self.clock {
                let seconds = (e.timestamp - start).num_milliseconds() as f64 / 1000.0;
                self.timings.push(TimedBox { stage, action, seconds });
            }
        }
        if finished.is_some() || boundary || self.clock.is_none() {
            self.clock = Some(e.timestamp);
        }
        Ok(())
    }

    /// Final box sets in batch order.
    pub fn boxsets(&self) -> Vec<BoxSet> {
        self.images.iter().map(ImageWork::boxset).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Point;
    use chrono::Duration;
    use ObjectClass::{Building, Tree};

    fn set(id: &str, boxes: &[(ObjectClass, [f64; 4])]) -> BoxSet {
        let mut s = BoxSet::new(id, 1400, 700, Stage::Refined);
        s.boxes = boxes.iter().map(|(c, r)| BBox::new(*c, Rect::new(r[0], r[1], r[2], r[3]))).collect();
        s
    }

    struct Driver {
        s: Session,
        t: DateTime<Utc>,
    }

    impl Driver {
        fn new(sets: Vec<BoxSet>, classes: Vec<ObjectClass>) -> Self {
            Driver { s: Session::new("s1", "w1", "b1", sets, classes), t: "2021-01-01T00:00:00Z".parse().unwrap() }
        }

        fn ev(&mut self, img: &str, secs: i64, kind: EditKind) -> EditEvent {
            self.t += Duration::seconds(secs);
            EditEvent { seq: self.s.log.len() as u64 + 1, image_id: img.into(), timestamp: self.t, kind }
        }

        fn send(&mut self, img: &str, secs: i64, kind: EditKind) -> Result<(), ProtocolError> {
            let e = self.ev(img, secs, kind);
            self.s.apply(&[e]).map(|_| ())
        }
    }

    #[test]
    fn adjust_goes_left_to_right() {
        let mut d = Driver::new(
            vec![set(
                "a",
                &[(Tree, [300.0, 0.0, 310.0, 9.0]), (Tree, [20.0, 0.0, 30.0, 9.0]), (Tree, [900.0, 0.0, 910.0, 9.0])],
            )],
            vec![Tree],
        );
        let mut seen = Vec::new();
        while let Instruction::Adjust { box_ids, .. } = d.s.next_item() {
            let id = box_ids[0];
            seen.push(d.s.image("a").unwrap().boxes.iter().find(|b| b.id == id).unwrap().bbox.x_min);
            d.send("a", 1, EditKind::Verify { box_id: id }).unwrap();
        }
        assert_eq!(seen, [20.0, 300.0, 900.0]);
    }

    #[test]
    fn full_protocol_walk() {
        let mut d = Driver::new(
            vec![set("a", &[(Tree, [100.0, 0.0, 110.0, 9.0]), (Building, [50.0, 0.0, 90.0, 90.0])])],
            vec![Building, Tree],
        );
        // Adjust: building (x 50) then tree (x 100)
        assert_eq!(d.s.next_item(), Instruction::Adjust { image_id: "a".into(), box_ids: vec![2] });
        assert!(matches!(d.send("a", 1, EditKind::Verify { box_id: 1 }), Err(ProtocolError::NotActive { .. })));
        d.send("a", 1, EditKind::Resize { box_id: 2, rect: [50.0, 0.0, 95.0, 90.0] }).unwrap();
        d.send("a", 1, EditKind::Verify { box_id: 2 }).unwrap();
        d.send("a", 1, EditKind::Delete { box_id: 1 }).unwrap();
        // AddVerify: building verify, then add mode
        assert_eq!(
            d.s.next_item(),
            Instruction::Verify {
                image_id: "a".into(),
                stage: TaskStage::AddVerify,
                class: Building,
                box_ids: vec![2]
            }
        );
        d.send("a", 1, EditKind::Verify { box_id: 2 }).unwrap();
        assert_eq!(
            d.s.next_item(),
            Instruction::Add { image_id: "a".into(), stage: TaskStage::AddVerify, class: Building }
        );
        let pts = [Point::new(5.0, 1.0), Point::new(5.0, 9.0), Point::new(0.0, 5.0), Point::new(10.0, 5.0)];
        assert!(matches!(
            d.send("a", 1, EditKind::CreateByExtremes { class: Tree, points: pts }),
            Err(ProtocolError::OutOfOrder(_))
        ));
        d.send("a", 1, EditKind::FinishClass { class: Building }).unwrap();
        // tree has no boxes left: straight to add mode
        assert_eq!(
            d.s.next_item(),
            Instruction::Add { image_id: "a".into(), stage: TaskStage::AddVerify, class: Tree }
        );
        d.send("a", 1, EditKind::CreateByExtremes { class: Tree, points: pts }).unwrap();
        d.send("a", 1, EditKind::FinishClass { class: Tree }).unwrap();
        // FinalVerify re-verifies both boxes
        assert!(matches!(d.s.next_item(), Instruction::Verify { stage: TaskStage::FinalVerify, class: Building, .. }));
        d.send("a", 1, EditKind::Verify { box_id: 2 }).unwrap();
        d.send("a", 1, EditKind::FinishClass { class: Building }).unwrap();
        assert!(matches!(d.s.next_item(), Instruction::Verify { class: Tree, ref box_ids, .. } if box_ids == &[3]));
        d.send("a", 1, EditKind::Verify { box_id: 3 }).unwrap();
        d.send("a", 1, EditKind::FinishClass { class: Tree }).unwrap();
        assert_eq!(d.s.next_item(), Instruction::Complete);
        assert!(d.s.is_complete());
        assert_eq!(d.send("a", 1, EditKind::Verify { box_id: 3 }), Err(ProtocolError::Complete));
        let out = d.s.boxsets();
        assert_eq!(out[0].boxes.len(), 2);
        assert_eq!(out[0].boxes[1].rect(), Rect::new(0.0, 1.0, 10.0, 9.0));
    }

    #[test]
    fn images_are_done_in_order() {
        let mut d = Driver::new(vec![set("a", &[]), set("b", &[(Tree, [0.0, 0.0, 5.0, 5.0])])], vec![Tree]);
        assert!(matches!(d.send("b", 1, EditKind::Verify { box_id: 1 }), Err(ProtocolError::OutOfOrder(_))));
        assert!(matches!(d.send("zz", 1, EditKind::Verify { box_id: 1 }), Err(ProtocolError::UnknownImage(_))));
    }

    #[test]
    fn sequence_rules() {
        let mut d =
            Driver::new(vec![set("a", &[(Tree, [0.0, 0.0, 5.0, 5.0]), (Tree, [10.0, 0.0, 15.0, 5.0])])], vec![Tree]);
        let e1 = d.ev("a", 1, EditKind::Move { box_id: 1, dx: 1.0, dy: 0.0 });
        assert_eq!(d.s.apply(std::slice::from_ref(&e1)).unwrap().len(), 1);
        // retry of the same event is a no-op
        assert_eq!(d.s.apply(std::slice::from_ref(&e1)).unwrap().len(), 0);
        let mut other = e1.clone();
        other.kind = EditKind::Verify { box_id: 1 };
        assert_eq!(d.s.apply(&[other]), Err(ProtocolError::Conflict(1)));
        let mut gap = d.ev("a", 1, EditKind::Verify { box_id: 1 });
        gap.seq = 5;
        assert_eq!(d.s.apply(&[gap]), Err(ProtocolError::Sequence { expected: 2, got: 5 }));
        let mut early = d.ev("a", 0, EditKind::Verify { box_id: 1 });
        early.timestamp = "2020-01-01T00:00:00Z".parse().unwrap();
        assert_eq!(d.s.apply(&[early]), Err(ProtocolError::TimeTravel));
        // a failing batch leaves no trace
        let ok = d.ev("a", 1, EditKind::Verify { box_id: 1 });
        let mut bad = d.ev("a", 1, EditKind::Verify { box_id: 99 });
        bad.seq = 3;
        let before = d.s.clone();
        assert_eq!(d.s.apply(&[ok, bad]), Err(ProtocolError::UnknownBox(99)));
        assert_eq!(d.s, before);
    }

    #[test]
    fn linked_pairs_move_together() {
        let mut d = Driver::new(
            vec![set("a", &[(Tree, [0.0, 100.0, 40.0, 300.0]), (Tree, [1360.0, 120.0, 1400.0, 310.0])])],
            vec![Tree],
        );
        d.send("a", 1, EditKind::Link { a: 1, b: 2 }).unwrap();
        assert_eq!(d.s.next_item(), Instruction::Adjust { image_id: "a".into(), box_ids: vec![1, 2] });
        let ys = |d: &Driver| d.s.images[0].boxes.iter().map(|b| (b.bbox.y_min, b.bbox.y_max)).collect::<Vec<_>>();
        assert_eq!(ys(&d), [(100.0, 310.0), (100.0, 310.0)]);
        assert_eq!(
            d.send("a", 1, EditKind::Move { box_id: 2, dx: 3.0, dy: 0.0 }),
            Err(ProtocolError::LinkedHorizontalMove)
        );
        d.send("a", 1, EditKind::Move { box_id: 2, dx: 0.0, dy: -10.0 }).unwrap();
        assert_eq!(ys(&d), [(90.0, 300.0), (90.0, 300.0)]);
        d.send("a", 1, EditKind::Resize { box_id: 1, rect: [0.0, 80.0, 50.0, 290.0] }).unwrap();
        assert_eq!(ys(&d), [(80.0, 290.0), (80.0, 290.0)]);
        assert_eq!(
            d.send("a", 1, EditKind::Resize { box_id: 2, rect: [1300.0, 80.0, 1390.0, 290.0] }),
            Err(ProtocolError::LinkDetached(2))
        );
        d.s.boxsets()[0].validate().unwrap();
        d.send("a", 1, EditKind::Unlink { box_id: 2 }).unwrap();
        assert_eq!(d.s.next_item(), Instruction::Adjust { image_id: "a".into(), box_ids: vec![1] });
        d.send("a", 1, EditKind::Verify { box_id: 1 }).unwrap();
        d.send("a", 1, EditKind::Link { a: 2, b: 1 }).unwrap();
        // the re-linked pair needs verifying again
        assert_eq!(d.s.next_item(), Instruction::Adjust { image_id: "a".into(), box_ids: vec![1, 2] });
        d.send("a", 1, EditKind::Delete { box_id: 1 }).unwrap();
        assert!(d.s.images[0].boxes.is_empty());
    }

    #[test]
    fn timing_medians() {
        let mut d = Driver::new(
            vec![set(
                "a",
                &[
                    (Tree, [0.0, 0.0, 5.0, 5.0]),
                    (Tree, [10.0, 0.0, 15.0, 5.0]),
                    (Tree, [20.0, 0.0, 25.0, 5.0]),
                    (Tree, [30.0, 0.0, 35.0, 5.0]),
                ],
            )],
            vec![Tree],
        );
        // clock starts at the first event (a move at t = 2)
        d.send("a", 2, EditKind::Move { box_id: 1, dx: 1.0, dy: 0.0 }).unwrap();
        d.send("a", 8, EditKind::Verify { box_id: 1 }).unwrap(); // 8
        d.send("a", 3, EditKind::Delete { box_id: 2 }).unwrap(); // 3 (delete)
        d.send("a", 4, EditKind::Move { box_id: 3, dx: 1.0, dy: 0.0 }).unwrap();
        d.send("a", 8, EditKind::Verify { box_id: 3 }).unwrap(); // 12
        d.send("a", 1, EditKind::Delete { box_id: 4 }).unwrap(); // 1 (delete)
        d.send("a", 5, EditKind::Verify { box_id: 1 }).unwrap(); // 5 (add/verify)
        d.send("a", 7, EditKind::Verify { box_id: 3 }).unwrap(); // 7
        d.send("a", 2, EditKind::FinishClass { class: Tree }).unwrap();
        let r = timing_report(&d.s.timings);
        assert_eq!(r.adjust.boxes, 4);
        assert_eq!(r.adjust.median_s, Some(5.5)); // {1, 3, 8, 12}
        assert_eq!(r.adjust_without_delete.median_s, Some(10.0));
        assert_eq!(r.delete.median_s, Some(2.0));
        assert_eq!(r.add_verify.median_s, Some(6.0));
        assert_eq!(r.final_verify, StageTiming::default());
    }

    #[test]
    fn replay_reconstructs_state() {
        let sets = vec![set("a", &[(Tree, [0.0, 0.0, 5.0, 5.0]), (Building, [100.0, 10.0, 300.0, 200.0])])];
        let mut d = Driver::new(sets.clone(), vec![Tree, Building]);
        d.send("a", 1, EditKind::Move { box_id: 1, dx: 2.5, dy: 1.0 }).unwrap();
        d.send("a", 1, EditKind::Verify { box_id: 1 }).unwrap();
        d.send("a", 1, EditKind::Resize { box_id: 2, rect: [90.0, 10.0, 300.0, 210.0] }).unwrap();
        d.send("a", 1, EditKind::Verify { box_id: 2 }).unwrap();
        let log: Vec<EditEvent> =
            d.s.log.iter().map(|e| serde_json::from_str(&serde_json::to_string(e).unwrap()).unwrap()).collect();
        let mut r = Session::new("s1", "w1", "b1", sets, vec![Tree, Building]);
        r.apply(&log).unwrap();
        assert_eq!(r, d.s);
    }
}
