//! Batch assignment, session bookkeeping, gold scoring and reports.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use panobox_core::config::{GoldConfig, ServiceConfig};
use panobox_core::metrics::gold_score;
use panobox_core::model::{BBox, BoxSet, Stage};
use panobox_core::units::units_of;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{public_stage, EditEvent, Instruction, ProtocolError, WorkBox};
use crate::session::{timing_report, Session, TimedBox, TimingReport};
use crate::store::{SessionHeader, Store, StoreError};

/// An image the service can hand out.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    /// Boxes shown to workers, usually the refined generated set.
    pub set: BoxSet,
    /// Expert boxes; images with gold are only used as gold.
    pub gold: Option<BoxSet>,
    pub neighbourhood: Option<String>,
    pub image_path: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("session is not complete")]
    Incomplete,
    #[error("session is already finalized")]
    Finalized,
    #[error("no batch available")]
    NoWork,
    #[error("worker `{0}` has not passed qualification")]
    NotQualified(String),
    #[error("storage: {0}")]
    Store(#[from] StoreError),
    #[error("invalid service setup: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
}

/// Agreement of one worker with the expert on one gold image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldEvaluation {
    pub image_id: String,
    pub neighbourhood: Option<String>,
    pub expert_instances: usize,
    pub worker_instances: usize,
    pub median_iou: f64,
}

/// Server-side record of a finalized session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub session_id: String,
    pub worker_id: String,
    pub decision: Decision,
    pub gold: Vec<GoldEvaluation>,
    pub timings: Vec<TimedBox>,
}

/// What the client learns when a session is finalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalizeView {
    pub session_id: String,
    pub decision: Decision,
    pub timing: TimingReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchView {
    pub session_id: String,
    pub batch_id: String,
    pub worker_id: String,
    pub images: Vec<String>,
    pub next: Instruction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedImage {
    pub content_type: String,
    pub data_base64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageView {
    pub image_id: String,
    pub width_px: u32,
    pub height_px: u32,
    pub stage: Stage,
    pub boxes: Vec<WorkBox>,
    pub image: Option<EncodedImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventsResult {
    pub applied: usize,
    pub next: Instruction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualificationResult {
    pub passed: bool,
    pub median_iou: f64,
    /// The reference boxes, so a failed worker can compare.
    pub reference: Vec<BBox>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NeighbourhoodRow {
    pub neighbourhood: String,
    /// Gold evaluations in this neighbourhood.
    pub images: usize,
    pub expert_instances: usize,
    pub worker_instances: usize,
    /// Mean over evaluations of the per-image median IoU.
    pub median_iou: Option<f64>,
    pub expert_per_image: Option<f64>,
    pub worker_per_image: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdsourcingReport {
    pub rows: Vec<NeighbourhoodRow>,
    pub all: NeighbourhoodRow,
    pub accepted: usize,
    pub rejected: usize,
    pub timing: TimingReport,
}

fn row(name: &str, evals: &[&GoldEvaluation]) -> NeighbourhoodRow {
    let n = evals.len();
    let per = |x: usize| (n > 0).then(|| x as f64 / n as f64);
    let expert = evals.iter().map(|e| e.expert_instances).sum();
    let worker = evals.iter().map(|e| e.worker_instances).sum();
    NeighbourhoodRow {
        neighbourhood: name.into(),
        images: n,
        expert_instances: expert,
        worker_instances: worker,
        median_iou: (n > 0).then(|| evals.iter().map(|e| e.median_iou).sum::<f64>() / n as f64),
        expert_per_image: per(expert),
        worker_per_image: per(worker),
    }
}

pub fn crowdsourcing_report(outcomes: &[Outcome]) -> CrowdsourcingReport {
    let mut by: BTreeMap<String, Vec<&GoldEvaluation>> = BTreeMap::new();
    for e in outcomes.iter().flat_map(|o| &o.gold) {
        by.entry(e.neighbourhood.clone().unwrap_or_else(|| "unknown".into())).or_default().push(e);
    }
    let all: Vec<&GoldEvaluation> = outcomes.iter().flat_map(|o| &o.gold).collect();
    let timings: Vec<TimedBox> = outcomes.iter().flat_map(|o| o.timings.iter().copied()).collect();
    CrowdsourcingReport {
        rows: by.iter().map(|(k, v)| row(k, v)).collect(),
        all: row("all", &all),
        accepted: outcomes.iter().filter(|o| o.decision == Decision::Accept).count(),
        rejected: outcomes.iter().filter(|o| o.decision == Decision::Reject).count(),
        timing: timing_report(&timings),
    }
}

struct Entry {
    session: Session,
    gold: Vec<String>,
    outcome: Option<Outcome>,
}

#[derive(Default)]
struct Registry {
    counter: u64,
    /// Worker → open session.
    open: BTreeMap<String, String>,
    /// Images held by open sessions.
    held: BTreeSet<String>,
    qualified: BTreeSet<String>,
    outcomes: Vec<Outcome>,
}

pub struct Service {
    cfg: ServiceConfig,
    gold_cfg: GoldConfig,
    seed: u64,
    images: BTreeMap<String, ImageRecord>,
    qualification_image: Option<String>,
    store: Option<Store>,
    registry: Mutex<Registry>,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Entry>>>>,
    published: RwLock<BTreeMap<String, Arc<BoxSet>>>,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Service {
    /// Builds the service and, when a store is given, replays everything
    /// it holds.
    pub fn new(
        cfg: ServiceConfig,
        gold_cfg: GoldConfig,
        images: Vec<ImageRecord>,
        qualification_image: Option<String>,
        store: Option<Store>,
        seed: u64,
    ) -> Result<Self, ServiceError> {
        let images: BTreeMap<String, ImageRecord> =
            images.into_iter().map(|r| (r.set.panorama_id.clone(), r)).collect();
        if let Some(q) = &qualification_image {
            if images.get(q).and_then(|r| r.gold.as_ref()).is_none() {
                return Err(ServiceError::Setup(format!("qualification image `{q}` has no gold boxes")));
            }
        }
        if cfg.class_order.is_empty() {
            return Err(ServiceError::Setup("class order is empty".into()));
        }
        let svc = Service {
            cfg,
            gold_cfg,
            seed,
            images,
            qualification_image,
            store,
            registry: Mutex::new(Registry::default()),
            sessions: RwLock::new(BTreeMap::new()),
            published: RwLock::new(BTreeMap::new()),
        };
        svc.recover()?;
        Ok(svc)
    }

    fn recover(&self) -> Result<(), ServiceError> {
        let Some(store) = &self.store else { return Ok(()) };
        let mut reg = lock(&self.registry);
        reg.qualified = store.load_qualified()?;
        let mut published = self.published.write().unwrap_or_else(|e| e.into_inner());
        for s in store.load_published()? {
            published.insert(s.panorama_id.clone(), Arc::new(s));
        }
        let mut sessions = self.sessions.write().unwrap_or_else(|e| e.into_inner());
        for sid in store.session_ids()? {
            let st = store.load_session(&sid)?;
            let h = st.header;
            let mut session =
                Session::new(h.session_id.clone(), h.worker_id.clone(), h.batch_id.clone(), st.initial, h.class_order);
            session.apply(&st.events)?;
            reg.counter = reg.counter.max(h.counter + 1);
            match &st.outcome {
                Some(o) => reg.outcomes.push(o.clone()),
                None => {
                    reg.open.insert(h.worker_id.clone(), sid.clone());
                    reg.held.extend(h.images.iter().filter(|i| !h.gold.contains(i)).cloned());
                }
            }
            sessions.insert(sid, Arc::new(Mutex::new(Entry { session, gold: h.gold, outcome: st.outcome })));
        }
        Ok(())
    }

    fn entry(&self, sid: &str) -> Result<Arc<Mutex<Entry>>, ServiceError> {
        let sessions = self.sessions.read().unwrap_or_else(|e| e.into_inner());
        sessions.get(sid).cloned().ok_or_else(|| ServiceError::NotFound(format!("session {sid}")))
    }

    fn is_published(&self, id: &str) -> bool {
        self.published.read().unwrap_or_else(|e| e.into_inner()).contains_key(id)
    }

    fn gold_ids(&self) -> Vec<&String> {
        self.images
            .iter()
            .filter(|(id, r)| r.gold.is_some() && Some(*id) != self.qualification_image.as_ref())
            .map(|(id, _)| id)
            .collect()
    }

    /// The worker's open session, or a new batch of unpublished images plus
    /// gold images in shuffled order.
    pub fn next_batch(&self, worker: &str) -> Result<BatchView, ServiceError> {
        let mut reg = lock(&self.registry);
        if let Some(sid) = reg.open.get(worker).cloned() {
            drop(reg);
            return self.batch_view(&sid);
        }
        if self.qualification_image.is_some() && !reg.qualified.contains(worker) {
            return Err(ServiceError::NotQualified(worker.into()));
        }
        let regular = self.cfg.batch_size - self.cfg.gold_per_batch;
        let picks: Vec<String> = self
            .images
            .iter()
            .filter(|(id, r)| r.gold.is_none() && !reg.held.contains(*id) && !self.is_published(id))
            .map(|(id, _)| id.clone())
            .take(regular)
            .collect();
        let golds = self.gold_ids();
        if picks.len() < regular || (self.cfg.gold_per_batch > 0 && golds.len() < self.cfg.gold_per_batch) {
            return Err(ServiceError::NoWork);
        }
        let counter = reg.counter;
        let gold: Vec<String> = (0..self.cfg.gold_per_batch)
            .map(|k| golds[(counter as usize * self.cfg.gold_per_batch + k) % golds.len()].clone())
            .collect();
        let mut order: Vec<String> = picks.iter().chain(&gold).cloned().collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(counter)));

        let sid = format!("s{counter:06}");
        let header = SessionHeader {
            session_id: sid.clone(),
            worker_id: worker.into(),
            batch_id: format!("b{counter:06}"),
            counter,
            images: order.clone(),
            gold: gold.clone(),
            class_order: self.cfg.class_order.clone(),
        };
        let initial: Vec<BoxSet> = order
            .iter()
            .map(|id| {
                let mut s = self.images[id].set.clone();
                s.stage = public_stage(s.stage);
                s
            })
            .collect();
        if let Some(store) = &self.store {
            store.create_session(&header, &initial)?;
        }
        let session = Session::new(sid.clone(), worker, header.batch_id.clone(), initial, header.class_order);
        reg.counter += 1;
        reg.open.insert(worker.into(), sid.clone());
        reg.held.extend(picks);
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(sid.clone(), Arc::new(Mutex::new(Entry { session, gold, outcome: None })));
        drop(reg);
        self.batch_view(&sid)
    }

    fn batch_view(&self, sid: &str) -> Result<BatchView, ServiceError> {
        let e = self.entry(sid)?;
        let e = lock(&e);
        let s = &e.session;
        Ok(BatchView {
            session_id: s.session_id.clone(),
            batch_id: s.batch_id.clone(),
            worker_id: s.worker_id.clone(),
            images: s.images.iter().map(|w| w.image_id.clone()).collect(),
            next: s.next_item(),
        })
    }

    pub fn next_item(&self, sid: &str) -> Result<Instruction, ServiceError> {
        let e = self.entry(sid)?;
        let next = lock(&e).session.next_item();
        Ok(next)
    }

    pub fn post_events(&self, sid: &str, events: &[EditEvent]) -> Result<EventsResult, ServiceError> {
        let entry = self.entry(sid)?;
        let mut e = lock(&entry);
        if e.outcome.is_some() {
            return Err(ServiceError::Finalized);
        }
        let mut trial = e.session.clone();
        let fresh = trial.apply(events)?;
        if let Some(store) = &self.store {
            store.append_events(sid, &fresh)?;
            let every = self.cfg.snapshot_every.max(1) as u64;
            let (before, after) = (e.session.log.len() as u64 / every, trial.log.len() as u64 / every);
            if after > before {
                store.snapshot(sid, trial.log.len() as u64, &trial.boxsets())?;
            }
        }
        e.session = trial;
        Ok(EventsResult { applied: fresh.len(), next: e.session.next_item() })
    }

    pub fn finalize(&self, sid: &str) -> Result<FinalizeView, ServiceError> {
        let entry = self.entry(sid)?;
        let mut e = lock(&entry);
        if let Some(o) = &e.outcome {
            return Ok(FinalizeView {
                session_id: sid.into(),
                decision: o.decision,
                timing: timing_report(&o.timings),
            });
        }
        if !e.session.is_complete() {
            return Err(ServiceError::Incomplete);
        }
        let sets = e.session.boxsets();
        let mut gold = Vec::new();
        let mut pass = true;
        for id in &e.gold {
            let rec = &self.images[id];
            let truth = rec.gold.as_ref().expect("gold images have gold boxes");
            let worker = sets.iter().find(|s| &s.panorama_id == id).expect("gold image is in the batch");
            let score = gold_score(worker, truth, self.gold_cfg.threshold)
                .map_err(|err| ServiceError::Setup(format!("gold image `{id}`: {err}")))?;
            pass &= score.pass;
            gold.push(GoldEvaluation {
                image_id: id.clone(),
                neighbourhood: rec.neighbourhood.clone(),
                expert_instances: units_of(truth).len(),
                worker_instances: units_of(worker).len(),
                median_iou: score.median_iou,
            });
        }
        let decision = if pass { Decision::Accept } else { Decision::Reject };
        let work: Vec<BoxSet> = sets.into_iter().filter(|s| !e.gold.contains(&s.panorama_id)).collect();
        let outcome = Outcome {
            session_id: sid.into(),
            worker_id: e.session.worker_id.clone(),
            decision,
            gold,
            timings: e.session.timings.clone(),
        };
        let mut published = Vec::new();
        if let Some(store) = &self.store {
            store.snapshot(sid, e.session.log.len() as u64, &e.session.boxsets())?;
        }
        match decision {
            Decision::Accept => {
                for mut s in work {
                    s.advance(Stage::HumanVerified).map_err(|err| ServiceError::Setup(err.to_string()))?;
                    if let Some(store) = &self.store {
                        store.publish(&s)?;
                    }
                    published.push(s);
                }
            }
            Decision::Reject => {
                if let Some(store) = &self.store {
                    store.reject(sid, &work)?;
                }
            }
        }
        if let Some(store) = &self.store {
            store.write_outcome(sid, &outcome)?;
        }
        {
            let mut p = self.published.write().unwrap_or_else(|e| e.into_inner());
            for s in published {
                p.insert(s.panorama_id.clone(), Arc::new(s));
            }
        }
        let mut reg = lock(&self.registry);
        reg.open.remove(&e.session.worker_id);
        for w in &e.session.images {
            reg.held.remove(&w.image_id);
        }
        reg.outcomes.push(outcome.clone());
        e.outcome = Some(outcome);
        Ok(FinalizeView { session_id: sid.into(), decision, timing: timing_report(&e.session.timings) })
    }

    /// Scores a worker on the qualification image and records a pass.
    pub fn qualify(&self, worker: &str, boxes: Vec<BBox>) -> Result<QualificationResult, ServiceError> {
        let q = self.qualification_image.as_ref().ok_or_else(|| ServiceError::NotFound("qualification".into()))?;
        let truth = self.images[q].gold.as_ref().expect("checked at startup");
        let mut set = BoxSet::new(q.clone(), truth.width_px, truth.height_px, Stage::HumanVerified);
        set.boxes = boxes;
        set.validate().map_err(|e| ServiceError::Protocol(ProtocolError::OutOfOrder(e.to_string())))?;
        let score = gold_score(&set, truth, self.gold_cfg.qualification_threshold)
            .map_err(|e| ServiceError::Setup(e.to_string()))?;
        if score.pass {
            let mut reg = lock(&self.registry);
            if reg.qualified.insert(worker.into()) {
                if let Some(store) = &self.store {
                    store.save_qualified(&reg.qualified)?;
                }
            }
        }
        Ok(QualificationResult { passed: score.pass, median_iou: score.median_iou, reference: truth.boxes.clone() })
    }

    /// Boxes of an image: the session's working copy when `session` is
    /// given, else the published set, else the served set. Gold boxes are
    /// never returned.
    pub fn image(&self, id: &str, session: Option<&str>) -> Result<ImageView, ServiceError> {
        let rec = self.images.get(id).ok_or_else(|| ServiceError::NotFound(format!("image {id}")))?;
        let image = match &rec.image_path {
            Some(p) => Some(encode_image(p).map_err(StoreError::from)?),
            None => None,
        };
        if let Some(sid) = session {
            let entry = self.entry(sid)?;
            let e = lock(&entry);
            let w = e.session.image(id).ok_or_else(|| ServiceError::NotFound(format!("image {id} in {sid}")))?;
            return Ok(ImageView {
                image_id: id.into(),
                width_px: w.width_px,
                height_px: w.height_px,
                stage: public_stage(w.stage),
                boxes: w.boxes.clone(),
                image,
            });
        }
        let published = self.published.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned();
        let set = published.as_deref().unwrap_or(&rec.set);
        Ok(ImageView {
            image_id: id.into(),
            width_px: set.width_px,
            height_px: set.height_px,
            stage: public_stage(set.stage),
            boxes: set.boxes.iter().enumerate().map(|(i, b)| WorkBox { id: i as u64 + 1, bbox: b.clone() }).collect(),
            image,
        })
    }

    /// Snapshot of a published box set.
    pub fn published(&self, id: &str) -> Option<Arc<BoxSet>> {
        self.published.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    pub fn report(&self) -> CrowdsourcingReport {
        crowdsourcing_report(&lock(&self.registry).outcomes)
    }

    /// Current box sets of a session, in batch order.
    pub fn session_boxsets(&self, sid: &str) -> Result<Vec<BoxSet>, ServiceError> {
        let e = self.entry(sid)?;
        let sets = lock(&e).session.boxsets();
        Ok(sets)
    }
}

fn encode_image(path: &PathBuf) -> std::io::Result<EncodedImage> {
    use base64::Engine;
    let bytes = std::fs::read(path)?;
    let content_type = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    };
    Ok(EncodedImage {
        content_type: content_type.into(),
        data_base64: base64::engine::general_purpose::STANDARD.encode(bytes),
    })
}
