use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chrono::{DateTime, Duration, Utc};
use http_body_util::BodyExt;
use panobox_core::coco::format_boxset;
use panobox_core::config::{GoldConfig, ServiceConfig};
use panobox_core::model::{BBox, BoxSet, ObjectClass, Rect, Stage};
use panobox_service::{router, Decision, EditEvent, EditKind, ImageRecord, Instruction, Service, ServiceError, Store};
use serde_json::Value;
use tower::ServiceExt;

const CLASSES: [ObjectClass; 2] = [ObjectClass::Building, ObjectClass::Tree];

fn set(id: &str, stage: Stage, boxes: &[(ObjectClass, [f64; 4])]) -> BoxSet {
    let mut s = BoxSet::new(id, 1400, 700, stage);
    s.boxes = boxes.iter().map(|(c, r)| BBox::new(*c, Rect::new(r[0], r[1], r[2], r[3]))).collect();
    s
}

fn served(id: &str) -> BoxSet {
    set(
        id,
        Stage::Refined,
        &[(ObjectClass::Tree, [100.0, 200.0, 140.0, 400.0]), (ObjectClass::Building, [500.0, 100.0, 700.0, 400.0])],
    )
}

/// Gold boxes agreeing with `served` at IoU `iou` (x_max shrunk).
fn gold_for(id: &str, iou: f64) -> BoxSet {
    set(
        id,
        Stage::Gold,
        &[
            (ObjectClass::Tree, [100.0, 200.0, 100.0 + 40.0 * iou, 400.0]),
            (ObjectClass::Building, [500.0, 100.0, 500.0 + 200.0 * iou, 400.0]),
        ],
    )
}

fn records(gold_iou: f64) -> Vec<ImageRecord> {
    let mut v: Vec<ImageRecord> = (0..8)
        .map(|i| ImageRecord {
            set: served(&format!("img{i}")),
            gold: None,
            neighbourhood: Some(if i % 2 == 0 { "north" } else { "south" }.into()),
            image_path: None,
        })
        .collect();
    v.push(ImageRecord {
        set: served("gold0"),
        gold: Some(gold_for("gold0", gold_iou)),
        neighbourhood: Some("north".into()),
        image_path: None,
    });
    v
}

fn config() -> ServiceConfig {
    ServiceConfig { class_order: CLASSES.to_vec(), snapshot_every: 4, ..Default::default() }
}

fn service(gold_iou: f64, store: Option<Store>) -> Service {
    Service::new(config(), GoldConfig::default(), records(gold_iou), None, store, 42).unwrap()
}

/// Accepts every box as served; returns the events sent.
fn work_through(svc: &Service, sid: &str, t0: DateTime<Utc>) -> Vec<EditEvent> {
    let mut sent = Vec::new();
    let mut t = t0;
    loop {
        let next = svc.next_item(sid).unwrap();
        let (image_id, kind) = match next {
            Instruction::Adjust { image_id, box_ids } | Instruction::Verify { image_id, box_ids, .. } => {
                (image_id, EditKind::Verify { box_id: box_ids[0] })
            }
            Instruction::Add { image_id, class, .. } => (image_id, EditKind::FinishClass { class }),
            Instruction::Complete => return sent,
        };
        t += Duration::seconds(3);
        let e = EditEvent { seq: sent.len() as u64 + 1, image_id, timestamp: t, kind };
        svc.post_events(sid, std::slice::from_ref(&e)).unwrap();
        sent.push(e);
    }
}

fn t0() -> DateTime<Utc> {
    "2021-06-01T12:00:00Z".parse().unwrap()
}

#[test]
fn batch_composition_and_gold_secrecy() {
    let svc = service(0.9, None);
    let b = svc.next_batch("w1").unwrap();
    assert_eq!(b.images.len(), 5);
    assert_eq!(b.images.iter().filter(|i| i.starts_with("gold")).count(), 1);
    // asking again returns the same open session
    assert_eq!(svc.next_batch("w1").unwrap(), b);
    let other = svc.next_batch("w2").unwrap();
    assert_ne!(other.session_id, b.session_id);
    // regular images are not handed out twice while held
    let regular = |v: &[String]| v.iter().filter(|i| !i.starts_with("gold")).cloned().collect::<Vec<_>>();
    assert!(regular(&b.images).iter().all(|i| !other.images.contains(i)));
    for id in &b.images {
        let view = svc.image(id, Some(&b.session_id)).unwrap();
        let text = serde_json::to_string(&view).unwrap();
        assert_eq!(view.stage, Stage::Refined);
        assert_eq!(view.boxes.len(), 2);
        assert!(!text.contains("\"gold\""));
    }
    let gold_view = svc.image("gold0", None).unwrap();
    assert_eq!(gold_view.boxes[0].bbox, served("gold0").boxes[0]);
    assert!(matches!(svc.next_batch("w3"), Err(ServiceError::NoWork)));
}

#[test]
fn accept_and_reject() {
    for (iou, want) in [(0.9, Decision::Accept), (0.2, Decision::Reject)] {
        let svc = service(iou, None);
        let b = svc.next_batch("w").unwrap();
        assert!(matches!(svc.finalize(&b.session_id), Err(ServiceError::Incomplete)));
        let sent = work_through(&svc, &b.session_id, t0());
        // per image: 2 adjust verifies, per class 1 verify + finish, twice
        assert_eq!(sent.len(), 5 * (2 + 2 * 4));
        let f = svc.finalize(&b.session_id).unwrap();
        assert_eq!(f.decision, want);
        assert_eq!(f.timing.adjust.median_s, Some(3.0));
        assert_eq!(svc.finalize(&b.session_id).unwrap(), f);
        let regular: Vec<&String> = b.images.iter().filter(|i| !i.starts_with("gold")).collect();
        for id in &regular {
            let p = svc.published(id);
            match want {
                Decision::Accept => assert_eq!(p.unwrap().stage, Stage::HumanVerified),
                Decision::Reject => assert!(p.is_none()),
            }
        }
        assert!(svc.published("gold0").is_none());
        let r = svc.report();
        assert_eq!(r.all.images, 1);
        assert!((r.all.median_iou.unwrap() - iou).abs() < 1e-9);
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].neighbourhood, "north");
        let next = svc.next_batch("w").unwrap();
        if want == Decision::Reject {
            // rejected images go back into the pool
            assert!(regular.iter().all(|i| next.images.contains(i)));
        }
    }
}

#[test]
fn events_after_finalize_are_refused() {
    let svc = service(0.9, None);
    let b = svc.next_batch("w").unwrap();
    let sent = work_through(&svc, &b.session_id, t0());
    svc.finalize(&b.session_id).unwrap();
    let mut e = sent.last().unwrap().clone();
    e.seq += 1;
    assert!(matches!(svc.post_events(&b.session_id, &[e]), Err(ServiceError::Finalized)));
}

#[test]
fn restart_replays_log() {
    let dir = tempfile::tempdir().unwrap();
    let (open_sid, done_sid, live_open, live_done);
    {
        let svc = service(0.9, Some(Store::open(dir.path()).unwrap()));
        let done = svc.next_batch("w1").unwrap();
        work_through(&svc, &done.session_id, t0());
        svc.finalize(&done.session_id).unwrap();
        let open = svc.next_batch("w2").unwrap();
        let first = match svc.next_item(&open.session_id).unwrap() {
            Instruction::Adjust { image_id, box_ids } => (image_id, box_ids[0]),
            other => panic!("unexpected {other:?}"),
        };
        let events = vec![
            EditEvent {
                seq: 1,
                image_id: first.0.clone(),
                timestamp: t0(),
                kind: EditKind::Move { box_id: first.1, dx: 0.1, dy: 0.2 },
            },
            EditEvent {
                seq: 2,
                image_id: first.0.clone(),
                timestamp: t0() + Duration::milliseconds(1500),
                kind: EditKind::Resize { box_id: first.1, rect: [100.1, 200.2, 141.3, 399.9] },
            },
        ];
        svc.post_events(&open.session_id, &events).unwrap();
        live_open = svc.session_boxsets(&open.session_id).unwrap();
        live_done = svc.session_boxsets(&done.session_id).unwrap();
        open_sid = open.session_id;
        done_sid = done.session_id;
    }
    let svc = service(0.9, Some(Store::open(dir.path()).unwrap()));
    let text = |v: &[BoxSet]| v.iter().map(format_boxset).collect::<Vec<_>>();
    assert_eq!(text(&svc.session_boxsets(&open_sid).unwrap()), text(&live_open));
    assert_eq!(text(&svc.session_boxsets(&done_sid).unwrap()), text(&live_done));
    assert_eq!(svc.report().accepted, 1);
    // the open session is still w2's and nothing was republished
    assert_eq!(svc.next_batch("w2").unwrap().session_id, open_sid);
    assert!(matches!(svc.finalize(&done_sid), Ok(f) if f.decision == Decision::Accept));
    let published = std::fs::read_dir(dir.path().join("published")).unwrap().count();
    assert_eq!(published, 4);
    let snapshots = dir.path().join("sessions").join(&done_sid).join("snapshots");
    assert!(std::fs::read_dir(snapshots).unwrap().count() >= 2);
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn http_round_trip() {
    let app = router(Arc::new(service(0.9, None)));
    let (st, batch) = call(&app, "GET", "/batches/next?worker=alice", None).await;
    assert_eq!(st, StatusCode::OK);
    assert!(!batch.to_string().contains("\"gold\""));
    let sid = batch["session_id"].as_str().unwrap().to_string();
    let first = batch["images"][0].as_str().unwrap().to_string();
    let (st, img) = call(&app, "GET", &format!("/images/{first}?session={sid}"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(img["stage"], "refined");
    assert_eq!(img["boxes"].as_array().unwrap().len(), 2);

    let (_, next) = call(&app, "GET", &format!("/sessions/{sid}/next"), None).await;
    assert_eq!(next["type"], "adjust");
    let box_id = next["box_ids"][0].as_u64().unwrap();
    let ev = serde_json::json!([{
        "seq": 1, "image_id": first, "timestamp": "2021-06-01T12:00:00Z", "kind": "verify", "box_id": box_id
    }]);
    let (st, res) = call(&app, "POST", &format!("/sessions/{sid}/events"), Some(ev.clone())).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(res["applied"], 1);
    // retrying is harmless
    let (st, res) = call(&app, "POST", &format!("/sessions/{sid}/events"), Some(ev)).await;
    assert_eq!((st, res["applied"].as_u64()), (StatusCode::OK, Some(0)));
    let stale = serde_json::json!([{
        "seq": 2, "image_id": first, "timestamp": "2021-06-01T12:00:01Z", "kind": "verify", "box_id": box_id
    }]);
    let (st, err) = call(&app, "POST", &format!("/sessions/{sid}/events"), Some(stale)).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert!(err["error"].as_str().unwrap().contains("expected"));
    let (st, _) = call(&app, "POST", &format!("/sessions/{sid}/finalize"), None).await;
    assert_eq!(st, StatusCode::CONFLICT);
    let (st, _) = call(&app, "GET", "/sessions/nope/next", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, rep) = call(&app, "GET", "/reports/crowdsourcing", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(rep["all"]["images"], 0);
}

#[test]
fn qualification_gate() {
    let mut recs = records(0.9);
    recs.push(ImageRecord {
        set: served("qual"),
        gold: Some(gold_for("qual", 1.0)),
        neighbourhood: None,
        image_path: None,
    });
    let svc = Service::new(config(), GoldConfig::default(), recs, Some("qual".into()), None, 1).unwrap();
    assert!(matches!(svc.next_batch("w"), Err(ServiceError::NotQualified(_))));
    let fail = svc.qualify("w", vec![]).unwrap();
    assert!(!fail.passed);
    assert_eq!(fail.reference.len(), 2);
    let pass = svc.qualify("w", served("qual").boxes).unwrap();
    assert!(pass.passed);
    let b = svc.next_batch("w").unwrap();
    assert!(!b.images.contains(&"qual".to_string()));
}
