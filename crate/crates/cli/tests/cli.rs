use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Parser;
use panobox::{run, Cli, Diagnostics};
use panobox_core::coco::{load_boxset, load_boxset_dir, save_boxset};
use panobox_core::ingest::{format_grid, ElevationGrid};
use panobox_core::model::{BBox, BoxSet, GeoPoint, ObjectClass, Rect, Stage};
use serde_json::{json, Value};
use tempfile::TempDir;

fn exec(dir: &Path, args: &[&str]) -> anyhow::Result<()> {
    let mut argv = vec!["panobox".to_string()];
    for a in args {
        argv.push(a.replace("@", &format!("{}/", dir.display())));
    }
    run(Cli::try_parse_from(argv)?)
}

fn feature(id: &str, class: &str, geometry: Value) -> Value {
    json!({ "type": "Feature", "id": id, "properties": { "class": class }, "geometry": geometry })
}

fn point(x: f64, y: f64) -> Value {
    json!({ "type": "Point", "coordinates": [x, y] })
}

/// A short street: three panoramas along the x axis with trees, signs,
/// lamp posts and two buildings, one of them straddling the seam.
fn write_scene(dir: &Path) {
    let mut features = vec![
        feature(
            "bld-north",
            "building",
            json!({ "type": "Polygon", "coordinates": [[[-5.0, 12.0], [25.0, 12.0], [25.0, 20.0], [-5.0, 20.0], [-5.0, 12.0]]] }),
        ),
        feature(
            "bld-behind",
            "building",
            json!({ "type": "Polygon", "coordinates": [[[-30.0, -6.0], [-18.0, -6.0], [-18.0, 6.0], [-30.0, 6.0], [-30.0, -6.0]]] }),
        ),
        feature("rail", "railway_track", json!({ "type": "LineString", "coordinates": [[-40.0, -9.0], [60.0, -9.0]] })),
    ];
    for i in 0..6 {
        let x = -4.0 + 6.0 * i as f64;
        features.push(feature(&format!("tree-{i}"), "tree", point(x, 6.0)));
        features.push(feature(&format!("sign-{i}"), "traffic_sign", point(x + 2.0, -4.0)));
        features.push(feature(&format!("lamp-{i}"), "lamppost", point(x + 1.0, 4.5)));
    }
    features.push(feature("unknown", "bench", point(3.0, 3.0)));
    let objects = json!({ "type": "FeatureCollection", "features": features });
    fs::write(dir.join("objects.json"), serde_json::to_string_pretty(&objects).unwrap()).unwrap();

    let origin = GeoPoint::new(-100.0, -100.0);
    fs::write(dir.join("dtm.asc"), format_grid(&ElevationGrid::constant(origin, 1.0, 200, 200, 2.0))).unwrap();
    fs::write(dir.join("dsm.asc"), format_grid(&ElevationGrid::constant(origin, 1.0, 200, 200, 14.0))).unwrap();

    let poses: Vec<String> = [("p-000", 0.0, 90.0), ("p-001", 10.0, 90.0), ("p-002", 20.0, 45.0), ("p-003", 21.0, 0.0)]
        .iter()
        .map(|(id, x, h)| {
            json!({ "id": id, "x": x, "y": 0.0, "heading_deg": h,
                    "timestamp_iso8601": "2019-05-01T10:00:00Z", "surface": "land" })
            .to_string()
        })
        .collect();
    fs::write(dir.join("poses.jsonl"), poses.join("\n") + "\n").unwrap();
}

fn generate(dir: &Path, out: &str, extra: &[&str]) {
    let mut args = vec![
        "generate",
        "--objects",
        "@objects.json",
        "--dtm",
        "@dtm.asc",
        "--dsm",
        "@dsm.asc",
        "--poses",
        "@poses.jsonl",
        "--out",
        out,
    ];
    args.extend_from_slice(extra);
    exec(dir, &args).unwrap();
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn generate_writes_one_file_per_panorama() {
    let t = TempDir::new().unwrap();
    write_scene(t.path());
    generate(t.path(), "@boxes", &["--report", "@skipped.json"]);
    let sets = load_boxset_dir(t.path().join("boxes")).unwrap();
    let ids: Vec<&str> = sets.iter().map(|s| s.panorama_id.as_str()).collect();
    assert_eq!(ids, ["p-000", "p-001", "p-002", "p-003"]);
    for s in &sets {
        assert_eq!(s.stage, Stage::Generated);
        assert!(!s.boxes.is_empty());
        s.validate().unwrap();
    }
    // The building behind the first camera crosses the image seam.
    assert!(sets[0].boxes.iter().any(|b| b.link_id.is_some() && b.object_id.as_deref() == Some("bld-behind")));
    assert!(t.path().join("skipped.json").exists());
}

#[test]
fn generate_then_refine_equals_fused_run() {
    let t = TempDir::new().unwrap();
    write_scene(t.path());
    generate(t.path(), "@gen", &[]);
    exec(t.path(), &["refine", "--input", "@gen", "--out", "@two-step"]).unwrap();
    generate(t.path(), "@fused", &["--refine"]);
    let a = tree_bytes(&t.path().join("two-step"));
    assert_eq!(a.len(), 4);
    assert_eq!(a, tree_bytes(&t.path().join("fused")));
    for s in load_boxset_dir(t.path().join("fused")).unwrap() {
        assert_eq!(s.stage, Stage::Refined);
    }
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let t = TempDir::new().unwrap();
    write_scene(t.path());
    let hoods = json!({ "p-000": "west", "p-001": "west", "p-002": "east", "p-003": "east" });
    fs::write(t.path().join("hoods.json"), hoods.to_string()).unwrap();
    let mut cfg = String::from("[split]\ntrain = 0.5\nval = 0.5\ntest = 0.0\n");
    cfg.push_str("[sampling]\ncurriculum_shards = 2\n");
    fs::write(t.path().join("cfg.toml"), cfg).unwrap();

    let outputs = |tag: &str, threads: &str| {
        let o = |name: &str| format!("@{tag}/{name}");
        let common = ["--config", "@cfg.toml", "--seed", "7", "--threads", threads];
        let runs: Vec<Vec<String>> = vec![
            vec!["filter".into(), "--poses".into(), "@poses.jsonl".into(), "--out".into(), o("poses.jsonl")],
            vec![
                "generate",
                "--objects",
                "@objects.json",
                "--dtm",
                "@dtm.asc",
                "--dsm",
                "@dsm.asc",
                "--poses",
                "@poses.jsonl",
            ]
            .into_iter()
            .map(String::from)
            .chain(["--out".into(), o("gen"), "--report".into(), o("skipped.json")])
            .collect(),
            vec!["refine".into(), "--input".into(), o("gen"), "--out".into(), o("ref")],
            vec![
                "noise".into(),
                "--noisy".into(),
                o("gen"),
                "--clean".into(),
                o("ref"),
                "--out".into(),
                o("noise.json"),
                "--histograms".into(),
                o("hist.csv"),
            ],
            vec!["stats".into(), "--input".into(), o("ref"), "--out".into(), o("stats")],
            vec![
                "split".into(),
                "--input".into(),
                o("ref"),
                "--neighbourhoods".into(),
                "@hoods.json".into(),
                "--out".into(),
                o("split.json"),
            ],
            vec![
                "sample".into(),
                "--input".into(),
                o("ref"),
                "--out".into(),
                o("plan.json"),
                "--curriculum".into(),
                o("shards.json"),
                "--neighbourhoods".into(),
                "@hoods.json".into(),
            ],
            vec!["transform".into(), "pad".into(), "--input".into(), o("ref"), "--out".into(), o("pad")],
            vec!["transform".into(), "tiles".into(), "--input".into(), o("pad"), "--out".into(), o("tiles.json")],
            vec!["transform".into(), "unpad".into(), "--input".into(), o("pad"), "--out".into(), o("unpad")],
        ];
        for r in runs {
            let mut args: Vec<&str> = r.iter().map(String::as_str).collect();
            args.extend_from_slice(&common);
            exec(t.path(), &args).unwrap_or_else(|e| panic!("{args:?}: {e:#}"));
        }
        tree_bytes(&t.path().join(tag))
    };
    let first = outputs("a", "1");
    assert!(first.len() > 20);
    assert_eq!(first, outputs("b", "4"));
    assert_eq!(first, outputs("c", "1"));
}

#[test]
fn noise_on_identical_dirs_reports_full_agreement() {
    let t = TempDir::new().unwrap();
    write_scene(t.path());
    generate(t.path(), "@a", &["--refine"]);
    generate(t.path(), "@b", &["--refine"]);
    exec(t.path(), &["noise", "--noisy", "@a", "--clean", "@b", "--out", "@report.json"]).unwrap();
    let r: Value = serde_json::from_str(&fs::read_to_string(t.path().join("report.json")).unwrap()).unwrap();
    let mut checked = 0;
    for row in r["boxes"].as_object().unwrap().values() {
        for key in ["matched_noisy_fraction", "matched_clean_fraction"] {
            if !row[key].is_null() {
                assert_eq!(row[key], 1.0, "{key}");
                checked += 1;
            }
        }
        if !row["iou"].is_null() {
            assert_eq!(row["iou"]["min"], 1.0);
            assert_eq!(row["giou"]["min"], 1.0);
        }
    }
    for row in r["labels"].as_object().unwrap().values() {
        for key in ["precision", "recall"] {
            if !row[key].is_null() {
                assert_eq!(row[key], 1.0);
                checked += 1;
            }
        }
        assert_eq!(row["fp"], 0);
        assert_eq!(row["fn"], 0);
    }
    assert!(r["image_accuracy"].as_object().unwrap().values().all(|v| v == 1.0));
    assert_eq!(r["mean_image_accuracy"], 1.0);
    for key in ["dx_min", "dy_min", "dx_max", "dy_max"] {
        assert_eq!(r["shifts"][key]["min"], 0.0);
        assert_eq!(r["shifts"][key]["max"], 0.0);
    }
    assert!(checked >= 6);
}

fn bx(class: ObjectClass, r: [f64; 4], d: f64, id: &str) -> BBox {
    let mut b = BBox::new(class, Rect::new(r[0], r[1], r[2], r[3]));
    b.distance_m = Some(d);
    b.object_id = Some(id.into());
    b.source = Some("src".into());
    b
}

#[test]
fn refine_reproduces_the_hand_traced_scene() {
    use ObjectClass::{AdvertisingColumn, Building, TrafficSign, Tree};
    let t = TempDir::new().unwrap();
    let mut b2 = bx(Building, [600.0, 50.0, 800.0, 350.0], 40.0, "B2");
    b2.source = Some("registry".into());
    let mut b3 = bx(Building, [610.0, 60.0, 810.0, 360.0], 42.0, "B3");
    b3.source = Some("osm".into());
    let mut set = BoxSet::new("scene", 1400, 700, Stage::Generated);
    set.boxes = vec![
        bx(Building, [100.0, 100.0, 300.0, 400.0], 10.0, "B1"),
        bx(TrafficSign, [150.0, 200.0, 180.0, 250.0], 20.0, "S1"),
        bx(TrafficSign, [280.0, 200.0, 340.0, 260.0], 25.0, "S2"),
        bx(Tree, [400.0, 100.0, 500.0, 300.0], 15.0, "T1"),
        bx(Tree, [420.0, 120.0, 520.0, 320.0], 30.0, "T2"),
        b2,
        b3,
        bx(AdvertisingColumn, [900.0, 300.0, 960.0, 400.0], 5.0, "AC"),
        bx(TrafficSign, [905.0, 310.0, 945.0, 390.0], 12.0, "S4"),
        bx(TrafficSign, [410.0, 150.0, 440.0, 200.0], 20.0, "S5"),
    ];
    fs::create_dir(t.path().join("in")).unwrap();
    save_boxset(t.path().join("in/scene.json"), &set).unwrap();
    exec(t.path(), &["refine", "--input", "@in", "--out", "@out"]).unwrap();
    let out = load_boxset(t.path().join("out/scene.json")).unwrap();

    // Hand-traced: S1 sits inside B1, S2 is trimmed at B1's right edge,
    // T2 is 72% hidden behind T1, B2 and B3 merge, S4 sits inside AC.
    let ids: Vec<&str> = out.boxes.iter().map(|b| b.object_id.as_deref().unwrap()).collect();
    assert_eq!(ids, ["B1", "S2", "T1", "B2", "AC", "S5"]);
    assert_eq!(out.boxes[1].rect(), Rect::new(300.0, 200.0, 340.0, 260.0));
    assert_eq!(out.boxes[3].rect(), Rect::new(600.0, 50.0, 810.0, 360.0));
    assert_eq!(out.boxes[3].source.as_deref(), Some("osm+registry"));
    assert_eq!(out.stage, Stage::Refined);
}

#[test]
fn eval_scores_perfect_predictions_as_one() {
    let t = TempDir::new().unwrap();
    write_scene(t.path());
    generate(t.path(), "@truth", &["--refine"]);
    let sets = load_boxset_dir(t.path().join("truth")).unwrap();
    let mut dets = Vec::new();
    let mut labels = serde_json::Map::new();
    for s in &sets {
        let w = s.width_px as f64;
        let units = panobox_core::units::units_of(s);
        for u in &units {
            let r = u.unrolled(w);
            dets.push(json!({ "image_id": s.panorama_id, "category_id": u.class().category_id(),
                              "bbox": [r.x_min, r.y_min, r.x_max - r.x_min, r.y_max - r.y_min], "score": 0.9 }));
        }
        let classes: std::collections::BTreeSet<&str> = s.boxes.iter().map(|b| b.class.name()).collect();
        labels.insert(s.panorama_id.clone(), json!(classes));
    }
    fs::write(t.path().join("dets.json"), Value::Array(dets).to_string()).unwrap();
    fs::write(t.path().join("labels.json"), Value::Object(labels).to_string()).unwrap();
    exec(
        t.path(),
        &["eval", "--truth", "@truth", "--detections", "@dets.json", "--labels", "@labels.json", "--out", "@eval.json"],
    )
    .unwrap();
    let r: Value = serde_json::from_str(&fs::read_to_string(t.path().join("eval.json")).unwrap()).unwrap();
    assert_eq!(r["classification"]["weighted"], 1.0);
    assert_eq!(r["detection"]["map"], 1.0);
    assert_eq!(r["detection"]["recall_at_100"], 1.0);
}

#[test]
fn invalid_features_are_listed_individually() {
    let t = TempDir::new().unwrap();
    write_scene(t.path());
    let objects = json!({ "type": "FeatureCollection", "features": [
        feature("ok", "tree", point(5.0, 5.0)),
        feature("bad-geom", "tree", json!({ "type": "Point", "coordinates": ["x"] })),
        { "type": "Feature", "id": "no-class", "properties": {}, "geometry": point(1.0, 1.0) },
    ]});
    fs::write(t.path().join("objects.json"), objects.to_string()).unwrap();
    let err = exec(t.path(), &["generate", "--objects", "@objects.json", "--poses", "@poses.jsonl", "--out", "@boxes"])
        .unwrap_err();
    let d = err.downcast_ref::<Diagnostics>().expect("per-record diagnostics");
    assert_eq!(d.records.len(), 2);
    assert!(d.records[0].contains("bad-geom"));
    assert!(d.records[1].contains("no-class"));
    assert!(!t.path().join("boxes").exists());

    exec(
        t.path(),
        &["generate", "--objects", "@objects.json", "--poses", "@poses.jsonl", "--out", "@boxes", "--skip-invalid"],
    )
    .unwrap();
    assert_eq!(load_boxset_dir(t.path().join("boxes")).unwrap().len(), 4);
}

#[test]
fn binary_exits_nonzero_with_json_diagnostics() {
    let t = TempDir::new().unwrap();
    fs::create_dir(t.path().join("in")).unwrap();
    fs::write(t.path().join("in/a.json"), "{ not json").unwrap();
    fs::write(t.path().join("in/b.json"), "[]").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_panobox"))
        .args(["stats", "--input"])
        .arg(t.path().join("in"))
        .arg("--out")
        .arg(t.path().join("stats"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<Value> = stderr.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let errors: Vec<&str> =
        lines.iter().filter(|l| l["level"] == "ERROR").map(|l| l["msg"].as_str().unwrap()).collect();
    assert_eq!(errors.len(), 3);
    assert!(errors[0].contains("a.json"));
    assert!(errors[1].contains("b.json"));
}

#[test]
fn pad_produces_the_training_canvas() {
    let t = TempDir::new().unwrap();
    write_scene(t.path());
    generate(t.path(), "@ref", &["--refine"]);
    exec(t.path(), &["transform", "pad", "--input", "@ref", "--out", "@pad"]).unwrap();
    exec(t.path(), &["transform", "tiles", "--input", "@pad", "--out", "@tiles.json"]).unwrap();
    for s in load_boxset_dir(t.path().join("pad")).unwrap() {
        assert_eq!((s.width_px, s.height_px), (1450, 550));
    }
    let tiles: Value = serde_json::from_str(&fs::read_to_string(t.path().join("tiles.json")).unwrap()).unwrap();
    let first = tiles["p-000"].as_array().unwrap();
    let xs: Vec<f64> = first.iter().map(|t| t["window"]["x_min"].as_f64().unwrap()).collect();
    assert_eq!(xs, [0.0, 475.0, 950.0]);
}
