use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use panobox_core::coco::{parse_results, to_coco};
use panobox_core::config::Config;
use panobox_core::dataset::{
    circular_pad, classification_tiles, curriculum_shards, dataset_stats, group_split, repeat_factors, tile_labels,
    unpad, CurriculumItem, Tile,
};
use panobox_core::geometry::Elevation;
use panobox_core::ingest::{density_filter, format_poses, load_grid, load_poses, parse_objects};
use panobox_core::metrics::{coco_map, coco_thresholds, recall_at_100, weighted_fscore, CocoEval, FScoreReport};
use panobox_core::model::{BoxSet, ObjectClass};
use panobox_core::noise::{histogram, label_report, overlap_report, quantiles, CoordShift, Quantiles};
use panobox_core::pipeline::{generate_boxes, generate_refined, Generated, Skipped};
use panobox_core::refine::refine_pipeline;
use panobox_core::units::units_of;
use panobox_service::{ImageRecord, Service, Store};
use rayon::prelude::*;
use serde::Serialize;

use crate::io::{check, load_sets, read_json, set_file, write_json, write_sets, write_text};
use crate::{
    Cli, Command, EvalArgs, FilterArgs, GenerateArgs, NoiseArgs, RefineArgs, SampleArgs, ServeArgs, SplitArgs,
    StatsArgs, TransformArgs, TransformCommand,
};

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => Config::default(),
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build()?;
    let seed = cli.seed;
    pool.install(|| match cli.command {
        Command::Filter(a) => filter(&a, &cfg),
        Command::Generate(a) => generate(&a, &cfg),
        Command::Refine(a) => refine(&a, &cfg),
        Command::Noise(a) => noise(&a),
        Command::Stats(a) => stats(&a, &cfg),
        Command::Split(a) => split(&a, &cfg, seed),
        Command::Sample(a) => sample(&a, &cfg, seed),
        Command::Transform(t) => transform(&t, &cfg),
        Command::Eval(a) => eval(&a),
        Command::Serve(a) => serve(&a, &cfg, seed),
    })
}

fn filter(a: &FilterArgs, cfg: &Config) -> anyhow::Result<()> {
    let min_sep = a.min_separation.unwrap_or(cfg.ingest.min_separation_m);
    if !(min_sep > 0.0 && min_sep.is_finite()) {
        return Err(anyhow!("minimum separation must be positive, got {min_sep}"));
    }
    let panos = load_poses(&a.poses).with_context(|| format!("poses {}", a.poses.display()))?;
    let kept = density_filter(&panos, min_sep);
    log::info!("kept {} of {} panoramas at {min_sep} m separation", kept.len(), panos.len());
    write_text(&a.out, format_poses(&kept))
}

fn generate(a: &GenerateArgs, cfg: &Config) -> anyhow::Result<()> {
    let classes = cfg.class_table()?;
    let text = fs::read_to_string(&a.objects).with_context(|| format!("reading {}", a.objects.display()))?;
    let load = parse_objects(&text, &cfg.class_map(), &cfg.ingest.default_source)
        .with_context(|| format!("objects {}", a.objects.display()))?;
    let bad: Vec<String> = load
        .errors
        .iter()
        .map(|e| format!("feature {} ({}): {}", e.index, e.id.as_deref().unwrap_or("no id"), e.reason))
        .collect();
    if a.skip_invalid {
        for b in &bad {
            log::warn!("skipping {b}");
        }
    } else {
        check(format!("objects in {}", a.objects.display()), bad)?;
    }
    if load.unmapped > 0 {
        log::info!("{} features carry no known class tag", load.unmapped);
    }
    let grids = match (&a.dtm, &a.dsm) {
        (Some(t), Some(s)) => Some((
            load_grid(t).with_context(|| format!("terrain grid {}", t.display()))?,
            load_grid(s).with_context(|| format!("surface grid {}", s.display()))?,
        )),
        _ => None,
    };
    let panos = load_poses(&a.poses).with_context(|| format!("poses {}", a.poses.display()))?;
    let mut seen = BTreeSet::new();
    let bad: Vec<String> = panos
        .iter()
        .filter_map(|p| match set_file(&p.id) {
            Err(e) => Some(e),
            Ok(_) if !seen.insert(p.id.as_str()) => Some(format!("panorama `{}` is listed twice", p.id)),
            Ok(_) => None,
        })
        .collect();
    check(format!("poses in {}", a.poses.display()), bad)?;

    let results: Vec<Result<Generated, String>> = panos
        .par_iter()
        .map(|p| {
            let elevation = grids.as_ref().map(|(dtm, dsm)| Elevation { dsm, dtm });
            if a.refine {
                generate_refined(p, &load.store, elevation, &classes, cfg).map_err(|e| format!("{}: {e}", p.id))
            } else {
                Ok(generate_boxes(p, &load.store, elevation, &classes, cfg))
            }
        })
        .collect();
    let mut sets = Vec::with_capacity(results.len());
    let mut skipped: BTreeMap<String, Vec<Skipped>> = BTreeMap::new();
    let mut bad = Vec::new();
    for r in results {
        match r {
            Ok(g) => {
                if !g.skipped.is_empty() {
                    skipped.insert(g.set.panorama_id.clone(), g.skipped);
                }
                sets.push(g.set);
            }
            Err(e) => bad.push(e),
        }
    }
    check("refinement", bad)?;
    write_sets(&a.out, &sets)?;
    let boxes: usize = sets.iter().map(|s| s.boxes.len()).sum();
    let n_skipped: usize = skipped.values().map(Vec::len).sum();
    log::info!("wrote {} panoramas with {boxes} boxes, {n_skipped} objects skipped", sets.len());
    if let Some(r) = &a.report {
        write_json(r, &skipped)?;
    }
    Ok(())
}

fn refine(a: &RefineArgs, cfg: &Config) -> anyhow::Result<()> {
    let sets = load_sets(&a.input)?;
    let results: Vec<Result<BoxSet, String>> = sets
        .par_iter()
        .map(|s| refine_pipeline(s, &cfg.refine).map_err(|e| format!("{}: {e}", s.panorama_id)))
        .collect();
    let mut out = Vec::with_capacity(results.len());
    let mut bad = Vec::new();
    for r in results {
        match r {
            Ok(s) => out.push(s),
            Err(e) => bad.push(e),
        }
    }
    check("refinement", bad)?;
    let before: usize = sets.iter().map(|s| s.boxes.len()).sum();
    let after: usize = out.iter().map(|s| s.boxes.len()).sum();
    log::info!("refined {} panoramas, {before} boxes in, {after} out", out.len());
    write_sets(&a.out, &out)
}

#[derive(Serialize)]
struct ClassNoise {
    noisy_total: usize,
    clean_total: usize,
    matched: usize,
    matched_noisy_fraction: Option<f64>,
    matched_clean_fraction: Option<f64>,
    iou: Option<Quantiles>,
    giou: Option<Quantiles>,
}

#[derive(Serialize)]
struct LabelNoise {
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    precision: Option<f64>,
    recall: Option<f64>,
}

#[derive(Serialize)]
struct ShiftNoise {
    samples: usize,
    dx_min: Option<Quantiles>,
    dy_min: Option<Quantiles>,
    dx_max: Option<Quantiles>,
    dy_max: Option<Quantiles>,
}

#[derive(Serialize)]
struct NoiseReport {
    images: usize,
    boxes: BTreeMap<ObjectClass, ClassNoise>,
    labels: BTreeMap<ObjectClass, LabelNoise>,
    image_accuracy: BTreeMap<String, f64>,
    mean_image_accuracy: Option<f64>,
    shifts: ShiftNoise,
}

type Coord = (&'static str, fn(&CoordShift) -> f64);

const SHIFT_COORDS: [Coord; 4] =
    [("dx_min", |s| s.dx_min), ("dy_min", |s| s.dy_min), ("dx_max", |s| s.dx_max), ("dy_max", |s| s.dy_max)];

fn noise(a: &NoiseArgs) -> anyhow::Result<()> {
    let (noisy, clean) = rayon::join(|| load_sets(&a.noisy), || load_sets(&a.clean));
    let (noisy, clean) = (noisy?, clean?);
    let overlap = overlap_report(&noisy, &clean)?;
    let labels = label_report(&noisy, &clean)?;
    let shift_q = |f: fn(&CoordShift) -> f64| quantiles(&overlap.shifts.iter().map(f).collect::<Vec<_>>());
    let n = labels.image_accuracy.len();
    let report = NoiseReport {
        images: n,
        boxes: overlap
            .per_class
            .iter()
            .map(|(c, o)| {
                let row = ClassNoise {
                    noisy_total: o.noisy_total,
                    clean_total: o.clean_total,
                    matched: o.matched,
                    matched_noisy_fraction: o.matched_noisy_fraction(),
                    matched_clean_fraction: o.matched_clean_fraction(),
                    iou: o.iou_quantiles(),
                    giou: o.giou_quantiles(),
                };
                (*c, row)
            })
            .collect(),
        labels: labels
            .per_class
            .iter()
            .map(|(c, l)| {
                let row = LabelNoise { tp: l.tp, fp: l.fp, fn_: l.fn_, precision: l.precision(), recall: l.recall() };
                (*c, row)
            })
            .collect(),
        mean_image_accuracy: (n > 0).then(|| labels.image_accuracy.values().sum::<f64>() / n as f64),
        image_accuracy: labels.image_accuracy.clone(),
        shifts: ShiftNoise {
            samples: overlap.shifts.len(),
            dx_min: shift_q(SHIFT_COORDS[0].1),
            dy_min: shift_q(SHIFT_COORDS[1].1),
            dx_max: shift_q(SHIFT_COORDS[2].1),
            dy_max: shift_q(SHIFT_COORDS[3].1),
        },
    };
    write_json(&a.out, &report)?;

    if let Some(path) = &a.histograms {
        let mut csv = String::from("metric,group,bin_lo,count\n");
        for (c, o) in &overlap.per_class {
            for (metric, values, lo) in [("iou", &o.ious, 0.0), ("giou", &o.gious, -1.0)] {
                if values.is_empty() {
                    continue;
                }
                for (bin, count) in histogram(values, lo, 1.0, a.bins) {
                    let _ = writeln!(csv, "{metric},{},{bin},{count}", c.name());
                }
            }
        }
        if !overlap.shifts.is_empty() {
            let reach = overlap
                .shifts
                .iter()
                .flat_map(|s| SHIFT_COORDS.iter().map(move |(_, f)| f(s).abs()))
                .fold(1.0f64, f64::max)
                .ceil();
            for (name, f) in SHIFT_COORDS {
                let values: Vec<f64> = overlap.shifts.iter().map(f).collect();
                for (bin, count) in histogram(&values, -reach, reach, a.bins) {
                    let _ = writeln!(csv, "shift,{name},{bin},{count}");
                }
            }
        }
        write_text(path, csv)?;
    }
    log::info!("compared {n} panoramas");
    Ok(())
}

fn stats(a: &StatsArgs, cfg: &Config) -> anyhow::Result<()> {
    let sets = load_sets(&a.input)?;
    let s = dataset_stats(&sets, &cfg.stats);
    write_json(&a.out.join("stats.json"), &s)?;
    write_text(&a.out.join("per_class.csv"), s.per_class_csv())?;
    write_text(&a.out.join("per_image.csv"), s.histogram_csv())?;
    log::info!("{} images, {} instances", s.images, s.total_instances());
    Ok(())
}

fn presence(sets: &[BoxSet]) -> BTreeMap<String, BTreeSet<ObjectClass>> {
    sets.iter().map(|s| (s.panorama_id.clone(), s.boxes.iter().map(|b| b.class).collect())).collect()
}

fn split(a: &SplitArgs, cfg: &Config, seed: u64) -> anyhow::Result<()> {
    let sets = load_sets(&a.input)?;
    let hoods: BTreeMap<String, String> = read_json(&a.neighbourhoods)?;
    let classes = presence(&sets);
    let ids: Vec<String> = classes.keys().cloned().collect();
    let missing: Vec<String> =
        ids.iter().filter(|id| !hoods.contains_key(*id)).map(|id| format!("`{id}` has no neighbourhood")).collect();
    check(format!("neighbourhoods in {}", a.neighbourhoods.display()), missing)?;
    let assignment = group_split(&ids, &hoods, &classes, &cfg.split, seed)?;
    write_json(&a.out, &assignment)?;
    log::info!("split {} images across {} neighbourhoods", ids.len(), hoods.len());
    Ok(())
}

#[derive(Serialize)]
struct Curriculum {
    shards: Vec<Vec<String>>,
}

fn sample(a: &SampleArgs, cfg: &Config, seed: u64) -> anyhow::Result<()> {
    let sets = load_sets(&a.input)?;
    let plan = repeat_factors(&presence(&sets), cfg.sampling.threshold, seed)?;
    write_json(&a.out, &plan)?;
    log::info!("epoch of {} draws from {} images", plan.epoch.len(), plan.image_factor.len());
    if let (Some(out), Some(hp)) = (&a.curriculum, &a.neighbourhoods) {
        let hoods: BTreeMap<String, String> = read_json(hp)?;
        let mut bad = Vec::new();
        let mut items = Vec::with_capacity(sets.len());
        for s in &sets {
            match hoods.get(&s.panorama_id) {
                Some(h) => items.push(CurriculumItem {
                    image_id: s.panorama_id.clone(),
                    instances: units_of(s).len(),
                    neighbourhood: h.clone(),
                }),
                None => bad.push(format!("`{}` has no neighbourhood", s.panorama_id)),
            }
        }
        check(format!("neighbourhoods in {}", hp.display()), bad)?;
        write_json(out, &Curriculum { shards: curriculum_shards(&items, cfg.sampling.curriculum_shards) })?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TileEntry {
    #[serde(flatten)]
    tile: Tile,
    classes: BTreeSet<ObjectClass>,
}

fn transform(t: &TransformCommand, cfg: &Config) -> anyhow::Result<()> {
    let pad = &cfg.transform.pad;
    match t {
        TransformCommand::Pad(a) => {
            let sets = load_sets(&a.input)?;
            let results: Vec<Result<BoxSet, String>> =
                sets.par_iter().map(|s| circular_pad(s, pad).map_err(|e| format!("{}: {e}", s.panorama_id))).collect();
            let mut out = Vec::new();
            let mut bad = Vec::new();
            for r in results {
                match r {
                    Ok(s) => out.push(s),
                    Err(e) => bad.push(e),
                }
            }
            check("padding", bad)?;
            write_sets(&a.out, &out)
        }
        TransformCommand::Unpad(a) => {
            let sets = load_sets(&a.input)?;
            let out: Vec<BoxSet> = sets.par_iter().map(|s| unpad(s, pad)).collect();
            write_sets(&a.out, &out)
        }
        TransformCommand::Tiles(a) => tiles(a, cfg),
    }
}

fn tiles(a: &TransformArgs, cfg: &Config) -> anyhow::Result<()> {
    let sets = load_sets(&a.input)?;
    let mut out: BTreeMap<String, Vec<TileEntry>> = BTreeMap::new();
    let mut bad = Vec::new();
    for s in &sets {
        match classification_tiles(s.width_px, s.height_px, &cfg.transform.tiles) {
            Ok(tiles) => {
                let labels = tile_labels(s, &tiles);
                let entries =
                    tiles.into_iter().zip(labels).map(|(tile, classes)| TileEntry { tile, classes }).collect();
                out.insert(s.panorama_id.clone(), entries);
            }
            Err(e) => bad.push(format!("{}: {e}", s.panorama_id)),
        }
    }
    check("tiling", bad)?;
    write_json(&a.out, &out)
}

#[derive(Serialize)]
struct DetectionEval {
    #[serde(flatten)]
    coco: CocoEval,
    recall_at_100: f64,
}

#[derive(Serialize)]
struct EvalReport {
    images: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    classification: Option<FScoreReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    detection: Option<DetectionEval>,
}

fn eval(a: &EvalArgs) -> anyhow::Result<()> {
    let truth = load_sets(&a.truth)?;
    let mut report = EvalReport { images: truth.len(), classification: None, detection: None };
    if let Some(p) = &a.labels {
        let pred: BTreeMap<String, BTreeSet<ObjectClass>> = read_json(p)?;
        let f = weighted_fscore(&pred, &presence(&truth))?;
        log::info!("weighted F-score {:.4}", f.weighted);
        report.classification = Some(f);
    }
    if let Some(p) = &a.detections {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let coco = to_coco(&truth);
        let dets = parse_results(&text, Some(&coco.images)).with_context(|| format!("detections {}", p.display()))?;
        let known: BTreeSet<&str> = truth.iter().map(|s| s.panorama_id.as_str()).collect();
        let unknown: BTreeSet<String> =
            dets.iter().filter(|d| !known.contains(d.image_id.as_str())).map(|d| d.image_id.clone()).collect();
        check(
            format!("detections in {}", p.display()),
            unknown.into_iter().map(|id| format!("image `{id}` has no ground truth")).collect(),
        )?;
        let coco = coco_map(&dets, &truth, &coco_thresholds());
        log::info!("mAP {:.4}, mAP50 {:.4}", coco.map, coco.map50);
        report.detection = Some(DetectionEval { coco, recall_at_100: recall_at_100(&dets, &truth) });
    }
    write_json(&a.out, &report)
}

fn find_image(dir: &Path, id: &str) -> anyhow::Result<Option<PathBuf>> {
    let mut hits: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.file_stem().is_some_and(|s| s == id))
        .collect();
    hits.sort();
    Ok(hits.into_iter().next())
}

fn serve(a: &ServeArgs, cfg: &Config, seed: u64) -> anyhow::Result<()> {
    let sets = load_sets(&a.boxes)?;
    let mut gold: BTreeMap<String, BoxSet> = match &a.gold {
        Some(d) => load_sets(d)?.into_iter().map(|s| (s.panorama_id.clone(), s)).collect(),
        None => BTreeMap::new(),
    };
    let hoods: BTreeMap<String, String> = match &a.neighbourhoods {
        Some(p) => read_json(p)?,
        None => BTreeMap::new(),
    };
    let mut records = Vec::with_capacity(sets.len());
    for set in sets {
        let id = set.panorama_id.clone();
        let image_path = match &a.images {
            Some(d) => find_image(d, &id)?,
            None => None,
        };
        records.push(ImageRecord { gold: gold.remove(&id), neighbourhood: hoods.get(&id).cloned(), image_path, set });
    }
    check("gold sets", gold.keys().map(|id| format!("gold `{id}` has no matching box set")).collect())?;
    let store = Store::open(&a.data).with_context(|| format!("opening {}", a.data.display()))?;
    let mut svc_cfg = cfg.service.clone();
    if let Some(b) = &a.bind {
        svc_cfg.bind = b.clone();
    }
    let bind = svc_cfg.bind.clone();
    let svc = Service::new(svc_cfg, cfg.gold, records, a.qualification.clone(), Some(store), seed)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(panobox_service::serve(Arc::new(svc), &bind))?;
    Ok(())
}
