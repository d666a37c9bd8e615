//! COCO-style annotation files with an `ext` block that keeps what plain
//! COCO cannot express: exact corner coordinates, seam links, distances,
//! provenance and metadata.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::Detection;
use crate::model::{BBox, BoxSet, BoxSetError, Metadata, ObjectClass, Rect, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoFile {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub ext: ImageExt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageExt {
    pub panorama_id: String,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    /// `[x, y, w, h]`
    pub bbox: [f64; 4],
    pub area: f64,
    pub iscrowd: u8,
    #[serde(default)]
    pub ext: AnnotationExt,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationExt {
    /// `[x_min, y_min, x_max, y_max]`, preferred over `bbox` on import.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xyxy: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: Metadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u32,
    pub name: String,
    pub supercategory: String,
}

#[derive(Debug, Error)]
pub enum CocoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown category id {0}")]
    Category(u32),
    #[error("annotation {0} refers to missing image {1}")]
    Image(u64, u64),
    #[error("expected exactly one image, found {0}")]
    ImageCount(usize),
    #[error("invalid box set `{0}`: {1}")]
    Invalid(String, BoxSetError),
}

pub fn categories() -> Vec<CocoCategory> {
    ObjectClass::ALL
        .iter()
        .map(|c| CocoCategory { id: c.category_id(), name: c.name().into(), supercategory: "urban_object".into() })
        .collect()
}

/// One image per box set, numbered from 1 in input order.
pub fn to_coco(sets: &[BoxSet]) -> CocoFile {
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    for (k, s) in sets.iter().enumerate() {
        let image_id = k as u64 + 1;
        images.push(CocoImage {
            id: image_id,
            file_name: format!("{}.jpg", s.panorama_id),
            width: s.width_px,
            height: s.height_px,
            ext: ImageExt { panorama_id: s.panorama_id.clone(), stage: s.stage },
        });
        for b in &s.boxes {
            annotations.push(CocoAnnotation {
                id: annotations.len() as u64 + 1,
                image_id,
                category_id: b.class.category_id(),
                bbox: [b.x_min, b.y_min, b.width(), b.height()],
                area: b.area(),
                iscrowd: 0,
                ext: AnnotationExt {
                    xyxy: Some([b.x_min, b.y_min, b.x_max, b.y_max]),
                    object_id: b.object_id.clone(),
                    link_id: b.link_id.clone(),
                    distance_m: b.distance_m,
                    source: b.source.clone(),
                    metadata: b.metadata.clone(),
                },
            });
        }
    }
    CocoFile { images, annotations, categories: categories() }
}

/// Box sets in image order, boxes in annotation order. Files without the
/// `ext` blocks load as stage `Gold` with corners from `bbox`.
pub fn from_coco(file: &CocoFile) -> Result<Vec<BoxSet>, CocoError> {
    let mut sets: Vec<BoxSet> = Vec::new();
    let mut slot: BTreeMap<u64, usize> = BTreeMap::new();
    for img in &file.images {
        slot.insert(img.id, sets.len());
        sets.push(BoxSet::new(img.ext.panorama_id.clone(), img.width, img.height, img.ext.stage));
    }
    for a in &file.annotations {
        let class = ObjectClass::from_category_id(a.category_id).ok_or(CocoError::Category(a.category_id))?;
        let &i = slot.get(&a.image_id).ok_or(CocoError::Image(a.id, a.image_id))?;
        let [x0, y0, x1, y1] =
            a.ext.xyxy.unwrap_or([a.bbox[0], a.bbox[1], a.bbox[0] + a.bbox[2], a.bbox[1] + a.bbox[3]]);
        let mut b = BBox::new(class, Rect::new(x0, y0, x1, y1));
        b.object_id = a.ext.object_id.clone();
        b.link_id = a.ext.link_id.clone();
        b.distance_m = a.ext.distance_m;
        b.source = a.ext.source.clone();
        b.metadata = a.ext.metadata.clone();
        sets[i].boxes.push(b);
    }
    for s in &sets {
        s.validate().map_err(|e| CocoError::Invalid(s.panorama_id.clone(), e))?;
    }
    Ok(sets)
}

pub fn format_boxset(set: &BoxSet) -> String {
    serde_json::to_string_pretty(&to_coco(std::slice::from_ref(set))).expect("coco serializes") + "\n"
}

pub fn parse_boxset(text: &str) -> Result<BoxSet, CocoError> {
    let file: CocoFile = serde_json::from_str(text)?;
    let mut sets = from_coco(&file)?;
    match sets.len() {
        1 => Ok(sets.remove(0)),
        n => Err(CocoError::ImageCount(n)),
    }
}

/// Writes one panorama's boxes as a single-image COCO file.
pub fn save_boxset(path: impl AsRef<Path>, set: &BoxSet) -> Result<(), CocoError> {
    crate::fsio::write_atomic(path, format_boxset(set))?;
    Ok(())
}

pub fn load_boxset(path: impl AsRef<Path>) -> Result<BoxSet, CocoError> {
    parse_boxset(&std::fs::read_to_string(path)?)
}

/// Loads every `*.json` box set in a directory, ordered by file name.
pub fn load_boxset_dir(dir: impl AsRef<Path>) -> Result<Vec<BoxSet>, CocoError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    paths.iter().map(load_boxset).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageRef {
    Name(String),
    Id(u64),
}

/// One entry of a COCO results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoResult {
    pub image_id: ImageRef,
    pub category_id: u32,
    pub bbox: [f64; 4],
    pub score: f64,
}

/// Detections from a COCO results array. Numeric image ids are resolved
/// through `images` when given, otherwise used as panorama ids verbatim.
pub fn parse_results(text: &str, images: Option<&[CocoImage]>) -> Result<Vec<Detection>, CocoError> {
    let rows: Vec<CocoResult> = serde_json::from_str(text)?;
    let names: BTreeMap<u64, &str> = images.unwrap_or(&[]).iter().map(|i| (i.id, i.ext.panorama_id.as_str())).collect();
    rows.into_iter()
        .map(|r| {
            let class = ObjectClass::from_category_id(r.category_id).ok_or(CocoError::Category(r.category_id))?;
            let image_id = match r.image_id {
                ImageRef::Name(s) => s,
                ImageRef::Id(n) => names.get(&n).map_or_else(|| n.to_string(), |s| s.to_string()),
            };
            let [x, y, w, h] = r.bbox;
            Ok(Detection { image_id, class, rect: Rect::new(x, y, x + w, y + h), score: r.score })
        })
        .collect()
}

pub fn format_results(dets: &[Detection]) -> String {
    let rows: Vec<CocoResult> = dets
        .iter()
        .map(|d| CocoResult {
            image_id: ImageRef::Name(d.image_id.clone()),
            category_id: d.class.category_id(),
            bbox: [d.rect.x_min, d.rect.y_min, d.rect.width(), d.rect.height()],
            score: d.score,
        })
        .collect();
    serde_json::to_string(&rows).expect("results serialize")
}
