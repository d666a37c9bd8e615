use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::model::{GeoPoint, Geometry, GeometryError, Metadata, ObjectClass, Polygon, Polyline, UrbanObject};

/// Property keys with a fixed meaning; everything else is kept as metadata.
const RESERVED: [&str; 5] = ["class", "id", "source", "height_m", "width_m"];

/// Maps source tags (e.g. a municipal category name) to object classes.
///
/// Explicit rules take precedence; unmatched tags fall back to the class
/// names themselves ("building", "Traffic Sign", ...).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassMap {
    rules: BTreeMap<String, ObjectClass>,
}

impl ClassMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_rules(rules: impl IntoIterator<Item = (String, ObjectClass)>) -> Self {
        ClassMap { rules: rules.into_iter().map(|(k, v)| (k.trim().to_lowercase(), v)).collect() }
    }

    pub fn insert(&mut self, tag: &str, class: ObjectClass) {
        self.rules.insert(tag.trim().to_lowercase(), class);
    }

    pub fn resolve(&self, tag: &str) -> Option<ObjectClass> {
        self.rules.get(&tag.trim().to_lowercase()).copied().or_else(|| tag.parse().ok())
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("expected a GeoJSON FeatureCollection")]
    NotFeatureCollection,
}

/// A single feature that could not be turned into an object.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureError {
    pub index: usize,
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Debug)]
pub struct ObjectLoad {
    pub store: ObjectStore,
    /// Features whose class tag did not map to any class.
    pub unmapped: usize,
    pub errors: Vec<FeatureError>,
}

/// Immutable spatial index over objects, bucketed by a uniform cell grid.
#[derive(Debug, Clone)]
pub struct ObjectStore {
    objects: Vec<UrbanObject>,
    cell_size: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    /// Objects spanning too many cells to bucket; always scanned.
    oversized: Vec<usize>,
}

const MAX_CELLS_PER_OBJECT: i64 = 256;

impl ObjectStore {
    pub const DEFAULT_CELL_SIZE: f64 = 100.0;

    pub fn new(objects: Vec<UrbanObject>) -> Self {
        Self::with_cell_size(objects, Self::DEFAULT_CELL_SIZE)
    }

    pub fn with_cell_size(objects: Vec<UrbanObject>, cell_size: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        let mut oversized = Vec::new();
        for (i, obj) in objects.iter().enumerate() {
            let (lo, hi) = obj.geometry.extent();
            let (c0, r0) = cell_key(lo, cell_size);
            let (c1, r1) = cell_key(hi, cell_size);
            if (c1 - c0 + 1).saturating_mul(r1 - r0 + 1) > MAX_CELLS_PER_OBJECT {
                oversized.push(i);
                continue;
            }
            for c in c0..=c1 {
                for r in r0..=r1 {
                    cells.entry((c, r)).or_default().push(i);
                }
            }
        }
        ObjectStore { objects, cell_size, cells, oversized }
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn objects(&self) -> &[UrbanObject] {
        &self.objects
    }

    /// Objects whose geometry intersects the closed disk, in insertion order.
    pub fn within(&self, center: GeoPoint, radius: f64) -> Vec<&UrbanObject> {
        let lo = GeoPoint::new(center.x - radius, center.y - radius);
        let hi = GeoPoint::new(center.x + radius, center.y + radius);
        let (c0, r0) = cell_key(lo, self.cell_size);
        let (c1, r1) = cell_key(hi, self.cell_size);
        let mut hits: Vec<usize> = self.oversized.clone();
        for c in c0..=c1 {
            for r in r0..=r1 {
                if let Some(ids) = self.cells.get(&(c, r)) {
                    hits.extend_from_slice(ids);
                }
            }
        }
        hits.sort_unstable();
        hits.dedup();
        hits.into_iter().map(|i| &self.objects[i]).filter(|o| o.geometry.distance_to(center) <= radius).collect()
    }
}

fn cell_key(p: GeoPoint, size: f64) -> (i64, i64) {
    ((p.x / size).floor() as i64, (p.y / size).floor() as i64)
}

fn point_from(v: &Value) -> Option<GeoPoint> {
    let a = v.as_array()?;
    let (x, y) = (a.first()?.as_f64()?, a.get(1)?.as_f64()?);
    Some(GeoPoint::new(x, y))
}

fn points_from(v: &Value) -> Option<Vec<GeoPoint>> {
    v.as_array()?.iter().map(point_from).collect()
}

fn parse_geometry(g: &Value) -> Result<Geometry, String> {
    let kind = g.get("type").and_then(Value::as_str).ok_or("geometry has no type")?;
    let coords = g.get("coordinates").ok_or("geometry has no coordinates")?;
    let bad = || format!("malformed {kind} coordinates");
    let geom_err = |e: GeometryError| e.to_string();
    match kind {
        "Point" => Ok(Geometry::Point(point_from(coords).ok_or_else(bad)?)),
        "LineString" => Ok(Geometry::Polyline(Polyline::new(points_from(coords).ok_or_else(bad)?).map_err(geom_err)?)),
        // Holes are not modelled; only the outer ring is used.
        "Polygon" => {
            let outer = coords.as_array().and_then(|r| r.first()).ok_or_else(bad)?;
            Ok(Geometry::Polygon(Polygon::new(points_from(outer).ok_or_else(bad)?).map_err(geom_err)?))
        }
        other => Err(format!("unsupported geometry type {other}")),
    }
}

fn positive(props: &Map<String, Value>, key: &str) -> Result<Option<f64>, String> {
    match props.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => match v.as_f64() {
            Some(x) if x > 0.0 && x.is_finite() => Ok(Some(x)),
            _ => Err(format!("`{key}` must be a positive number")),
        },
    }
}

enum FeatureOutcome {
    Object(UrbanObject),
    Unmapped,
}

fn parse_feature(
    index: usize,
    f: &Value,
    class_map: &ClassMap,
    default_source: &str,
) -> Result<FeatureOutcome, FeatureError> {
    let empty = Map::new();
    let props = f.get("properties").and_then(Value::as_object).unwrap_or(&empty);
    let id = f.get("id").or_else(|| props.get("id")).map(|v| match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    });
    let fail = |reason: String| FeatureError { index, id: id.clone(), reason };

    let Some(tag) = props.get("class").and_then(Value::as_str) else {
        return Err(fail("missing string property `class`".into()));
    };
    let Some(class) = class_map.resolve(tag) else {
        return Ok(FeatureOutcome::Unmapped);
    };
    let geometry = parse_geometry(f.get("geometry").unwrap_or(&Value::Null)).map_err(&fail)?;
    let height_override = positive(props, "height_m").map_err(&fail)?;
    let width_override = positive(props, "width_m").map_err(&fail)?;
    let source = props.get("source").and_then(Value::as_str).unwrap_or(default_source).to_string();
    let metadata: Metadata =
        props.iter().filter(|(k, _)| !RESERVED.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect();
    Ok(FeatureOutcome::Object(UrbanObject {
        id: id.clone().unwrap_or_else(|| format!("feature-{index}")),
        class,
        geometry,
        source,
        metadata,
        height_override,
        width_override,
    }))
}

/// Parses a FeatureCollection of Point, LineString and Polygon features.
///
/// Features with unmapped classes are counted and skipped; invalid features
/// are reported individually and excluded.
pub fn parse_objects(text: &str, class_map: &ClassMap, default_source: &str) -> Result<ObjectLoad, LoadError> {
    let doc: Value = serde_json::from_str(text)?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(LoadError::NotFeatureCollection);
    }
    let features = doc.get("features").and_then(Value::as_array).ok_or(LoadError::NotFeatureCollection)?;

    let mut objects = Vec::new();
    let mut unmapped = 0;
    let mut errors = Vec::new();
    for (index, f) in features.iter().enumerate() {
        match parse_feature(index, f, class_map, default_source) {
            Ok(FeatureOutcome::Object(o)) => objects.push(o),
            Ok(FeatureOutcome::Unmapped) => unmapped += 1,
            Err(e) => errors.push(e),
        }
    }
    Ok(ObjectLoad { store: ObjectStore::new(objects), unmapped, errors })
}

/// Loads objects from a file; the file stem is the default `source` tag.
pub fn load_objects(path: impl AsRef<Path>, class_map: &ClassMap) -> Result<ObjectLoad, LoadError> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.display().to_string(), source })?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("objects");
    parse_objects(&text, class_map, stem)
}

fn coords(points: &[GeoPoint]) -> Value {
    Value::Array(points.iter().map(|p| json!([p.x, p.y])).collect())
}

/// Serializes objects into the format read by [`parse_objects`].
pub fn objects_to_geojson(objects: &[UrbanObject]) -> Value {
    let features: Vec<Value> = objects
        .iter()
        .map(|o| {
            let geometry = match &o.geometry {
                Geometry::Point(p) => json!({"type": "Point", "coordinates": [p.x, p.y]}),
                Geometry::Polyline(l) => json!({"type": "LineString", "coordinates": coords(l.points())}),
                Geometry::Polygon(p) => json!({"type": "Polygon", "coordinates": [coords(p.ring())]}),
            };
            let mut props: Map<String, Value> = o.metadata.clone().into_iter().collect();
            props.insert("class".into(), json!(o.class.name()));
            props.insert("source".into(), json!(o.source));
            if let Some(h) = o.height_override {
                props.insert("height_m".into(), json!(h));
            }
            if let Some(w) = o.width_override {
                props.insert("width_m".into(), json!(w));
            }
            json!({"type": "Feature", "id": o.id, "geometry": geometry, "properties": props})
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

pub fn save_objects(path: impl AsRef<Path>, objects: &[UrbanObject]) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(&objects_to_geojson(objects)).map_err(std::io::Error::other)?;
    crate::fsio::write_atomic(path, text)
}
