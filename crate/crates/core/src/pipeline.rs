//! End-to-end box generation for one panorama.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::geometry::{measure, query_radius, Elevation};
use crate::ingest::ObjectStore;
use crate::model::{BoxSet, ClassTable, PanoramaMeta, Stage};
use crate::projection::{project_box, CameraModel, Projected};
use crate::refine::{refine_pipeline, RefineError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub object_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub set: BoxSet,
    pub skipped: Vec<Skipped>,
}

/// Projects every object within the query radius of the panorama into
/// boxes at stage `Generated`. Objects that cannot be measured or
/// projected are reported in `skipped`.
pub fn generate_boxes(
    pano: &PanoramaMeta,
    store: &ObjectStore,
    elevation: Option<Elevation<'_>>,
    classes: &ClassTable,
    cfg: &Config,
) -> Generated {
    let cm = CameraModel::for_panorama(pano, &cfg.projection);
    let mut set = BoxSet::new(pano.id.clone(), pano.width_px, pano.height_px, Stage::Generated);
    let mut skipped = Vec::new();
    let mut links = BTreeSet::new();
    let mut objects = query_radius(store, pano.position, cfg.geometry.query_radius_m);
    objects.sort_by(|a, b| a.id.cmp(&b.id));
    for obj in objects {
        let skip = |reason: String| Skipped { object_id: obj.id.clone(), reason };
        let m = match measure(obj, pano.position, classes, elevation, &cfg.geometry) {
            Ok(m) => m,
            Err(e) => {
                skipped.push(skip(e.to_string()));
                continue;
            }
        };
        match project_box(&cm, &m, cfg.projection.min_box_px) {
            Ok(Projected::Single(b)) => set.boxes.push(b),
            Ok(Projected::Linked(mut a, mut b)) => {
                let base = a.link_id.clone().expect("linked halves carry a link id");
                let mut link = base.clone();
                let mut n = 1;
                while !links.insert(link.clone()) {
                    n += 1;
                    link = format!("{base}#{n}");
                }
                a.link_id = Some(link.clone());
                b.link_id = Some(link);
                set.boxes.extend([a, b]);
            }
            Err(e) => skipped.push(skip(e.to_string())),
        }
    }
    debug_assert!(set.validate().is_ok());
    Generated { set, skipped }
}

/// [`generate_boxes`] followed by refinement.
pub fn generate_refined(
    pano: &PanoramaMeta,
    store: &ObjectStore,
    elevation: Option<Elevation<'_>>,
    classes: &ClassTable,
    cfg: &Config,
) -> Result<Generated, RefineError> {
    let g = generate_boxes(pano, store, elevation, classes, cfg);
    Ok(Generated { set: refine_pipeline(&g.set, &cfg.refine)?, skipped: g.skipped })
}
