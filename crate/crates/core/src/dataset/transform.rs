use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{BBox, BoxSet, ObjectClass, Rect};
use crate::units::units_of;

/// Metadata flag on partial copies created in the pad strips.
pub const PAD_DUPLICATE_KEY: &str = "pad_duplicate";
/// Metadata entry holding the link id of a pair joined across the seam;
/// the padded canvas itself has no linked boxes.
pub const PAD_LINK_KEY: &str = "pad_link";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PadParams {
    pub pad_px: u32,
    pub min_dup_width: f64,
    pub crop_bottom: u32,
}

impl Default for PadParams {
    fn default() -> Self {
        PadParams { pad_px: 25, min_dup_width: 20.0, crop_bottom: 150 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("pad of {pad} px does not fit a {width} px wide image")]
    PadTooWide { pad: u32, width: u32 },
    #[error("crop of {crop} px does not fit a {height} px high image")]
    CropTooTall { crop: u32, height: u32 },
    #[error("tiles need a {expected_w}x{expected_h} canvas, got {width}x{height}")]
    Geometry { expected_w: u32, expected_h: u32, width: u32, height: u32 },
}

fn with_rect(template: &BBox, r: Rect) -> BBox {
    let mut b = template.clone();
    b.set_rect(r);
    b
}

/// Circularly pads both sides by `pad_px` and crops the bottom.
///
/// A linked pair becomes one box across the seam on the side of its wider
/// half, its link id moved to the `pad_link` metadata entry. A single box with at least `min_dup_width`
/// px inside the strip copied to the opposite pad gets a flagged partial
/// duplicate there.
pub fn circular_pad(set: &BoxSet, p: &PadParams) -> Result<BoxSet, TransformError> {
    if p.pad_px >= set.width_px {
        return Err(TransformError::PadTooWide { pad: p.pad_px, width: set.width_px });
    }
    if p.crop_bottom >= set.height_px {
        return Err(TransformError::CropTooTall { crop: p.crop_bottom, height: set.height_px });
    }
    let w = set.width_px as f64;
    let pad = p.pad_px as f64;
    let (cw, ch) = (set.width_px + 2 * p.pad_px, set.height_px - p.crop_bottom);
    let canvas = Rect::new(0.0, 0.0, cw as f64, ch as f64);
    let fit = |r: Rect| r.intersection(&canvas);

    let mut out = Vec::new();
    for u in units_of(set) {
        if u.is_linked() {
            let (right, left) = (&u.members[0], &u.members[1]);
            let r = if right.width() >= left.width() {
                Rect::new(right.x_min + pad, right.y_min, w + pad + left.x_max, right.y_max)
            } else {
                Rect::new(right.x_min - w + pad, right.y_min, left.x_max + pad, right.y_max)
            };
            if let Some(r) = fit(r) {
                let mut b = with_rect(right, r);
                if let Some(link) = b.link_id.take() {
                    b.metadata.insert(PAD_LINK_KEY.into(), Value::String(link));
                }
                out.push(b);
            }
            continue;
        }
        let b = &u.members[0];
        if let Some(r) = fit(b.rect().translate(pad, 0.0)) {
            out.push(with_rect(b, r));
        }
        // Left pad shows image x in [w - pad, w]; right pad shows [0, pad].
        for (strip, shift) in [((w - pad, w), pad - w), ((0.0, pad), w + pad)] {
            let lo = b.x_min.max(strip.0);
            let hi = b.x_max.min(strip.1);
            if hi - lo >= p.min_dup_width {
                if let Some(r) = fit(Rect::new(lo + shift, b.y_min, hi + shift, b.y_max)) {
                    let mut d = with_rect(b, r);
                    d.metadata.insert(PAD_DUPLICATE_KEY.into(), Value::Bool(true));
                    out.push(d);
                }
            }
        }
    }
    Ok(BoxSet { width_px: cw, height_px: ch, boxes: out, ..set.clone() })
}

/// Inverse of [`circular_pad`] for boxes the crop did not clip: drops pad
/// duplicates, shifts back and re-splits seam-crossing linked boxes.
pub fn unpad(set: &BoxSet, p: &PadParams) -> BoxSet {
    let w = (set.width_px - 2 * p.pad_px) as f64;
    let pad = p.pad_px as f64;
    let mut out = Vec::new();
    for b in &set.boxes {
        if b.metadata.get(PAD_DUPLICATE_KEY) == Some(&Value::Bool(true)) {
            continue;
        }
        let r = b.rect().translate(-pad, 0.0);
        let r = if r.x_min < 0.0 { r.translate(w, 0.0) } else { r };
        let mut b = b.clone();
        let link = match b.metadata.remove(PAD_LINK_KEY) {
            Some(Value::String(s)) => Some(s),
            _ => None,
        };
        match link {
            Some(link) if r.x_max > w => {
                b.link_id = Some(link);
                out.push(with_rect(&b, Rect::new(r.x_min, r.y_min, w, r.y_max)));
                out.push(with_rect(&b, Rect::new(0.0, r.y_min, r.x_max - w, r.y_max)));
            }
            _ => out.push(with_rect(&b, r)),
        }
    }
    BoxSet { width_px: w as u32, height_px: set.height_px + p.crop_bottom, boxes: out, ..set.clone() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TileParams {
    pub top_crop: u32,
    pub tile_px: u32,
    pub overlap_px: u32,
    pub count: u32,
    /// Declared network input size each tile is resized to.
    pub output_px: u32,
}

impl Default for TileParams {
    fn default() -> Self {
        TileParams { top_crop: 50, tile_px: 500, overlap_px: 25, count: 3, output_px: 224 }
    }
}

/// A square crop window in padded-canvas pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub index: u32,
    pub window: Rect,
    pub output_px: u32,
}

/// Classification crops of a padded, bottom-cropped canvas after removing
/// the top band.
pub fn classification_tiles(width: u32, height: u32, t: &TileParams) -> Result<Vec<Tile>, TransformError> {
    let step = t.tile_px - t.overlap_px;
    let expected_w = t.tile_px + (t.count.max(1) - 1) * step;
    let expected_h = t.tile_px + t.top_crop;
    if width != expected_w || height != expected_h {
        return Err(TransformError::Geometry { expected_w, expected_h, width, height });
    }
    Ok((0..t.count)
        .map(|i| {
            let x = (i * step) as f64;
            let y = t.top_crop as f64;
            Tile {
                index: i,
                window: Rect::new(x, y, x + t.tile_px as f64, y + t.tile_px as f64),
                output_px: t.output_px,
            }
        })
        .collect())
}

/// Classes present in each tile: a tile is positive for a class when any
/// box of that class overlaps its window.
pub fn tile_labels(set: &BoxSet, tiles: &[Tile]) -> Vec<BTreeSet<ObjectClass>> {
    tiles
        .iter()
        .map(|t| set.boxes.iter().filter(|b| b.rect().intersection_area(&t.window) > 0.0).map(|b| b.class).collect())
        .collect()
}
