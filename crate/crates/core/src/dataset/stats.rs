use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::{BBox, BoxSet, ObjectClass};
use crate::units::units_of;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeBucket {
    Small,
    Medium,
    Large,
}

const SMALL_MAX: f64 = 32.0 * 32.0;
const MEDIUM_MAX: f64 = 96.0 * 96.0;

fn bucket_of_area(area: f64) -> SizeBucket {
    if area < SMALL_MAX {
        SizeBucket::Small
    } else if area <= MEDIUM_MAX {
        SizeBucket::Medium
    } else {
        SizeBucket::Large
    }
}

/// COCO object-size bucket by pixel area.
pub fn size_bucket(b: &BBox) -> SizeBucket {
    bucket_of_area(b.area())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsConfig {
    pub top_band_px: f64,
    pub bottom_band_px: f64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig { top_band_px: 50.0, bottom_band_px: 150.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassStats {
    pub instances: usize,
    pub small: usize,
    pub medium: usize,
    pub large: usize,
    pub in_top_band: usize,
    pub in_bottom_band: usize,
}

impl ClassStats {
    fn pct(&self, n: usize) -> f64 {
        if self.instances == 0 {
            0.0
        } else {
            100.0 * n as f64 / self.instances as f64
        }
    }

    pub fn small_pct(&self) -> f64 {
        self.pct(self.small)
    }

    pub fn medium_pct(&self) -> f64 {
        self.pct(self.medium)
    }

    pub fn large_pct(&self) -> f64 {
        self.pct(self.large)
    }

    pub fn top_band_pct(&self) -> f64 {
        self.pct(self.in_top_band)
    }

    pub fn bottom_band_pct(&self) -> f64 {
        self.pct(self.in_bottom_band)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub images: usize,
    pub per_class: BTreeMap<ObjectClass, ClassStats>,
    /// Number of distinct classes in an image → number of images.
    pub classes_per_image: BTreeMap<usize, usize>,
    /// Number of instances in an image → number of images.
    pub instances_per_image: BTreeMap<usize, usize>,
}

impl DatasetStats {
    pub fn total_instances(&self) -> usize {
        self.per_class.values().map(|c| c.instances).sum()
    }

    /// One row per class with counts and percentages.
    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("class,instances,small_pct,medium_pct,large_pct,top_band_pct,bottom_band_pct\n");
        for (c, s) in &self.per_class {
            let _ = writeln!(
                out,
                "{},{},{:.4},{:.4},{:.4},{:.4},{:.4}",
                c.name(),
                s.instances,
                s.small_pct(),
                s.medium_pct(),
                s.large_pct(),
                s.top_band_pct(),
                s.bottom_band_pct()
            );
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("kind,value,images\n");
        for (k, v) in &self.classes_per_image {
            let _ = writeln!(out, "classes_per_image,{k},{v}");
        }
        for (k, v) in &self.instances_per_image {
            let _ = writeln!(out, "instances_per_image,{k},{v}");
        }
        out
    }
}

/// Counts per class and per image. A seam-linked pair is one instance,
/// bucketed by its summed area.
pub fn dataset_stats(sets: &[BoxSet], cfg: &StatsConfig) -> DatasetStats {
    let mut per_class: BTreeMap<ObjectClass, ClassStats> =
        ObjectClass::ALL.iter().map(|&c| (c, ClassStats::default())).collect();
    let mut classes_per_image = BTreeMap::new();
    let mut instances_per_image = BTreeMap::new();
    for set in sets {
        let units = units_of(set);
        let bottom = set.height_px as f64 - cfg.bottom_band_px;
        let mut classes = BTreeSet::new();
        for u in &units {
            classes.insert(u.class());
            let s = per_class.get_mut(&u.class()).expect("all classes present");
            s.instances += 1;
            match bucket_of_area(u.area()) {
                SizeBucket::Small => s.small += 1,
                SizeBucket::Medium => s.medium += 1,
                SizeBucket::Large => s.large += 1,
            }
            let (y0, y1) = (u.members[0].y_min, u.members[0].y_max);
            s.in_top_band += usize::from(y0 < cfg.top_band_px);
            s.in_bottom_band += usize::from(y1 > bottom);
        }
        *classes_per_image.entry(classes.len()).or_insert(0) += 1;
        *instances_per_image.entry(units.len()).or_insert(0) += 1;
    }
    DatasetStats { images: sets.len(), per_class, classes_per_image, instances_per_image }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Rect, Stage};
    use proptest::prelude::*;
    use ObjectClass::{Building, Tree};

    fn b(class: ObjectClass, w: f64, h: f64) -> BBox {
        BBox::new(class, Rect::new(0.0, 100.0, w, 100.0 + h))
    }

    fn set(boxes: Vec<BBox>) -> BoxSet {
        let mut s = BoxSet::new("p", 1400, 700, Stage::Refined);
        s.boxes = boxes;
        s
    }

    #[test]
    fn bucket_boundaries() {
        assert_eq!(size_bucket(&b(Tree, 30.0, 30.0)), SizeBucket::Small);
        assert_eq!(size_bucket(&b(Tree, 32.0, 32.0)), SizeBucket::Medium);
        assert_eq!(size_bucket(&b(Tree, 96.0, 96.0)), SizeBucket::Medium);
        assert_eq!(size_bucket(&b(Tree, 96.0, 96.01)), SizeBucket::Large);
        assert_eq!(size_bucket(&b(Tree, 100.0, 100.0)), SizeBucket::Large);
    }

    proptest! {
        #[test]
        fn buckets_partition(w in 0.1..500.0f64, h in 0.1..500.0f64) {
            let a = w * h;
            let n = [a < 1024.0, (1024.0..=9216.0).contains(&a), a > 9216.0].iter().filter(|x| **x).count();
            prop_assert_eq!(n, 1);
            let expect = if a < 1024.0 { SizeBucket::Small } else if a <= 9216.0 { SizeBucket::Medium } else { SizeBucket::Large };
            prop_assert_eq!(size_bucket(&b(Tree, w, h)), expect);
        }
    }

    #[test]
    fn empty_collection_is_all_zero() {
        let s = dataset_stats(&[], &StatsConfig::default());
        assert_eq!(s.images, 0);
        assert_eq!(s.per_class.len(), 22);
        assert!(s.per_class.values().all(|c| *c == ClassStats::default()));
        assert!(s.classes_per_image.is_empty() && s.instances_per_image.is_empty());
    }

    #[test]
    fn single_image_counts() {
        let s = set(vec![
            b(Building, 10.0, 10.0),
            b(Building, 10.0, 10.0),
            b(Building, 10.0, 10.0),
            b(Tree, 1.0, 1.0),
            b(Tree, 1.0, 1.0),
        ]);
        let st = dataset_stats(&[s], &StatsConfig::default());
        assert_eq!(st.classes_per_image, BTreeMap::from([(2, 1)]));
        assert_eq!(st.instances_per_image, BTreeMap::from([(5, 1)]));
    }

    #[test]
    fn ten_box_hand_tally() {
        let at = |class, y0: f64, y1: f64, w: f64| BBox::new(class, Rect::new(10.0, y0, 10.0 + w, y1));
        let mut r = at(Tree, 20.0, 80.0, 20.0);
        let mut l = BBox::new(Tree, Rect::new(0.0, 20.0, 20.0, 80.0));
        r.x_min = 1380.0;
        r.x_max = 1400.0;
        r.link_id = Some("k".into());
        l.link_id = Some("k".into());
        let img1 = set(vec![
            at(Building, 100.0, 400.0, 200.0), // large
            at(Building, 10.0, 600.0, 100.0),  // large, both bands
            at(Tree, 200.0, 230.0, 30.0),      // small
            r,
            l, // one tree instance of area 2400, top band
        ]);
        let img2 = set(vec![
            at(ObjectClass::TrafficSign, 300.0, 310.0, 5.0),  // small
            at(ObjectClass::TrafficSign, 500.0, 600.0, 40.0), // medium, bottom band
            at(Building, 0.0, 50.0, 50.0),                    // medium, top band
            at(Tree, 300.0, 340.0, 40.0),                     // medium
            at(Tree, 100.0, 150.0, 10.0),                     // small
        ]);
        let st = dataset_stats(&[img1, img2], &StatsConfig::default());
        assert_eq!(st.total_instances(), 9);
        assert_eq!(
            st.per_class[&Building],
            ClassStats { instances: 3, small: 0, medium: 1, large: 2, in_top_band: 2, in_bottom_band: 1 }
        );
        assert_eq!(
            st.per_class[&Tree],
            ClassStats { instances: 4, small: 2, medium: 2, large: 0, in_top_band: 1, in_bottom_band: 0 }
        );
        assert_eq!(
            st.per_class[&ObjectClass::TrafficSign],
            ClassStats { instances: 2, small: 1, medium: 1, large: 0, in_top_band: 0, in_bottom_band: 1 }
        );
        assert_eq!(st.classes_per_image, BTreeMap::from([(2, 1), (3, 1)]));
        assert_eq!(st.instances_per_image, BTreeMap::from([(4, 1), (5, 1)]));
        assert!((st.per_class[&Building].large_pct() - 200.0 / 3.0).abs() < 1e-12);
        assert!(st.per_class_csv().lines().any(|l| l.starts_with("tree,4,50.0000,50.0000,0.0000,25.0000,0.0000")));
    }
}
