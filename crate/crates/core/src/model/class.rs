use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The 22 urban object categories annotated by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    AdvertisingColumn,
    BicyclePath,
    Building,
    Bus,
    Bridge,
    Ferry,
    HighVoltagePylon,
    Lamppost,
    Park,
    Playground,
    PublicToilet,
    PublicTransportStop,
    RailwayTrack,
    SportFacility,
    TrafficLight,
    TrafficSign,
    Train,
    Tram,
    TrashContainer,
    Tree,
    Waterway,
    Windturbine,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 22] = [
        ObjectClass::AdvertisingColumn,
        ObjectClass::BicyclePath,
        ObjectClass::Building,
        ObjectClass::Bus,
        ObjectClass::Bridge,
        ObjectClass::Ferry,
        ObjectClass::HighVoltagePylon,
        ObjectClass::Lamppost,
        ObjectClass::Park,
        ObjectClass::Playground,
        ObjectClass::PublicToilet,
        ObjectClass::PublicTransportStop,
        ObjectClass::RailwayTrack,
        ObjectClass::SportFacility,
        ObjectClass::TrafficLight,
        ObjectClass::TrafficSign,
        ObjectClass::Train,
        ObjectClass::Tram,
        ObjectClass::TrashContainer,
        ObjectClass::Tree,
        ObjectClass::Waterway,
        ObjectClass::Windturbine,
    ];

    /// Machine name, as used in files and configuration.
    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::AdvertisingColumn => "advertising_column",
            ObjectClass::BicyclePath => "bicycle_path",
            ObjectClass::Building => "building",
            ObjectClass::Bus => "bus",
            ObjectClass::Bridge => "bridge",
            ObjectClass::Ferry => "ferry",
            ObjectClass::HighVoltagePylon => "high_voltage_pylon",
            ObjectClass::Lamppost => "lamppost",
            ObjectClass::Park => "park",
            ObjectClass::Playground => "playground",
            ObjectClass::PublicToilet => "public_toilet",
            ObjectClass::PublicTransportStop => "public_transport_stop",
            ObjectClass::RailwayTrack => "railway_track",
            ObjectClass::SportFacility => "sport_facility",
            ObjectClass::TrafficLight => "traffic_light",
            ObjectClass::TrafficSign => "traffic_sign",
            ObjectClass::Train => "train",
            ObjectClass::Tram => "tram",
            ObjectClass::TrashContainer => "trash_container",
            ObjectClass::Tree => "tree",
            ObjectClass::Waterway => "waterway",
            ObjectClass::Windturbine => "windturbine",
        }
    }

    /// 1-based category id used in COCO-style files.
    pub fn category_id(self) -> u32 {
        Self::ALL.iter().position(|c| *c == self).unwrap() as u32 + 1
    }

    pub fn from_category_id(id: u32) -> Option<Self> {
        Self::ALL.get((id as usize).checked_sub(1)?).copied()
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown object class `{0}`")]
pub struct UnknownClass(pub String);

impl FromStr for ObjectClass {
    type Err = UnknownClass;

    /// Accepts the machine name as well as common spellings
    /// ("Traffic Sign", "railway-tracks", "wind turbine").
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .chars()
            .map(|c| match c {
                ' ' | '-' => '_',
                c => c.to_ascii_lowercase(),
            })
            .collect();
        let alias = match norm.as_str() {
            "railway_tracks" => "railway_track",
            "wind_turbine" => "windturbine",
            "lamp_post" => "lamppost",
            "bicycle_paths" => "bicycle_path",
            other => other,
        };
        Self::ALL.iter().copied().find(|c| c.name() == alias).ok_or_else(|| UnknownClass(s.to_string()))
    }
}

/// Size priors and occlusion behaviour for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class: ObjectClass,
    pub width_estimate: f64,
    pub height_estimate: Option<f64>,
    pub non_blocking: bool,
    pub height_from_elevation: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum ClassTableError {
    #[error("class {0} is listed more than once")]
    Duplicate(ObjectClass),
    #[error("class {class} has an invalid estimate ({value})")]
    InvalidEstimate { class: ObjectClass, value: f64 },
    #[error("class {0} has no height estimate and does not derive height from elevation")]
    MissingHeight(ObjectClass),
    #[error("classes missing from table: {0:?}")]
    MissingClasses(Vec<ObjectClass>),
}

/// A validated lookup table with exactly one [`ClassSpec`] per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTable {
    specs: Vec<ClassSpec>,
}

// class, width, height, non_blocking, height_from_elevation
const DEFAULT_TABLE: [(ObjectClass, f64, Option<f64>, bool, bool); 22] = [
    (ObjectClass::AdvertisingColumn, 1.3, Some(3.2), false, false),
    (ObjectClass::BicyclePath, 4.0, Some(1.5), true, false),
    (ObjectClass::Building, 5.0, Some(10.0), false, true),
    (ObjectClass::Bus, 4.0, Some(2.5), true, false),
    (ObjectClass::Bridge, 4.0, Some(2.5), true, true),
    (ObjectClass::Ferry, 4.0, Some(3.5), true, false),
    (ObjectClass::HighVoltagePylon, 15.0, Some(25.0), false, false),
    (ObjectClass::Lamppost, 1.0, Some(6.0), true, false),
    (ObjectClass::Park, 5.0, Some(10.0), true, false),
    (ObjectClass::Playground, 7.0, Some(2.0), false, false),
    (ObjectClass::PublicToilet, 1.5, Some(2.5), false, false),
    (ObjectClass::PublicTransportStop, 2.5, Some(2.0), false, false),
    (ObjectClass::RailwayTrack, 4.0, Some(1.5), true, false),
    (ObjectClass::SportFacility, 10.0, Some(3.0), false, false),
    (ObjectClass::TrafficLight, 0.5, Some(2.5), false, false),
    (ObjectClass::TrafficSign, 0.5, Some(2.5), false, false),
    (ObjectClass::Train, 4.0, Some(4.0), true, false),
    (ObjectClass::Tram, 4.0, Some(2.5), true, false),
    (ObjectClass::TrashContainer, 1.2, Some(1.5), false, false),
    (ObjectClass::Tree, 5.0, None, true, true),
    (ObjectClass::Waterway, 4.0, Some(1.5), true, false),
    (ObjectClass::Windturbine, 30.0, Some(50.0), false, false),
];

impl Default for ClassTable {
    fn default() -> Self {
        let specs = DEFAULT_TABLE
            .iter()
            .map(|&(class, w, h, nb, elev)| ClassSpec {
                class,
                width_estimate: w,
                height_estimate: h,
                non_blocking: nb,
                height_from_elevation: elev,
            })
            .collect();
        ClassTable::new(specs).expect("default class table is valid")
    }
}

impl ClassTable {
    pub fn new(specs: Vec<ClassSpec>) -> Result<Self, ClassTableError> {
        validate_class_table(&specs)?;
        let mut specs = specs;
        specs.sort_by_key(|s| s.class);
        Ok(ClassTable { specs })
    }

    pub fn get(&self, class: ObjectClass) -> &ClassSpec {
        // Construction guarantees every class is present.
        &self.specs[self.specs.binary_search_by_key(&class, |s| s.class).unwrap()]
    }

    pub fn specs(&self) -> &[ClassSpec] {
        &self.specs
    }

    pub fn non_blocking(&self) -> BTreeSet<ObjectClass> {
        self.specs.iter().filter(|s| s.non_blocking).map(|s| s.class).collect()
    }
}

/// Checks a class table: no duplicates, positive estimates, a height for
/// every class that cannot read it from elevation data, all 22 classes present.
pub fn validate_class_table(specs: &[ClassSpec]) -> Result<(), ClassTableError> {
    let mut seen = BTreeSet::new();
    for spec in specs {
        if !seen.insert(spec.class) {
            return Err(ClassTableError::Duplicate(spec.class));
        }
        if !(spec.width_estimate.is_finite() && spec.width_estimate > 0.0) {
            return Err(ClassTableError::InvalidEstimate { class: spec.class, value: spec.width_estimate });
        }
        match spec.height_estimate {
            Some(h) if !(h.is_finite() && h > 0.0) => {
                return Err(ClassTableError::InvalidEstimate { class: spec.class, value: h })
            }
            None if !spec.height_from_elevation => return Err(ClassTableError::MissingHeight(spec.class)),
            _ => {}
        }
    }
    let missing: Vec<_> = ObjectClass::ALL.iter().copied().filter(|c| !seen.contains(c)).collect();
    if !missing.is_empty() {
        return Err(ClassTableError::MissingClasses(missing));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_matches_reference_values() {
        let table = ClassTable::default();
        assert_eq!(table.specs().len(), 22);
        let lamp = table.get(ObjectClass::Lamppost);
        assert_eq!(lamp.width_estimate, 1.0);
        assert_eq!(lamp.height_estimate, Some(6.0));
        let tree = table.get(ObjectClass::Tree);
        assert_eq!(tree.width_estimate, 5.0);
        assert_eq!(tree.height_estimate, None);
        assert!(tree.height_from_elevation);
        assert_eq!(table.get(ObjectClass::Windturbine).height_estimate, Some(50.0));
        assert_eq!(table.get(ObjectClass::HighVoltagePylon).width_estimate, 15.0);
    }

    #[test]
    fn default_non_blocking_set() {
        use ObjectClass::*;
        let expected: BTreeSet<_> =
            [BicyclePath, RailwayTrack, Bridge, Park, Ferry, Bus, Waterway, Train, Tram, Tree, Lamppost]
                .into_iter()
                .collect();
        assert_eq!(ClassTable::default().non_blocking(), expected);
    }

    #[test]
    fn duplicate_class_rejected() {
        let mut specs = ClassTable::default().specs().to_vec();
        let lamp = specs.iter().find(|s| s.class == ObjectClass::Lamppost).unwrap().clone();
        specs.push(lamp);
        assert_eq!(validate_class_table(&specs), Err(ClassTableError::Duplicate(ObjectClass::Lamppost)));
    }

    #[test]
    fn zero_width_rejected() {
        let mut specs = ClassTable::default().specs().to_vec();
        for s in specs.iter_mut().filter(|s| s.class == ObjectClass::Lamppost) {
            s.width_estimate = 0.0;
        }
        assert!(matches!(
            validate_class_table(&specs),
            Err(ClassTableError::InvalidEstimate { class: ObjectClass::Lamppost, .. })
        ));
    }

    #[test]
    fn missing_height_rejected_unless_from_elevation() {
        let mut specs = ClassTable::default().specs().to_vec();
        for s in specs.iter_mut().filter(|s| s.class == ObjectClass::Bus) {
            s.height_estimate = None;
        }
        assert_eq!(validate_class_table(&specs), Err(ClassTableError::MissingHeight(ObjectClass::Bus)));
    }

    #[test]
    fn class_names_parse() {
        for c in ObjectClass::ALL {
            assert_eq!(c.name().parse::<ObjectClass>(), Ok(c));
            assert_eq!(ObjectClass::from_category_id(c.category_id()), Some(c));
        }
        assert_eq!("Traffic Sign".parse(), Ok(ObjectClass::TrafficSign));
        assert_eq!("railway-tracks".parse(), Ok(ObjectClass::RailwayTrack));
        assert!("spaceship".parse::<ObjectClass>().is_err());
    }
}
