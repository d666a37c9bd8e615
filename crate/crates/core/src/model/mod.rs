//! Shared domain types: object classes, planar geometry, pixel boxes and
//! panorama poses.
//!
//! Geospatial coordinates are meters in a single planar metric CRS. Pixel
//! coordinates have their origin at the top-left corner, x to the right and
//! y downward.

mod bbox;
mod class;
mod geo;
mod panorama;

pub use bbox::{is_valid_link_pair, BBox, BoxSet, BoxSetError, Rect, Stage, EDGE_EPS};
pub use class::{validate_class_table, ClassSpec, ClassTable, ClassTableError, ObjectClass, UnknownClass};
pub use geo::{
    angular_diff, clockwise_span, normalize_deg, GeoPoint, Geometry, GeometryError, Metadata, Polygon, Polyline,
    UrbanObject,
};
pub use panorama::{PanoramaMeta, Surface};
