//! Input parsing: geospatial objects, elevation rasters and panorama poses,
//! plus the location-density filter that selects the image set.

mod density;
mod grid;
mod objects;
mod poses;
mod wgs84;

pub use density::{density_filter, DEFAULT_MIN_SEPARATION_M};
pub use grid::{
    format_grid, load_grid, object_height_from_grids, parse_grid, save_grid, ElevationGrid, GridError, NoElevationData,
    FOOTPRINT_BUFFER_M,
};
pub use objects::{
    load_objects, objects_to_geojson, parse_objects, save_objects, ClassMap, FeatureError, LoadError, ObjectLoad,
    ObjectStore,
};
pub use poses::{format_poses, load_poses, parse_poses, save_poses, PoseError, PoseRecord};
pub use wgs84::{LocalProjection, EARTH_RADIUS_M};
