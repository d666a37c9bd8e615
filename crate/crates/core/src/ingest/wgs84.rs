use crate::model::GeoPoint;

/// Mean earth radius in meters (spherical model).
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Spherical azimuthal-equidistant projection centred on a reference point.
///
/// Converts WGS84 latitude/longitude into local planar meters (x east,
/// y north). Distances and bearings from the centre are exact on the sphere;
/// within a city-sized extent the planar error is well below a meter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalProjection {
    lat0: f64,
    lon0: f64,
}

impl LocalProjection {
    pub fn new(lat0_deg: f64, lon0_deg: f64) -> Self {
        LocalProjection { lat0: lat0_deg.to_radians(), lon0: lon0_deg.to_radians() }
    }

    pub fn project(&self, lat_deg: f64, lon_deg: f64) -> GeoPoint {
        let (lat, dlon) = (lat_deg.to_radians(), lon_deg.to_radians() - self.lon0);
        let cos_c = (self.lat0.sin() * lat.sin() + self.lat0.cos() * lat.cos() * dlon.cos()).clamp(-1.0, 1.0);
        let c = cos_c.acos();
        let k = if c.abs() < 1e-12 { 1.0 } else { c / c.sin() };
        GeoPoint::new(
            EARTH_RADIUS_M * k * lat.cos() * dlon.sin(),
            EARTH_RADIUS_M * k * (self.lat0.cos() * lat.sin() - self.lat0.sin() * lat.cos() * dlon.cos()),
        )
    }
}
