use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::model::{GeoPoint, Geometry, UrbanObject};
use crate::planar;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("reading grid: {0}")]
    Io(#[from] std::io::Error),
    #[error("grid header is missing `{0}`")]
    MissingHeader(&'static str),
    #[error("invalid header line {line}: {text}")]
    BadHeader { line: usize, text: String },
    #[error("dimension mismatch at line {line}: expected {expected} values, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("non-numeric cell `{token}` at line {line}")]
    NonNumeric { line: usize, token: String },
    #[error("cell size must be positive, got {0}")]
    InvalidCellSize(f64),
}

/// Height raster over a planar metric extent. Rows are stored north first.
#[derive(Debug, Clone, PartialEq)]
pub struct ElevationGrid {
    /// Lower-left corner of the lower-left cell.
    pub origin: GeoPoint,
    pub cell_size: f64,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub nodata: f64,
}

impl ElevationGrid {
    pub const DEFAULT_CELL_SIZE: f64 = 0.5;
    pub const DEFAULT_NODATA: f64 = -9999.0;

    pub fn new(
        origin: GeoPoint,
        cell_size: f64,
        rows: usize,
        cols: usize,
        values: Vec<f64>,
        nodata: f64,
    ) -> Result<Self, GridError> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(GridError::InvalidCellSize(cell_size));
        }
        if values.len() != rows * cols {
            return Err(GridError::DimensionMismatch { line: 0, expected: rows * cols, found: values.len() });
        }
        Ok(ElevationGrid { origin, cell_size, rows, cols, values, nodata })
    }

    /// Grid filled with one value; handy for synthetic scenes.
    pub fn constant(origin: GeoPoint, cell_size: f64, rows: usize, cols: usize, value: f64) -> Self {
        ElevationGrid::new(origin, cell_size, rows, cols, vec![value; rows * cols], Self::DEFAULT_NODATA)
            .expect("valid constant grid")
    }

    fn is_nodata(&self, v: f64) -> bool {
        v.is_nan() || v == self.nodata
    }

    /// Row (north first) and column of the cell containing `p`.
    pub fn cell_of(&self, p: GeoPoint) -> Option<(usize, usize)> {
        let c = ((p.x - self.origin.x) / self.cell_size).floor();
        let r_south = ((p.y - self.origin.y) / self.cell_size).floor();
        if !(c >= 0.0 && r_south >= 0.0) || c >= self.cols as f64 || r_south >= self.rows as f64 {
            return None;
        }
        Some((self.rows - 1 - r_south as usize, c as usize))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> GeoPoint {
        GeoPoint::new(
            self.origin.x + (col as f64 + 0.5) * self.cell_size,
            self.origin.y + ((self.rows - 1 - row) as f64 + 0.5) * self.cell_size,
        )
    }

    /// Stored value, or `None` for nodata.
    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        let v = self.values[row * self.cols + col];
        (!self.is_nodata(v)).then_some(v)
    }

    /// Nearest-cell sample; `None` outside the extent or on nodata.
    pub fn sample(&self, p: GeoPoint) -> Option<f64> {
        let (r, c) = self.cell_of(p)?;
        self.value(r, c)
    }

    /// Range of (row, col) whose cells intersect the given extent.
    fn cells_in_extent(&self, lo: GeoPoint, hi: GeoPoint) -> impl Iterator<Item = (usize, usize)> {
        let cs = self.cell_size;
        let clampc = |v: f64, n: usize| v.floor().clamp(0.0, n as f64 - 1.0) as usize;
        let c0 = clampc((lo.x - self.origin.x) / cs, self.cols);
        let c1 = clampc((hi.x - self.origin.x) / cs, self.cols);
        let s0 = clampc((lo.y - self.origin.y) / cs, self.rows);
        let s1 = clampc((hi.y - self.origin.y) / cs, self.rows);
        let rows = self.rows;
        let empty = hi.x < self.origin.x
            || hi.y < self.origin.y
            || lo.x >= self.origin.x + self.cols as f64 * cs
            || lo.y >= self.origin.y + rows as f64 * cs;
        let (c0, c1, s0, s1) = if empty { (1, 0, 1, 0) } else { (c0, c1, s0, s1) };
        (s0..=s1).flat_map(move |s| (c0..=c1).map(move |c| (rows - 1 - s, c)))
    }
}

/// Parses an ESRI ASCII grid: `ncols`, `nrows`, `xllcorner`, `yllcorner`,
/// `cellsize`, optional `nodata_value`, then `nrows` lines of `ncols` values,
/// north row first.
pub fn parse_grid(text: &str) -> Result<ElevationGrid, GridError> {
    let mut header: [Option<f64>; 6] = [None; 6];
    const KEYS: [&str; 6] = ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"];
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty()).peekable();

    while let Some(&(line, l)) = lines.peek() {
        let mut parts = l.split_whitespace();
        let key = parts.next().unwrap_or_default().to_ascii_lowercase();
        let Some(slot) = KEYS.iter().position(|k| *k == key) else {
            if key.starts_with(|c: char| c.is_ascii_alphabetic()) {
                return Err(GridError::BadHeader { line, text: l.to_string() });
            }
            break;
        };
        let value = parts
            .next()
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| GridError::BadHeader { line, text: l.to_string() })?;
        header[slot] = Some(value);
        lines.next();
    }

    let get = |i: usize| header[i].ok_or(GridError::MissingHeader(KEYS[i]));
    let cols = get(0)? as usize;
    let rows = get(1)? as usize;
    let origin = GeoPoint::new(get(2)?, get(3)?);
    let cell_size = get(4)?;
    let nodata = header[5].unwrap_or(ElevationGrid::DEFAULT_NODATA);

    let mut values = Vec::with_capacity(rows * cols);
    let mut data_rows = 0;
    let mut last_line = 0;
    for (line, l) in lines {
        last_line = line;
        let row: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| GridError::NonNumeric { line, token: t.to_string() }))
            .collect::<Result<_, _>>()?;
        if row.len() != cols {
            return Err(GridError::DimensionMismatch { line, expected: cols, found: row.len() });
        }
        values.extend(row);
        data_rows += 1;
    }
    if data_rows != rows {
        return Err(GridError::DimensionMismatch { line: last_line, expected: rows, found: data_rows });
    }
    ElevationGrid::new(origin, cell_size, rows, cols, values, nodata)
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<ElevationGrid, GridError> {
    parse_grid(&std::fs::read_to_string(path)?)
}

/// Serializes in the format read by [`parse_grid`].
pub fn format_grid(grid: &ElevationGrid) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "ncols {}", grid.cols);
    let _ = writeln!(out, "nrows {}", grid.rows);
    let _ = writeln!(out, "xllcorner {:?}", grid.origin.x);
    let _ = writeln!(out, "yllcorner {:?}", grid.origin.y);
    let _ = writeln!(out, "cellsize {:?}", grid.cell_size);
    let _ = writeln!(out, "nodata_value {:?}", grid.nodata);
    for row in grid.values.chunks(grid.cols.max(1)) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn save_grid(path: impl AsRef<Path>, grid: &ElevationGrid) -> Result<(), GridError> {
    crate::fsio::write_atomic(path, format_grid(grid))?;
    Ok(())
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no elevation data under the object footprint")]
pub struct NoElevationData;

/// Line and point footprints include cells whose centers lie this close.
pub const FOOTPRINT_BUFFER_M: f64 = 0.5;

/// Tallest surface-minus-terrain height under an object's footprint, floored at 0.
///
/// The footprint is every DSM cell whose center lies inside a polygon, or
/// within [`FOOTPRINT_BUFFER_M`] of a polyline or point. The terrain value is
/// sampled from the DTM at the same cell center.
pub fn object_height_from_grids(
    obj: &UrbanObject,
    dsm: &ElevationGrid,
    dtm: &ElevationGrid,
) -> Result<f64, NoElevationData> {
    let (mut lo, mut hi) = obj.geometry.extent();
    lo.x -= FOOTPRINT_BUFFER_M;
    lo.y -= FOOTPRINT_BUFFER_M;
    hi.x += FOOTPRINT_BUFFER_M;
    hi.y += FOOTPRINT_BUFFER_M;

    let in_footprint = |c: GeoPoint| match &obj.geometry {
        Geometry::Point(p) => p.distance(c) <= FOOTPRINT_BUFFER_M,
        Geometry::Polyline(l) => {
            l.segments().any(|(a, b)| planar::point_segment_distance(c, a, b) <= FOOTPRINT_BUFFER_M)
        }
        Geometry::Polygon(poly) => planar::point_in_ring(c, poly.vertices()),
    };

    dsm.cells_in_extent(lo, hi)
        .filter_map(|(r, c)| {
            let center = dsm.cell_center(r, c);
            if !in_footprint(center) {
                return None;
            }
            Some(dsm.value(r, c)? - dtm.sample(center)?)
        })
        .reduce(f64::max)
        .map(|h| h.max(0.0))
        .ok_or(NoElevationData)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ObjectClass, Polygon};

    const TWO_BY_TWO: &str = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 0.5\nnodata_value -9999\n1 2\n3 4\n";

    fn object(geometry: Geometry) -> UrbanObject {
        UrbanObject {
            id: "o".into(),
            class: ObjectClass::Building,
            geometry,
            source: "test".into(),
            metadata: Default::default(),
            height_override: None,
            width_override: None,
        }
    }

    #[test]
    fn sample_returns_stored_value_at_each_center() {
        let g = parse_grid(TWO_BY_TWO).unwrap();
        // north row first: top-left is 1, bottom-left is 3
        assert_eq!(g.sample(GeoPoint::new(0.25, 0.75)), Some(1.0));
        assert_eq!(g.sample(GeoPoint::new(0.75, 0.75)), Some(2.0));
        assert_eq!(g.sample(GeoPoint::new(0.25, 0.25)), Some(3.0));
        assert_eq!(g.sample(GeoPoint::new(0.75, 0.25)), Some(4.0));
        assert_eq!(g.sample(GeoPoint::new(1.25, 0.25)), None);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let text = "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n3 4\n";
        assert!(matches!(parse_grid(text), Err(GridError::DimensionMismatch { expected: 3, found: 2, .. })));
        let text = "ncols 2\nnrows 3\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n3 4\n";
        assert!(matches!(parse_grid(text), Err(GridError::DimensionMismatch { .. })));
    }

    #[test]
    fn non_numeric_cell_is_reported() {
        let text = "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 x\n";
        assert!(matches!(parse_grid(text), Err(GridError::NonNumeric { line: 6, .. })));
    }

    #[test]
    fn nodata_is_signalled_not_zero() {
        let text = "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nnodata_value -1\n5 -1\n";
        let g = parse_grid(text).unwrap();
        // read-back: the second value in the file is the sentinel
        assert_eq!(g.values[1], -1.0);
        assert_eq!(g.sample(GeoPoint::new(0.5, 0.5)), Some(5.0));
        assert_eq!(g.sample(GeoPoint::new(1.5, 0.5)), None);
    }

    #[test]
    fn grid_text_round_trip() {
        let g = parse_grid(TWO_BY_TWO).unwrap();
        assert_eq!(parse_grid(&format_grid(&g)).unwrap(), g);
    }

    fn square(x0: f64, y0: f64, x1: f64, y1: f64) -> Geometry {
        Geometry::Polygon(
            Polygon::new(vec![
                GeoPoint::new(x0, y0),
                GeoPoint::new(x1, y0),
                GeoPoint::new(x1, y1),
                GeoPoint::new(x0, y1),
            ])
            .unwrap(),
        )
    }

    #[test]
    fn height_is_surface_minus_terrain() {
        let dsm = ElevationGrid::constant(GeoPoint::new(0., 0.), 0.5, 20, 20, 12.0);
        let dtm = ElevationGrid::constant(GeoPoint::new(0., 0.), 0.5, 20, 20, 2.0);
        let obj = object(square(2., 2., 6., 6.));
        assert_eq!(object_height_from_grids(&obj, &dsm, &dtm), Ok(10.0));
    }

    #[test]
    fn negative_difference_clamps_to_zero() {
        let dsm = ElevationGrid::constant(GeoPoint::new(0., 0.), 0.5, 20, 20, 1.0);
        let dtm = ElevationGrid::constant(GeoPoint::new(0., 0.), 0.5, 20, 20, 2.0);
        let obj = object(square(2., 2., 6., 6.));
        assert_eq!(object_height_from_grids(&obj, &dsm, &dtm), Ok(0.0));
    }

    #[test]
    fn max_over_valid_cells_skips_nodata() {
        // three cells in a row; footprint is a polygon covering all three centers
        let dsm = ElevationGrid::new(GeoPoint::new(0., 0.), 1.0, 1, 3, vec![3.0, 7.5, -9999.0], -9999.0).unwrap();
        let dtm = ElevationGrid::constant(GeoPoint::new(0., 0.), 1.0, 1, 3, 0.0);
        let obj = object(square(0.1, 0.1, 2.9, 0.9));
        // brute force: scan every cell center, keep those in the footprint with data
        let mut expected = f64::NEG_INFINITY;
        for c in 0..3 {
            let center = dsm.cell_center(0, c);
            if planar::point_in_ring(
                center,
                match &obj.geometry {
                    Geometry::Polygon(p) => p.vertices(),
                    _ => unreachable!(),
                },
            ) {
                if let (Some(s), Some(t)) = (dsm.value(0, c), dtm.sample(center)) {
                    expected = expected.max(s - t);
                }
            }
        }
        assert_eq!(expected, 7.5);
        assert_eq!(object_height_from_grids(&obj, &dsm, &dtm), Ok(expected));
    }

    #[test]
    fn uncovered_footprint_has_no_data() {
        let dsm = ElevationGrid::constant(GeoPoint::new(0., 0.), 0.5, 4, 4, 5.0);
        let dtm = dsm.clone();
        let obj = object(Geometry::Point(GeoPoint::new(50., 50.)));
        assert_eq!(object_height_from_grids(&obj, &dsm, &dtm), Err(NoElevationData));
    }

    #[test]
    fn point_footprint_uses_buffer() {
        let mut values = vec![0.0; 16];
        values[5] = 9.0; // row 1, col 1: center (0.75, 1.25)
        let dsm = ElevationGrid::new(GeoPoint::new(0., 0.), 0.5, 4, 4, values, -9999.0).unwrap();
        let dtm = ElevationGrid::constant(GeoPoint::new(0., 0.), 0.5, 4, 4, 0.0);
        let near = object(Geometry::Point(GeoPoint::new(0.75, 1.6)));
        assert_eq!(object_height_from_grids(&near, &dsm, &dtm), Ok(9.0));
    }
}
