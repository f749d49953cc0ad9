//! GIS raster layers: ASCII-grid loading, map windowing, terrain normalization.
//!
//! A [`GisMap`] is three co-registered layers (clutter codes, building heights,
//! ground altitude). [`extract_patch`] cuts a fixed-size window centered on an
//! antenna location; everything downstream works on the resulting [`GisPatch`].

use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

/// Highest valid clutter code; code 0 is reserved for unknown/padding.
pub const MAX_CLUTTER_CODE: u8 = 21;

#[derive(Debug, Error)]
pub enum GeodataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: header declares {expected} cells, file contains {found}")]
    DimensionMismatch {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("cellsize must be > 0, got {0}")]
    InvalidResolution(f64),
    #[error("layers are not co-registered: {0}")]
    LayerMismatch(String),
    #[error("antenna at ({easting_m}, {northing_m}) lies outside the map")]
    AntennaOutsideMap { easting_m: f64, northing_m: f64 },
    #[error("patch must be at least 8x8 pixels, requested {width}x{height}")]
    PatchTooSmall { width: usize, height: usize },
    #[error("terrain layer has no valid cells")]
    AllNoData,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// Which of the three map layers a raster file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Clutter,
    Building,
    Terrain,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerKind::Clutter => write!(f, "clutter"),
            LayerKind::Building => write!(f, "building"),
            LayerKind::Terrain => write!(f, "terrain"),
        }
    }
}

/// A georeferenced 2-D grid of cell values. Row 0 is the northernmost row.
///
/// `origin` is the world coordinate (easting, northing) of the top-left cell
/// corner; each cell value represents the whole `resolution_m` square below
/// and to the right of its corner.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    pub width: usize,
    pub height: usize,
    pub resolution_m: f64,
    pub origin: (f64, f64),
    pub nodata: f64,
    values: Vec<f64>,
}

impl RasterGrid {
    pub fn new(
        width: usize,
        height: usize,
        resolution_m: f64,
        origin: (f64, f64),
        nodata: f64,
        values: Vec<f64>,
    ) -> Result<Self, GeodataError> {
        if width < 1 || height < 1 {
            return Err(GeodataError::InvalidGrid(format!(
                "grid must be at least 1x1, got {width}x{height}"
            )));
        }
        if !(resolution_m > 0.0) {
            return Err(GeodataError::InvalidResolution(resolution_m));
        }
        if values.len() != width * height {
            return Err(GeodataError::InvalidGrid(format!(
                "expected {} values, got {}",
                width * height,
                values.len()
            )));
        }
        let grid = Self {
            width,
            height,
            resolution_m,
            origin,
            nodata,
            values,
        };
        for &v in &grid.values {
            if !v.is_finite() && !grid.is_nodata(v) {
                return Err(GeodataError::InvalidGrid(format!(
                    "cell value {v} is neither finite nor the nodata sentinel"
                )));
            }
        }
        Ok(grid)
    }

    /// Constant-valued grid, mostly useful for tests and synthetic scenes.
    pub fn filled(width: usize, height: usize, resolution_m: f64, value: f64) -> Self {
        Self::new(
            width,
            height,
            resolution_m,
            (0.0, height as f64 * resolution_m),
            -9999.0,
            vec![value; width * height],
        )
        .expect("constant grid is always valid")
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.width + col] = value;
    }

    #[inline]
    pub fn is_nodata(&self, value: f64) -> bool {
        value == self.nodata || (value.is_nan() && self.nodata.is_nan())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Minimum over valid cells, or None when every cell is nodata.
    pub fn valid_min(&self) -> Option<f64> {
        self.values
            .iter()
            .copied()
            .filter(|&v| !self.is_nodata(v))
            .fold(None, |acc, v| Some(acc.map_or(v, |m: f64| m.min(v))))
    }

    /// Pixel containing a world coordinate, by floor division into cells.
    pub fn pixel_at(&self, easting_m: f64, northing_m: f64) -> Option<(usize, usize)> {
        let col = ((easting_m - self.origin.0) / self.resolution_m).floor();
        let row = ((self.origin.1 - northing_m) / self.resolution_m).floor();
        if col < 0.0 || row < 0.0 || col >= self.width as f64 || row >= self.height as f64 {
            return None;
        }
        Some((row as usize, col as usize))
    }

    /// World coordinate of a pixel center.
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin.0 + (col as f64 + 0.5) * self.resolution_m,
            self.origin.1 - (row as f64 + 0.5) * self.resolution_m,
        )
    }
}

/// Parse one `key value` header line of the ASCII grid format.
fn header_value(line: Option<&str>, key: &str, path: &str) -> Result<f64, GeodataError> {
    let line = line.ok_or_else(|| GeodataError::Parse {
        path: path.to_string(),
        message: format!("missing header line `{key}`"),
    })?;
    let mut parts = line.split_whitespace();
    let found_key = parts.next().unwrap_or("");
    if !found_key.eq_ignore_ascii_case(key) {
        return Err(GeodataError::Parse {
            path: path.to_string(),
            message: format!("expected header `{key}`, found `{found_key}`"),
        });
    }
    let value = parts.next().ok_or_else(|| GeodataError::Parse {
        path: path.to_string(),
        message: format!("header `{key}` has no value"),
    })?;
    value.parse::<f64>().map_err(|_| GeodataError::Parse {
        path: path.to_string(),
        message: format!("header `{key}` value `{value}` is not a number"),
    })
}

/// Load one map layer from an ASCII grid file.
///
/// Header order is fixed: ncols, nrows, xllcorner, yllcorner, cellsize,
/// nodata_value; then nrows lines of ncols values, row 0 northernmost.
pub fn load_raster(path: &Path, layer_kind: LayerKind) -> Result<RasterGrid, GeodataError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| GeodataError::Io {
        path: display.clone(),
        source,
    })?;
    parse_raster(&text, &display, layer_kind)
}

fn parse_raster(text: &str, path: &str, layer_kind: LayerKind) -> Result<RasterGrid, GeodataError> {
    let mut lines = text.lines();
    let ncols = header_value(lines.next(), "ncols", path)?;
    let nrows = header_value(lines.next(), "nrows", path)?;
    let xll = header_value(lines.next(), "xllcorner", path)?;
    let yll = header_value(lines.next(), "yllcorner", path)?;
    let cellsize = header_value(lines.next(), "cellsize", path)?;
    let nodata = header_value(lines.next(), "nodata_value", path)?;

    if ncols.fract() != 0.0 || nrows.fract() != 0.0 || ncols < 1.0 || nrows < 1.0 {
        return Err(GeodataError::Parse {
            path: path.to_string(),
            message: format!("ncols/nrows must be positive integers, got {ncols}/{nrows}"),
        });
    }
    if !(cellsize > 0.0) {
        return Err(GeodataError::InvalidResolution(cellsize));
    }
    let width = ncols as usize;
    let height = nrows as usize;

    let mut values = Vec::with_capacity(width * height);
    for token in lines.flat_map(str::split_whitespace) {
        let v = token.parse::<f64>().map_err(|_| GeodataError::Parse {
            path: path.to_string(),
            message: format!("cell value `{token}` is not a number"),
        })?;
        values.push(v);
    }
    if values.len() != width * height {
        return Err(GeodataError::DimensionMismatch {
            path: path.to_string(),
            expected: width * height,
            found: values.len(),
        });
    }

    // Layer-specific sanity on valid cells.
    let nodata_match = |v: f64| v == nodata || (v.is_nan() && nodata.is_nan());
    for &v in &values {
        if nodata_match(v) {
            continue;
        }
        match layer_kind {
            LayerKind::Clutter => {
                if v.fract() != 0.0 || v < 0.0 || v > MAX_CLUTTER_CODE as f64 {
                    return Err(GeodataError::Parse {
                        path: path.to_string(),
                        message: format!(
                            "clutter code {v} outside integer range [0, {MAX_CLUTTER_CODE}]"
                        ),
                    });
                }
            }
            LayerKind::Building => {
                if v < 0.0 {
                    return Err(GeodataError::Parse {
                        path: path.to_string(),
                        message: format!("building height {v} is negative"),
                    });
                }
            }
            LayerKind::Terrain => {}
        }
    }

    // Top-left corner sits one grid height above the lower-left corner.
    let origin = (xll, yll + height as f64 * cellsize);
    RasterGrid::new(width, height, cellsize, origin, nodata, values)
}

/// Write a raster back out in the ASCII grid format.
///
/// Values use Rust's shortest round-trip float formatting, so a
/// save/load cycle reproduces cell values exactly.
pub fn save_raster(grid: &RasterGrid, path: &Path) -> Result<(), GeodataError> {
    let mut out = String::new();
    let yll = grid.origin.1 - grid.height as f64 * grid.resolution_m;
    out.push_str(&format!("ncols {}\n", grid.width));
    out.push_str(&format!("nrows {}\n", grid.height));
    out.push_str(&format!("xllcorner {}\n", grid.origin.0));
    out.push_str(&format!("yllcorner {}\n", yll));
    out.push_str(&format!("cellsize {}\n", grid.resolution_m));
    out.push_str(&format!("nodata_value {}\n", grid.nodata));
    for row in 0..grid.height {
        let mut line = String::new();
        for col in 0..grid.width {
            if col > 0 {
                line.push(' ');
            }
            line.push_str(&format!("{}", grid.get(row, col)));
        }
        line.push('\n');
        out.push_str(&line);
    }
    fs::write(path, out).map_err(|source| GeodataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Three co-registered layers covering the same area.
#[derive(Debug, Clone)]
pub struct GisMap {
    pub clutter: RasterGrid,
    pub building: RasterGrid,
    pub terrain: RasterGrid,
}

impl GisMap {
    pub fn new(
        clutter: RasterGrid,
        building: RasterGrid,
        terrain: RasterGrid,
    ) -> Result<Self, GeodataError> {
        let check = |name: &str, g: &RasterGrid| -> Result<(), GeodataError> {
            if g.width != clutter.width || g.height != clutter.height {
                return Err(GeodataError::LayerMismatch(format!(
                    "{name} is {}x{}, clutter is {}x{}",
                    g.width, g.height, clutter.width, clutter.height
                )));
            }
            if (g.resolution_m - clutter.resolution_m).abs() > 1e-9 * clutter.resolution_m {
                return Err(GeodataError::LayerMismatch(format!(
                    "{name} resolution {} != clutter resolution {}",
                    g.resolution_m, clutter.resolution_m
                )));
            }
            let tol = 1e-6 * clutter.resolution_m.max(1.0);
            if (g.origin.0 - clutter.origin.0).abs() > tol
                || (g.origin.1 - clutter.origin.1).abs() > tol
            {
                return Err(GeodataError::LayerMismatch(format!(
                    "{name} origin {:?} != clutter origin {:?}",
                    g.origin, clutter.origin
                )));
            }
            Ok(())
        };
        check("building", &building)?;
        check("terrain", &terrain)?;
        Ok(Self {
            clutter,
            building,
            terrain,
        })
    }

    /// Load `clutter.asc`, `building.asc` and `terrain.asc` from a directory.
    pub fn load(dir: &Path) -> Result<Self, GeodataError> {
        let clutter = load_raster(&dir.join("clutter.asc"), LayerKind::Clutter)?;
        let building = load_raster(&dir.join("building.asc"), LayerKind::Building)?;
        let terrain = load_raster(&dir.join("terrain.asc"), LayerKind::Terrain)?;
        Self::new(clutter, building, terrain)
    }

    /// Write the three layers into a directory (creating it if necessary).
    pub fn save(&self, dir: &Path) -> Result<(), GeodataError> {
        fs::create_dir_all(dir).map_err(|source| GeodataError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        save_raster(&self.clutter, &dir.join("clutter.asc"))?;
        save_raster(&self.building, &dir.join("building.asc"))?;
        save_raster(&self.terrain, &dir.join("terrain.asc"))
    }

    pub fn width(&self) -> usize {
        self.clutter.width
    }

    pub fn height(&self) -> usize {
        self.clutter.height
    }

    pub fn resolution_m(&self) -> f64 {
        self.clutter.resolution_m
    }
}

/// A W x H window of a [`GisMap`] centered on the antenna pixel.
///
/// The terrain layer is normalized so its lowest valid cell is 0.
#[derive(Debug, Clone)]
pub struct GisPatch {
    pub clutter: RasterGrid,
    pub building: RasterGrid,
    pub terrain: RasterGrid,
    /// (row, col) of the antenna within the patch.
    pub center_pixel: (usize, usize),
    pub resolution_m: f64,
}

impl GisPatch {
    pub fn width(&self) -> usize {
        self.clutter.width
    }

    pub fn height(&self) -> usize {
        self.clutter.height
    }

    /// Clutter code with nodata mapped to 0 (unknown).
    #[inline]
    pub fn clutter_code(&self, row: usize, col: usize) -> u8 {
        let v = self.clutter.get(row, col);
        if self.clutter.is_nodata(v) {
            0
        } else {
            v as u8
        }
    }

    /// Building height in meters with nodata mapped to 0 (no obstruction).
    #[inline]
    pub fn building_m(&self, row: usize, col: usize) -> f64 {
        let v = self.building.get(row, col);
        if self.building.is_nodata(v) {
            0.0
        } else {
            v
        }
    }

    /// Normalized terrain altitude in meters with nodata mapped to 0.
    #[inline]
    pub fn terrain_m(&self, row: usize, col: usize) -> f64 {
        let v = self.terrain.get(row, col);
        if self.terrain.is_nodata(v) {
            0.0
        } else {
            v
        }
    }
}

/// Cut a W x H patch centered on the pixel containing `antenna_xy`.
///
/// Regions outside the source map are padded: clutter 0, building 0,
/// terrain replicates the nearest edge cell. Terrain is then normalized
/// by subtracting its lowest valid cell.
pub fn extract_patch(
    map: &GisMap,
    antenna_xy: (f64, f64),
    width: usize,
    height: usize,
) -> Result<GisPatch, GeodataError> {
    if width < 8 || height < 8 {
        return Err(GeodataError::PatchTooSmall { width, height });
    }
    let (row, col) = map.clutter.pixel_at(antenna_xy.0, antenna_xy.1).ok_or(
        GeodataError::AntennaOutsideMap {
            easting_m: antenna_xy.0,
            northing_m: antenna_xy.1,
        },
    )?;

    let center = (height / 2, width / 2);
    let row0 = row as isize - center.0 as isize;
    let col0 = col as isize - center.1 as isize;
    let res = map.resolution_m();
    let origin = (
        map.clutter.origin.0 + col0 as f64 * res,
        map.clutter.origin.1 - row0 as f64 * res,
    );

    let window = |layer: &RasterGrid, pad: Padding| -> RasterGrid {
        let mut values = Vec::with_capacity(width * height);
        for r in 0..height {
            let sr = row0 + r as isize;
            for c in 0..width {
                let sc = col0 + c as isize;
                let inside = sr >= 0
                    && sc >= 0
                    && (sr as usize) < layer.height
                    && (sc as usize) < layer.width;
                let v = if inside {
                    layer.get(sr as usize, sc as usize)
                } else {
                    match pad {
                        Padding::Zero => 0.0,
                        Padding::ReplicateEdge => {
                            let cr = sr.clamp(0, layer.height as isize - 1) as usize;
                            let cc = sc.clamp(0, layer.width as isize - 1) as usize;
                            layer.get(cr, cc)
                        }
                    }
                };
                values.push(v);
            }
        }
        RasterGrid::new(width, height, res, origin, layer.nodata, values)
            .expect("windowed grid dimensions are valid")
    };

    let patch = GisPatch {
        clutter: window(&map.clutter, Padding::Zero),
        building: window(&map.building, Padding::Zero),
        terrain: window(&map.terrain, Padding::ReplicateEdge),
        center_pixel: center,
        resolution_m: res,
    };
    normalize_terrain(patch)
}

#[derive(Clone, Copy)]
enum Padding {
    Zero,
    ReplicateEdge,
}

/// Shift the terrain layer so its lowest valid cell is exactly 0.
/// Idempotent; other layers are untouched.
pub fn normalize_terrain(mut patch: GisPatch) -> Result<GisPatch, GeodataError> {
    let min = patch.terrain.valid_min().ok_or(GeodataError::AllNoData)?;
    for row in 0..patch.terrain.height {
        for col in 0..patch.terrain.width {
            let v = patch.terrain.get(row, col);
            if !patch.terrain.is_nodata(v) {
                patch.terrain.set(row, col, v - min);
            }
        }
    }
    Ok(patch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_grid(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    fn simple_grid_text(cellsize: f64, cells: &str) -> String {
        format!(
            "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize {cellsize}\nnodata_value -9999\n{cells}\n"
        )
    }

    #[test]
    fn load_raster_echoes_file_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_grid(dir.path(), "t.asc", &simple_grid_text(5.0, "1 2\n3 4"));
        let g = load_raster(&path, LayerKind::Terrain).unwrap();
        assert_eq!((g.width, g.height), (2, 2));
        assert_eq!(g.resolution_m, 5.0);
        assert_eq!(g.values(), &[1.0, 2.0, 3.0, 4.0]);
        // top-left corner is one grid height above yllcorner
        assert_eq!(g.origin, (0.0, 10.0));
    }

    #[test]
    fn load_raster_rejects_zero_cellsize() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_grid(dir.path(), "t.asc", &simple_grid_text(0.0, "1 2\n3 4"));
        match load_raster(&path, LayerKind::Terrain) {
            Err(GeodataError::InvalidResolution(v)) => assert_eq!(v, 0.0),
            other => panic!("expected InvalidResolution, got {other:?}"),
        }
    }

    #[test]
    fn load_raster_rejects_wrong_cell_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_grid(dir.path(), "t.asc", &simple_grid_text(5.0, "1 2\n3"));
        match load_raster(&path, LayerKind::Terrain) {
            Err(GeodataError::DimensionMismatch {
                expected, found, ..
            }) => {
                assert_eq!((expected, found), (4, 3));
            }
            other => panic!("expected DimensionMismatch, got {other:?}"),
        }
    }

    #[test]
    fn load_raster_rejects_out_of_range_clutter() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_grid(dir.path(), "t.asc", &simple_grid_text(5.0, "1 22\n3 4"));
        assert!(matches!(
            load_raster(&path, LayerKind::Clutter),
            Err(GeodataError::Parse { .. })
        ));
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let values = vec![10.125, -3.0, 0.1, 1234.5678901, -9999.0, 7.0];
        let g = RasterGrid::new(3, 2, 2.5, (100.25, 250.75), -9999.0, values).unwrap();
        let path = dir.path().join("rt.asc");
        save_raster(&g, &path).unwrap();
        let back = load_raster(&path, LayerKind::Terrain).unwrap();
        assert_eq!(back.values(), g.values());
        assert_eq!(back.width, g.width);
        assert_eq!(back.height, g.height);
        assert_eq!(back.resolution_m, g.resolution_m);
        assert!((back.origin.0 - g.origin.0).abs() < 1e-6);
        assert!((back.origin.1 - g.origin.1).abs() < 1e-6);
    }

    fn test_map(w: usize, h: usize, res: f64) -> GisMap {
        let mut clutter = RasterGrid::filled(w, h, res, 1.0);
        let mut building = RasterGrid::filled(w, h, res, 0.0);
        let mut terrain = RasterGrid::filled(w, h, res, 0.0);
        // distinctive per-cell values so windowing mistakes show up
        for r in 0..h {
            for c in 0..w {
                clutter.set(r, c, ((r * w + c) % 22) as f64);
                building.set(r, c, ((r + c) % 7) as f64);
                terrain.set(r, c, 100.0 + (r as f64) * 0.5 + (c as f64) * 0.25);
            }
        }
        GisMap::new(clutter, building, terrain).unwrap()
    }

    #[test]
    fn patch_center_pixel_is_floor_halves() {
        let map = test_map(32, 32, 5.0);
        let center_xy = map.clutter.pixel_center(16, 16);
        let patch = extract_patch(&map, center_xy, 16, 12).unwrap();
        assert_eq!(patch.center_pixel, (6, 8));
        assert_eq!(patch.width(), 16);
        assert_eq!(patch.height(), 12);
    }

    #[test]
    fn full_size_patch_equals_map_with_terrain_shift() {
        let map = test_map(16, 16, 5.0);
        let center_xy = map.clutter.pixel_center(8, 8);
        let patch = extract_patch(&map, center_xy, 16, 16).unwrap();
        let tmin = map.terrain.valid_min().unwrap();
        for r in 0..16 {
            for c in 0..16 {
                assert_eq!(patch.clutter.get(r, c), map.clutter.get(r, c));
                assert_eq!(patch.building.get(r, c), map.building.get(r, c));
                assert!((patch.terrain.get(r, c) - (map.terrain.get(r, c) - tmin)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn patch_windowing_matches_brute_force_oracle() {
        // brute-force oracle: per-pixel source lookup with explicit padding
        let map = test_map(24, 20, 5.0);
        let (w, h) = (10usize, 8usize);
        for (ar, ac) in [(0usize, 1usize), (3, 0), (10, 12), (19, 23), (5, 22)] {
            let xy = map.clutter.pixel_center(ar, ac);
            let patch = extract_patch(&map, xy, w, h).unwrap();
            let tmin_in_window = {
                let mut m = f64::INFINITY;
                for r in 0..h {
                    for c in 0..w {
                        let sr = ar as isize + r as isize - (h / 2) as isize;
                        let sc = ac as isize + c as isize - (w / 2) as isize;
                        let cr = sr.clamp(0, map.height() as isize - 1) as usize;
                        let cc = sc.clamp(0, map.width() as isize - 1) as usize;
                        m = m.min(map.terrain.get(cr, cc));
                    }
                }
                m
            };
            for r in 0..h {
                for c in 0..w {
                    let sr = ar as isize + r as isize - (h / 2) as isize;
                    let sc = ac as isize + c as isize - (w / 2) as isize;
                    let inside = sr >= 0
                        && sc >= 0
                        && (sr as usize) < map.height()
                        && (sc as usize) < map.width();
                    let (ec, eb, et) = if inside {
                        (
                            map.clutter.get(sr as usize, sc as usize),
                            map.building.get(sr as usize, sc as usize),
                            map.terrain.get(sr as usize, sc as usize),
                        )
                    } else {
                        let cr = sr.clamp(0, map.height() as isize - 1) as usize;
                        let cc = sc.clamp(0, map.width() as isize - 1) as usize;
                        (0.0, 0.0, map.terrain.get(cr, cc))
                    };
                    assert_eq!(patch.clutter.get(r, c), ec, "clutter at ({r},{c})");
                    assert_eq!(patch.building.get(r, c), eb, "building at ({r},{c})");
                    assert!(
                        (patch.terrain.get(r, c) - (et - tmin_in_window)).abs() < 1e-12,
                        "terrain at ({r},{c})"
                    );
                }
            }
        }
    }

    #[test]
    fn antenna_outside_map_is_rejected() {
        let map = test_map(16, 16, 5.0);
        assert!(matches!(
            extract_patch(&map, (-1.0, 40.0), 8, 8),
            Err(GeodataError::AntennaOutsideMap { .. })
        ));
        assert!(matches!(
            extract_patch(&map, (40.0, 1e6), 8, 8),
            Err(GeodataError::AntennaOutsideMap { .. })
        ));
    }

    #[test]
    fn normalize_terrain_definition_and_idempotence() {
        let terrain = RasterGrid::new(
            2,
            2,
            5.0,
            (0.0, 10.0),
            -9999.0,
            vec![10.0, 12.0, 11.0, 15.0],
        )
        .unwrap();
        let patch = GisPatch {
            clutter: RasterGrid::filled(2, 2, 5.0, 0.0),
            building: RasterGrid::filled(2, 2, 5.0, 0.0),
            terrain,
            center_pixel: (1, 1),
            resolution_m: 5.0,
        };
        let once = normalize_terrain(patch).unwrap();
        assert_eq!(once.terrain.values(), &[0.0, 2.0, 1.0, 5.0]);
        let twice = normalize_terrain(once.clone()).unwrap();
        assert_eq!(twice.terrain.values(), once.terrain.values());
    }

    #[test]
    fn normalize_terrain_ignores_nodata_and_rejects_all_nodata() {
        let terrain = RasterGrid::new(
            2,
            2,
            5.0,
            (0.0, 10.0),
            -9999.0,
            vec![-9999.0, 12.0, 11.0, 15.0],
        )
        .unwrap();
        let patch = GisPatch {
            clutter: RasterGrid::filled(2, 2, 5.0, 0.0),
            building: RasterGrid::filled(2, 2, 5.0, 0.0),
            terrain,
            center_pixel: (1, 1),
            resolution_m: 5.0,
        };
        let norm = normalize_terrain(patch).unwrap();
        assert_eq!(norm.terrain.values(), &[-9999.0, 1.0, 0.0, 4.0]);

        let all_nodata =
            RasterGrid::new(2, 2, 5.0, (0.0, 10.0), -9999.0, vec![-9999.0; 4]).unwrap();
        let patch = GisPatch {
            clutter: RasterGrid::filled(2, 2, 5.0, 0.0),
            building: RasterGrid::filled(2, 2, 5.0, 0.0),
            terrain: all_nodata,
            center_pixel: (1, 1),
            resolution_m: 5.0,
        };
        assert!(matches!(
            normalize_terrain(patch),
            Err(GeodataError::AllNoData)
        ));
    }

    #[test]
    fn pixel_at_uses_floor_division() {
        let g = RasterGrid::filled(4, 4, 5.0, 0.0);
        // origin northing = 20.0
        assert_eq!(g.pixel_at(0.0, 20.0), Some((0, 0)));
        assert_eq!(g.pixel_at(4.99, 15.01), Some((0, 0)));
        assert_eq!(g.pixel_at(5.0, 15.0), Some((1, 1)));
        assert_eq!(g.pixel_at(19.99, 0.01), Some((3, 3)));
        assert_eq!(g.pixel_at(20.0, 10.0), None);
        assert_eq!(g.pixel_at(10.0, -0.01), None);
    }
}
