//! Deterministic synthetic path-loss simulator: free-space loss plus
//! multi-knife-edge diffraction (Deygout construction, up to three edges)
//! plus per-clutter offsets minus directional antenna gain. Serves as the
//! label-generating oracle for synthetic datasets, replacing a commercial
//! ray tracer. Also home to [`PathLossMatrix`] and drive-test style road
//! masks.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;
use rayon::prelude::*;
use thiserror::Error;

use crate::antenna::{pattern_gain, AntennaConfig, MobileConfig};
use crate::geodata::GisPatch;
use crate::tensor::compute_los_angles;

/// Speed of light in m·MHz, so wavelength_m = C / f_mhz.
pub const LIGHT_SPEED_M_MHZ: f64 = 299.792458;

#[derive(Debug, Error)]
pub enum RaysimError {
    #[error("input must be positive: {name} = {value}")]
    NonPositiveInput { name: &'static str, value: f64 },
    #[error("target pixel equals the antenna pixel")]
    SamePixel,
    #[error("edge index {index} out of range for {len} samples")]
    EdgeIndexOutOfRange { index: usize, len: usize },
    #[error("degenerate geometry: edge distances d1={d1}, d2={d2}")]
    DegenerateGeometry { d1: f64, d2: f64 },
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("invalid clutter table: {0}")]
    InvalidClutterTable(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed file: {message}")]
    Format { path: String, message: String },
}

/// H x W grid of path-loss values (dB) with a per-pixel validity mask.
/// Invalid pixels hold the sentinel value 0.0 and are excluded from all
/// statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct PathLossMatrix {
    height: usize,
    width: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl PathLossMatrix {
    /// All-valid matrix of zeros.
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
            mask: vec![true; height * width],
        }
    }

    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self, RaysimError> {
        if values.len() != height * width {
            return Err(RaysimError::ShapeMismatch(format!(
                "expected {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            mask: vec![true; values.len()],
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
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
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.width + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Restrict validity to the intersection with `mask`; newly invalid
    /// pixels are reset to the 0.0 sentinel.
    pub fn apply_mask(&mut self, mask: &[bool]) -> Result<(), RaysimError> {
        if mask.len() != self.mask.len() {
            return Err(RaysimError::ShapeMismatch(format!(
                "mask length {} does not match {}x{}",
                mask.len(),
                self.height,
                self.width
            )));
        }
        for i in 0..mask.len() {
            self.mask[i] &= mask[i];
            if !self.mask[i] {
                self.values[i] = 0.0;
            }
        }
        Ok(())
    }

    /// Valid pixels as (row, col, value).
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let w = self.width;
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(move |(i, _)| (i / w, i % w, self.values[i]))
    }
}

const PLM_MAGIC: &[u8; 4] = b"PLM1";

/// Write a matrix in the PLM1 format: magic, u32 LE H and W, H*W f32 LE
/// values, then H*W u8 mask bytes (1 = valid).
pub fn write_matrix(matrix: &PathLossMatrix, path: &Path) -> Result<(), RaysimError> {
    let mut buf = Vec::with_capacity(12 + matrix.values.len() * 5);
    buf.extend_from_slice(PLM_MAGIC);
    buf.extend_from_slice(&(matrix.height as u32).to_le_bytes());
    buf.extend_from_slice(&(matrix.width as u32).to_le_bytes());
    for &v in &matrix.values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &m in &matrix.mask {
        buf.push(m as u8);
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|source| RaysimError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Read a PLM1 matrix file.
pub fn read_matrix(path: &Path) -> Result<PathLossMatrix, RaysimError> {
    let display = path.display().to_string();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| RaysimError::Io {
            path: display.clone(),
            source,
        })?;
    let fmt_err = |message: String| RaysimError::Format {
        path: display.clone(),
        message,
    };
    if bytes.len() < 12 || &bytes[0..4] != PLM_MAGIC {
        return Err(fmt_err("missing PLM1 magic".into()));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + h * w * 4 + h * w;
    if bytes.len() != expected {
        return Err(fmt_err(format!(
            "expected {expected} bytes for {h}x{w}, found {}",
            bytes.len()
        )));
    }
    let mut values = Vec::with_capacity(h * w);
    for i in 0..h * w {
        let o = 12 + i * 4;
        values.push(f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64);
    }
    let mut mask = Vec::with_capacity(h * w);
    for i in 0..h * w {
        match bytes[12 + h * w * 4 + i] {
            0 => mask.push(false),
            1 => mask.push(true),
            other => return Err(fmt_err(format!("mask byte {other} is not 0 or 1"))),
        }
    }
    Ok(PathLossMatrix {
        height: h,
        width: w,
        values,
        mask,
    })
}

/// Additive clutter losses indexed by clutter code; code 0 (unknown) is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ClutterLossTable {
    pub loss_db: [f64; 22],
}

impl ClutterLossTable {
    pub fn new(loss_db: [f64; 22]) -> Result<Self, RaysimError> {
        if loss_db[0] != 0.0 {
            return Err(RaysimError::InvalidClutterTable(format!(
                "code 0 must map to 0 dB, got {}",
                loss_db[0]
            )));
        }
        if let Some(v) = loss_db.iter().find(|v| !v.is_finite()) {
            return Err(RaysimError::InvalidClutterTable(format!(
                "non-finite entry {v}"
            )));
        }
        Ok(Self { loss_db })
    }

    /// All-zero table (clutter-transparent world).
    pub fn zero() -> Self {
        Self { loss_db: [0.0; 22] }
    }

    /// Shipped synthetic defaults (not calibrated truth): open land 0,
    /// water slightly negative, vegetation and built-up areas positive.
    pub fn default_synthetic() -> Self {
        let mut loss_db = [0.0; 22];
        loss_db[1] = 0.0; // open
        loss_db[2] = -2.0; // water
        loss_db[3] = 1.0; // fields
        loss_db[4] = 4.0; // suburban
        loss_db[5] = 8.0; // forest
        loss_db[6] = 6.0; // urban
        loss_db[7] = 10.0; // dense urban
        loss_db[8] = 12.0; // high-rise
        for (code, v) in loss_db.iter_mut().enumerate().skip(9) {
            *v = 2.0 + (code as f64 - 9.0) * 0.5;
        }
        Self { loss_db }
    }

    #[inline]
    pub fn loss(&self, code: u8) -> f64 {
        self.loss_db[code as usize]
    }

    /// Load from CSV `code,loss_db` with 22 rows (optional header line).
    pub fn load(path: &Path) -> Result<Self, RaysimError> {
        let display = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|source| RaysimError::Io {
            path: display.clone(),
            source,
        })?;
        let mut loss_db = [f64::NAN; 22];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line == "code,loss_db") {
                continue;
            }
            let mut parts = line.split(',').map(str::trim);
            let err = |message: String| RaysimError::Format {
                path: display.clone(),
                message,
            };
            let code: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err(format!("line {}: bad code", lineno + 1)))?;
            let loss: f64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err(format!("line {}: bad loss", lineno + 1)))?;
            if code >= 22 {
                return Err(err(format!(
                    "line {}: code {code} out of range",
                    lineno + 1
                )));
            }
            if !loss_db[code].is_nan() {
                return Err(err(format!("line {}: duplicate code {code}", lineno + 1)));
            }
            loss_db[code] = loss;
        }
        if let Some(missing) = loss_db.iter().position(|v| v.is_nan()) {
            return Err(RaysimError::Format {
                path: display,
                message: format!("missing entry for code {missing}"),
            });
        }
        Self::new(loss_db)
    }

    pub fn save(&self, path: &Path) -> Result<(), RaysimError> {
        let mut text = String::from("code,loss_db\n");
        for (code, v) in self.loss_db.iter().enumerate() {
            text.push_str(&format!("{code},{v}\n"));
        }
        fs::write(path, text).map_err(|source| RaysimError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Friis free-space path loss in engineering units.
pub fn free_space_loss(d_m: f64, f_mhz: f64) -> Result<f64, RaysimError> {
    if !(d_m > 0.0) {
        return Err(RaysimError::NonPositiveInput {
            name: "d_m",
            value: d_m,
        });
    }
    if !(f_mhz > 0.0) {
        return Err(RaysimError::NonPositiveInput {
            name: "f_mhz",
            value: f_mhz,
        });
    }
    Ok(32.44 + 20.0 * (d_m / 1000.0).log10() + 20.0 * f_mhz.log10())
}

/// One obstruction sample along a terrain profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSample {
    /// Distance from the antenna along the path, meters.
    pub distance_m: f64,
    /// Terrain + building height at the sample, meters.
    pub obstruction_m: f64,
}

/// Terrain/building profile between the antenna and one receiver pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    /// Interior samples, one per crossed pixel, strictly increasing in
    /// distance and strictly inside (0, total_distance_m).
    pub samples: Vec<ProfileSample>,
    /// Antenna endpoint altitude: terrain + mount height.
    pub tx_alt_m: f64,
    /// Receiver endpoint altitude: terrain + mobile height.
    pub rx_alt_m: f64,
    pub total_distance_m: f64,
}

impl Profile {
    pub fn new(
        samples: Vec<ProfileSample>,
        tx_alt_m: f64,
        rx_alt_m: f64,
        total_distance_m: f64,
    ) -> Result<Self, RaysimError> {
        if !(total_distance_m > 0.0) {
            return Err(RaysimError::InvalidProfile(format!(
                "total distance {total_distance_m} must be positive"
            )));
        }
        let mut prev = 0.0;
        for s in &samples {
            if s.distance_m <= prev || s.distance_m >= total_distance_m {
                return Err(RaysimError::InvalidProfile(format!(
                    "sample distance {} must be strictly increasing within (0, {total_distance_m})",
                    s.distance_m
                )));
            }
            prev = s.distance_m;
        }
        Ok(Self {
            samples,
            tx_alt_m,
            rx_alt_m,
            total_distance_m,
        })
    }
}

/// Sample terrain + building along the straight segment between the
/// antenna pixel center and the target pixel center: one sample per
/// crossed interior pixel (amortized grid traversal), each at the midpoint
/// of the segment's overlap with that pixel.
pub fn extract_profile(
    patch: &GisPatch,
    antenna: &AntennaConfig,
    target_pixel: (usize, usize),
    mobile: &MobileConfig,
) -> Result<Profile, RaysimError> {
    let (cr, cc) = patch.center_pixel;
    let (tr, tc) = target_pixel;
    if (tr, tc) == (cr, cc) {
        return Err(RaysimError::SamePixel);
    }
    let res = patch.resolution_m;
    let adx = cc.abs_diff(tc) as u64; // vertical boundaries to cross
    let ady = cr.abs_diff(tr) as u64; // horizontal boundaries to cross
    let total_m = ((adx * adx + ady * ady) as f64).sqrt() * res;
    let dir_x: isize = if tc >= cc { 1 } else { -1 };
    let dir_y: isize = if tr >= cr { 1 } else { -1 };
    // Starting from the antenna pixel center, the i-th vertical boundary
    // is crossed at t = (0.5 + i) / |dx| (and likewise for horizontal), so
    // the crossing order reduces to comparing (1+2i)*|dy| with (1+2j)*|dx|
    // in exact integer arithmetic; equality means the segment passes
    // through a pixel corner and crosses diagonally.
    let t_cross = |k: u64, steps: u64| (0.5 + k as f64) / steps as f64;
    let mut i = 0u64;
    let mut j = 0u64;
    let mut cx = cc as isize;
    let mut cy = cr as isize;
    let mut samples = Vec::new();
    while (cy as usize, cx as usize) != (tr, tc) {
        let (cross_x, cross_y) = if i >= adx {
            (false, true)
        } else if j >= ady {
            (true, false)
        } else {
            match ((1 + 2 * i) * ady).cmp(&((1 + 2 * j) * adx)) {
                std::cmp::Ordering::Less => (true, false),
                std::cmp::Ordering::Greater => (false, true),
                std::cmp::Ordering::Equal => (true, true),
            }
        };
        let t_entered = if cross_x {
            t_cross(i, adx)
        } else {
            t_cross(j, ady)
        };
        if cross_x {
            cx += dir_x;
            i += 1;
        }
        if cross_y {
            cy += dir_y;
            j += 1;
        }
        let r = cy as usize;
        let c = cx as usize;
        if (r, c) != (tr, tc) {
            // interior pixel: sample at the midpoint of its crossing window
            let t_leave_x = if i < adx { t_cross(i, adx) } else { 1.0 };
            let t_leave_y = if j < ady { t_cross(j, ady) } else { 1.0 };
            let mid = 0.5 * (t_entered + t_leave_x.min(t_leave_y));
            samples.push(ProfileSample {
                distance_m: mid * total_m,
                obstruction_m: patch.terrain_m(r, c) + patch.building_m(r, c),
            });
        }
    }

    let tx_alt_m = patch.terrain_m(cr, cc) + antenna.height_m;
    let rx_alt_m = patch.terrain_m(tr, tc) + mobile.height_m;
    Profile::new(samples, tx_alt_m, rx_alt_m, total_m)
}

/// Fresnel diffraction parameter of one profile edge against the direct
/// antenna-receiver line.
pub fn knife_edge_v(profile: &Profile, edge_index: usize, f_mhz: f64) -> Result<f64, RaysimError> {
    if f_mhz <= 0.0 {
        return Err(RaysimError::NonPositiveInput {
            name: "f_mhz",
            value: f_mhz,
        });
    }
    let sample = profile
        .samples
        .get(edge_index)
        .ok_or(RaysimError::EdgeIndexOutOfRange {
            index: edge_index,
            len: profile.samples.len(),
        })?;
    let d1 = sample.distance_m;
    let d2 = profile.total_distance_m - sample.distance_m;
    if d1 <= 0.0 || d2 <= 0.0 {
        return Err(RaysimError::DegenerateGeometry { d1, d2 });
    }
    Ok(fresnel_v(
        sample.distance_m,
        sample.obstruction_m,
        0.0,
        profile.tx_alt_m,
        profile.total_distance_m,
        profile.rx_alt_m,
        f_mhz,
    ))
}

/// v for an edge at (d, h) against the line from (a_d, a_alt) to (b_d, b_alt).
#[inline]
fn fresnel_v(
    d: f64,
    h_obstruction: f64,
    a_d: f64,
    a_alt: f64,
    b_d: f64,
    b_alt: f64,
    f_mhz: f64,
) -> f64 {
    let d1 = d - a_d;
    let d2 = b_d - d;
    let line_alt = a_alt + (b_alt - a_alt) * d1 / (b_d - a_d);
    let h = h_obstruction - line_alt;
    let lambda = LIGHT_SPEED_M_MHZ / f_mhz;
    h * (2.0 * (d1 + d2) / (lambda * d1 * d2)).sqrt()
}

/// Single-knife-edge loss J(v): 0 below the -0.78 threshold, otherwise the
/// standard logarithmic approximation. Always >= 0.
pub fn knife_edge_loss(v: f64) -> f64 {
    if v <= -0.78 {
        return 0.0;
    }
    let t = v - 0.1;
    6.9 + 20.0 * ((t * t + 1.0).sqrt() + t).log10()
}

/// Total diffraction loss of a profile by the Deygout construction: the
/// principal (highest-v) edge plus one secondary edge on each side,
/// each secondary evaluated against the line between its own endpoints.
/// At most three edges contribute.
pub fn diffraction_loss(profile: &Profile, f_mhz: f64) -> f64 {
    let edges: Vec<(f64, f64)> = profile
        .samples
        .iter()
        .map(|s| (s.distance_m, s.obstruction_m))
        .collect();
    deygout(
        &edges,
        0.0,
        profile.tx_alt_m,
        profile.total_distance_m,
        profile.rx_alt_m,
        f_mhz,
        1,
    )
}

fn deygout(
    edges: &[(f64, f64)],
    a_d: f64,
    a_alt: f64,
    b_d: f64,
    b_alt: f64,
    f_mhz: f64,
    extra_depth: u8,
) -> f64 {
    let mut principal: Option<(usize, f64)> = None;
    for (i, &(d, h)) in edges.iter().enumerate() {
        if d - a_d <= 0.0 || b_d - d <= 0.0 {
            continue;
        }
        let v = fresnel_v(d, h, a_d, a_alt, b_d, b_alt, f_mhz);
        if principal.map_or(true, |(_, pv)| v > pv) {
            principal = Some((i, v));
        }
    }
    match principal {
        None => 0.0,
        Some((_, v)) if v <= -0.78 => 0.0,
        Some((i, v)) => {
            let mut loss = knife_edge_loss(v);
            if extra_depth > 0 {
                let (ed, eh) = edges[i];
                loss += deygout(&edges[..i], a_d, a_alt, ed, eh, f_mhz, extra_depth - 1);
                loss += deygout(&edges[i + 1..], ed, eh, b_d, b_alt, f_mhz, extra_depth - 1);
            }
            loss
        }
    }
}

/// Simulate the full path-loss matrix for one antenna over a patch:
/// per pixel, free-space loss at the 3-D distance, plus diffraction along
/// the terrain profile, plus the pixel's clutter loss, minus directional
/// antenna gain toward the pixel. The antenna pixel uses a clamped
/// distance of half a pixel and no diffraction. Every pixel is valid.
pub fn simulate(
    patch: &GisPatch,
    antenna: &AntennaConfig,
    mobile: &MobileConfig,
    clutter_table: &ClutterLossTable,
) -> PathLossMatrix {
    let (h, w) = (patch.height(), patch.width());
    let (cr, cc) = patch.center_pixel;
    let res = patch.resolution_m;
    let los = compute_los_angles(patch, antenna);
    let tx_alt = patch.terrain_m(cr, cc) + antenna.height_m;
    let f = antenna.frequency_mhz;

    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|r| {
            (0..w)
                .map(|c| {
                    let i = r * w + c;
                    let gain = pattern_gain(
                        &antenna.pattern,
                        los.azimuth_offset_deg[i],
                        los.elevation_offset_deg[i],
                    )
                    .expect("los angles are always within pattern bounds");
                    let clutter = clutter_table.loss(patch.clutter_code(r, c));
                    if (r, c) == (cr, cc) {
                        let d = res / 2.0;
                        let fspl = free_space_loss(d, f).expect("clamped distance is positive");
                        return fspl + clutter - gain;
                    }
                    let dx = (c as f64 - cc as f64) * res;
                    let dy = (cr as f64 - r as f64) * res;
                    let horizontal = dx.hypot(dy);
                    let rx_alt = patch.terrain_m(r, c) + mobile.height_m;
                    let d3 = horizontal.hypot(tx_alt - rx_alt);
                    let fspl = free_space_loss(d3, f).expect("distance is positive");
                    let profile = extract_profile(patch, antenna, (r, c), mobile)
                        .expect("non-center pixel always yields a profile");
                    fspl + diffraction_loss(&profile, f) + clutter - gain
                })
                .collect()
        })
        .collect();

    let mut out = PathLossMatrix::zeros(h, w);
    for (r, row) in rows.into_iter().enumerate() {
        for (c, v) in row.into_iter().enumerate() {
            out.set(r, c, v);
        }
    }
    out
}

/// Generate a drive-test style validity mask: connected random-walk road
/// polylines of width 1, marked until the requested coverage is met
/// exactly (rounded up to whole pixels). Deterministic per seed.
///
/// `coverage_target` must lie in [0.01, 0.5].
pub fn road_mask(width: usize, height: usize, seed: u64, coverage_target: f64) -> Vec<bool> {
    assert!(
        (0.01..=0.5).contains(&coverage_target),
        "coverage_target {coverage_target} outside [0.01, 0.5]"
    );
    let n = width * height;
    let target = ((coverage_target * n as f64).ceil() as usize).min(n);
    let mut mask = vec![false; n];
    let mut marked = 0usize;
    let mut rng = Pcg64::seed_from_u64(seed);
    // 8-connected step directions (dx, dy)
    const DIRS: [(isize, isize); 8] = [
        (1, 0),
        (1, 1),
        (0, 1),
        (-1, 1),
        (-1, 0),
        (-1, -1),
        (0, -1),
        (1, -1),
    ];
    while marked < target {
        // pick an unmarked starting cell (rejection, bounded, then scan)
        let mut start = None;
        for _ in 0..64 {
            let idx = rng.random_range(0..n);
            if !mask[idx] {
                start = Some(idx);
                break;
            }
        }
        let idx = start.unwrap_or_else(|| {
            mask.iter()
                .position(|&m| !m)
                .expect("target <= n guarantees a free cell")
        });
        let mut c = (idx % width) as isize;
        let mut r = (idx / width) as isize;
        mask[idx] = true;
        marked += 1;
        let mut dir = rng.random_range(0..8usize);
        let len = rng.random_range(20..=(2 * (width + height)));
        for _ in 0..len {
            if marked >= target {
                break;
            }
            // mostly straight roads with occasional 45-degree turns
            if rng.random_range(0..4u8) == 0 {
                dir = if rng.random_range(0..2u8) == 0 {
                    (dir + 1) % 8
                } else {
                    (dir + 7) % 8
                };
            }
            let (dx, dy) = DIRS[dir];
            let nc = c + dx;
            let nr = r + dy;
            if nc < 0 || nr < 0 || nc >= width as isize || nr >= height as isize {
                break;
            }
            c = nc;
            r = nr;
            let i = r as usize * width + c as usize;
            if !mask[i] {
                mask[i] = true;
                marked += 1;
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::antenna::omni_pattern;
    use crate::geodata::RasterGrid;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn flat_patch(h: usize, w: usize, res: f64) -> GisPatch {
        GisPatch {
            clutter: RasterGrid::filled(w, h, res, 0.0),
            building: RasterGrid::filled(w, h, res, 0.0),
            terrain: RasterGrid::filled(w, h, res, 0.0),
            center_pixel: (h / 2, w / 2),
            resolution_m: res,
        }
    }

    fn antenna(height_m: f64, f_mhz: f64) -> AntennaConfig {
        AntennaConfig {
            easting_m: 0.0,
            northing_m: 0.0,
            height_m,
            azimuth_deg: 0.0,
            tilt_deg: 0.0,
            frequency_mhz: f_mhz,
            tx_power_dbm: 43.0,
            pattern: Arc::new(omni_pattern(0.0)),
        }
    }

    #[test]
    fn free_space_loss_oracles() {
        assert_abs_diff_eq!(
            free_space_loss(1000.0, 1000.0).unwrap(),
            92.44,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            free_space_loss(1000.0, 1.0).unwrap(),
            32.44,
            epsilon = 1e-12
        );
        let base = free_space_loss(500.0, 900.0).unwrap();
        assert_abs_diff_eq!(
            free_space_loss(1000.0, 900.0).unwrap() - base,
            6.020599913279624,
            epsilon = 1e-12
        );
        assert!(free_space_loss(0.0, 900.0).is_err());
        assert!(free_space_loss(10.0, -1.0).is_err());
    }

    #[test]
    fn free_space_scaling_identity() {
        // fspl(k*d, f) = fspl(d, f) + 20 log10 k, up to float rounding
        for &(d, f, k) in &[
            (100.0, 900.0, 2.0),
            (350.0, 1800.0, 7.5),
            (1000.0, 2600.0, 0.3),
        ] {
            let lhs = free_space_loss(k * d, f).unwrap();
            let rhs = free_space_loss(d, f).unwrap() + 20.0 * f64::log10(k);
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-9);
        }
    }

    #[test]
    fn profile_straight_east_crosses_interior_columns() {
        let mut patch = flat_patch(16, 16, 5.0);
        patch.building.set(8, 11, 30.0); // one building along the path
        let ant = antenna(25.0, 900.0);
        let profile = extract_profile(&patch, &ant, (8, 14), &MobileConfig::default()).unwrap();
        // interior pixels: columns 9..=13 at row 8
        assert_eq!(profile.samples.len(), 5);
        for (i, s) in profile.samples.iter().enumerate() {
            // midpoints at whole-pixel distances from the center pixel
            assert_abs_diff_eq!(s.distance_m, (i as f64 + 1.0) * 5.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(profile.total_distance_m, 6.0 * 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(profile.samples[2].obstruction_m, 30.0, epsilon = 1e-12);
        assert_abs_diff_eq!(profile.samples[0].obstruction_m, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(profile.tx_alt_m, 25.0, epsilon = 1e-12);
        assert_abs_diff_eq!(profile.rx_alt_m, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn profile_adjacent_pixel_has_no_interior_samples() {
        let patch = flat_patch(16, 16, 5.0);
        let ant = antenna(25.0, 900.0);
        for target in [(8, 9), (7, 8), (7, 9), (9, 7)] {
            let p = extract_profile(&patch, &ant, target, &MobileConfig::default()).unwrap();
            assert!(p.samples.is_empty(), "target {target:?}");
        }
        assert!(matches!(
            extract_profile(&patch, &ant, (8, 8), &MobileConfig::default()),
            Err(RaysimError::SamePixel)
        ));
    }

    #[test]
    fn profile_exact_diagonal_uses_corner_crossing() {
        let patch = flat_patch(16, 16, 5.0);
        let ant = antenna(25.0, 900.0);
        let p = extract_profile(&patch, &ant, (12, 12), &MobileConfig::default()).unwrap();
        // diagonal cells (9,9)..(11,11) only; corner-touched cells skipped
        assert_eq!(p.samples.len(), 3);
        let step = 5.0 * 2f64.sqrt();
        for (i, s) in p.samples.iter().enumerate() {
            assert_abs_diff_eq!(s.distance_m, (i as f64 + 1.0) * step, epsilon = 1e-9);
        }
    }

    /// Independent brute-force oracle: clip the segment against every
    /// pixel square (Liang-Barsky) and keep cells with a positive-length
    /// overlap, sampled at the overlap midpoint. Corner touches have zero
    /// length and are correctly excluded.
    fn clipped_profile(
        patch: &GisPatch,
        from: (usize, usize),
        to: (usize, usize),
    ) -> Vec<((usize, usize), f64)> {
        let res = patch.resolution_m;
        let sx = from.1 as f64 + 0.5;
        let sy = from.0 as f64 + 0.5;
        let dx = to.1 as f64 + 0.5 - sx;
        let dy = to.0 as f64 + 0.5 - sy;
        let total = dx.hypot(dy) * res;
        let axis_window = |start: f64, delta: f64, lo: f64, hi: f64| -> Option<(f64, f64)> {
            if delta == 0.0 {
                if start >= lo && start <= hi {
                    Some((f64::NEG_INFINITY, f64::INFINITY))
                } else {
                    None
                }
            } else {
                let (a, b) = ((lo - start) / delta, (hi - start) / delta);
                Some((a.min(b), a.max(b)))
            }
        };
        let mut cells: Vec<(f64, (usize, usize), f64)> = Vec::new();
        for r in 0..patch.height() {
            for c in 0..patch.width() {
                if (r, c) == from || (r, c) == to {
                    continue;
                }
                let Some((x0, x1)) = axis_window(sx, dx, c as f64, c as f64 + 1.0) else {
                    continue;
                };
                let Some((y0, y1)) = axis_window(sy, dy, r as f64, r as f64 + 1.0) else {
                    continue;
                };
                let t0 = x0.max(y0).max(0.0);
                let t1 = x1.min(y1).min(1.0);
                if t1 - t0 > 1e-12 {
                    cells.push((t0, (r, c), 0.5 * (t0 + t1) * total));
                }
            }
        }
        cells.sort_by(|a, b| a.0.total_cmp(&b.0));
        cells
            .into_iter()
            .map(|(_, cell, mid)| (cell, mid))
            .collect()
    }

    #[test]
    fn profile_matches_supersampled_oracle_on_generic_lines() {
        let mut patch = flat_patch(24, 24, 3.0);
        for r in 0..24 {
            for c in 0..24 {
                patch.terrain.set(r, c, ((r * 5 + c * 3) % 11) as f64);
                patch.building.set(r, c, ((r + c) % 4) as f64 * 2.0);
            }
        }
        let ant = antenna(20.0, 1800.0);
        for target in [
            (3usize, 20usize),
            (20, 3),
            (0, 0),
            (23, 17),
            (11, 23),
            (17, 5),
        ] {
            let p = extract_profile(&patch, &ant, target, &MobileConfig::default()).unwrap();
            let oracle = clipped_profile(&patch, patch.center_pixel, target);
            assert_eq!(p.samples.len(), oracle.len(), "target {target:?}");
            for (s, (cell, mid)) in p.samples.iter().zip(&oracle) {
                assert_abs_diff_eq!(s.distance_m, *mid, epsilon = 1e-9);
                let expect = patch.terrain_m(cell.0, cell.1) + patch.building_m(cell.0, cell.1);
                assert_abs_diff_eq!(s.obstruction_m, expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn fresnel_parameter_oracles() {
        // symmetric 1 km path, 10 m edge at the middle, 1000 MHz
        let profile = Profile::new(
            vec![ProfileSample {
                distance_m: 500.0,
                obstruction_m: 10.0,
            }],
            0.0,
            0.0,
            1000.0,
        )
        .unwrap();
        let v = knife_edge_v(&profile, 0, 1000.0).unwrap();
        assert_abs_diff_eq!(v, 1.633558312881795, epsilon = 1e-12);

        // edge exactly on a slanted sight line: v = 0
        let profile = Profile::new(
            vec![ProfileSample {
                distance_m: 300.0,
                obstruction_m: 6.0,
            }],
            0.0,
            20.0,
            1000.0,
        )
        .unwrap();
        assert_abs_diff_eq!(
            knife_edge_v(&profile, 0, 1000.0).unwrap(),
            0.0,
            epsilon = 1e-12
        );

        // edge below the line: negative v
        let profile = Profile::new(
            vec![ProfileSample {
                distance_m: 300.0,
                obstruction_m: -5.0,
            }],
            0.0,
            0.0,
            1000.0,
        )
        .unwrap();
        assert!(knife_edge_v(&profile, 0, 1000.0).unwrap() < 0.0);

        assert!(matches!(
            knife_edge_v(&profile, 3, 1000.0),
            Err(RaysimError::EdgeIndexOutOfRange { .. })
        ));
    }

    #[test]
    fn knife_edge_loss_spot_values_and_monotonicity() {
        assert_eq!(knife_edge_loss(-0.78), 0.0);
        assert_eq!(knife_edge_loss(-5.0), 0.0);
        assert_abs_diff_eq!(knife_edge_loss(0.0), 6.032852208563606, epsilon = 1e-12);
        // frozen from the J(v) formula at v = 1.634
        assert_abs_diff_eq!(knife_edge_loss(1.634), 17.440120741926354, epsilon = 1e-12);
        let mut prev = -1.0;
        let mut v = -2.0;
        while v <= 10.0 {
            let j = knife_edge_loss(v);
            assert!(j >= 0.0);
            assert!(j >= prev, "J not monotone at v={v}");
            prev = j;
            v += 0.01;
        }
    }

    #[test]
    fn diffraction_loss_base_cases() {
        // unobstructed flat profile: far below the line, zero loss
        let flat = Profile::new(
            (1..10)
                .map(|i| ProfileSample {
                    distance_m: i as f64 * 100.0,
                    obstruction_m: 0.0,
                })
                .collect(),
            30.0,
            1.5,
            1000.0,
        )
        .unwrap();
        assert_eq!(diffraction_loss(&flat, 900.0), 0.0);

        // single dominant edge: equals that edge's knife-edge loss
        let single = Profile::new(
            vec![ProfileSample {
                distance_m: 500.0,
                obstruction_m: 10.0,
            }],
            0.0,
            0.0,
            1000.0,
        )
        .unwrap();
        let v = knife_edge_v(&single, 0, 1000.0).unwrap();
        assert_abs_diff_eq!(
            diffraction_loss(&single, 1000.0),
            knife_edge_loss(v),
            epsilon = 1e-12
        );

        // two equal edges: total at least the single-edge loss
        let double = Profile::new(
            vec![
                ProfileSample {
                    distance_m: 333.0,
                    obstruction_m: 10.0,
                },
                ProfileSample {
                    distance_m: 667.0,
                    obstruction_m: 10.0,
                },
            ],
            0.0,
            0.0,
            1000.0,
        )
        .unwrap();
        assert!(diffraction_loss(&double, 1000.0) >= diffraction_loss(&single, 1000.0));
    }

    #[test]
    fn deygout_uses_at_most_three_edges() {
        // four tall equal edges: loss bounded by 3x the principal-edge J
        let many = Profile::new(
            (1..=4)
                .map(|i| ProfileSample {
                    distance_m: i as f64 * 200.0,
                    obstruction_m: 30.0,
                })
                .collect(),
            0.0,
            0.0,
            1000.0,
        )
        .unwrap();
        let vs: Vec<f64> = (0..4)
            .map(|i| knife_edge_v(&many, i, 900.0).unwrap())
            .collect();
        let jmax = vs.iter().cloned().map(knife_edge_loss).fold(0.0, f64::max);
        let total = diffraction_loss(&many, 900.0);
        assert!(total <= 3.0 * jmax + 1e-9, "total {total} > 3 * {jmax}");
        assert!(total > 0.0);
    }

    #[test]
    fn simulate_reduces_to_free_space_on_flat_open_ground() {
        // 17x17 patch at 125 m: pixel (8,0) sits exactly 1000 m west
        let patch = flat_patch(17, 17, 125.0);
        let mut ant = antenna(30.0, 1000.0);
        let mobile = MobileConfig { height_m: 30.0 }; // equal heights: pure horizontal path
        let m = simulate(&patch, &ant, &mobile, &ClutterLossTable::zero());
        assert_abs_diff_eq!(m.get(8, 0), 92.44, epsilon = 1e-9);

        // default 1.5 m mobile tilts the 3-D distance slightly
        let m2 = simulate(
            &patch,
            &ant,
            &MobileConfig::default(),
            &ClutterLossTable::zero(),
        );
        let d3 = 1000f64.hypot(28.5);
        assert_abs_diff_eq!(
            m2.get(8, 0),
            free_space_loss(d3, 1000.0).unwrap(),
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(m2.get(8, 0), 92.44, epsilon = 0.01);

        // a 17 dBi boresight gain shifts the pixel down by exactly 17 dB
        ant.pattern = Arc::new(omni_pattern(17.0));
        let m3 = simulate(&patch, &ant, &mobile, &ClutterLossTable::zero());
        assert_abs_diff_eq!(m3.get(8, 0), 92.44 - 17.0, epsilon = 1e-9);

        for r in 0..17 {
            for c in 0..17 {
                assert!(m.get(r, c).is_finite());
                assert!(m.is_valid(r, c));
            }
        }
    }

    #[test]
    fn simulate_applies_clutter_offsets() {
        let mut patch = flat_patch(17, 17, 50.0);
        patch.clutter.set(8, 2, 5.0); // forest
        patch.clutter.set(8, 14, 1.0); // open
        let ant = antenna(30.0, 900.0);
        let table = ClutterLossTable::default_synthetic();
        let m = simulate(&patch, &ant, &MobileConfig::default(), &table);
        // symmetric pixels, only clutter differs
        assert_abs_diff_eq!(m.get(8, 2) - m.get(8, 14), 8.0 - 0.0, epsilon = 1e-9);
    }

    #[test]
    fn simulate_building_shadow_never_reduces_loss() {
        let mut rng = Pcg64::seed_from_u64(1234);
        for _ in 0..3 {
            let mut patch = flat_patch(32, 32, 10.0);
            // gentle rolling terrain
            for r in 0..32 {
                for c in 0..32 {
                    let t = 5.0 * ((r as f64 * 0.3).sin() + (c as f64 * 0.2).cos() + 2.0);
                    patch.terrain.set(r, c, t);
                }
            }
            let mut with_buildings = patch.clone();
            for _ in 0..25 {
                let r = rng.random_range(0..32usize);
                let c = rng.random_range(0..32usize);
                let h = rng.random_range(5.0..35.0);
                with_buildings.building.set(r, c, h);
            }
            let ant = antenna(25.0, 1800.0);
            let open = simulate(
                &patch,
                &ant,
                &MobileConfig::default(),
                &ClutterLossTable::zero(),
            );
            let built = simulate(
                &with_buildings,
                &ant,
                &MobileConfig::default(),
                &ClutterLossTable::zero(),
            );
            for r in 0..32 {
                for c in 0..32 {
                    assert!(
                        built.get(r, c) >= open.get(r, c) - 1e-9,
                        "building shadow reduced loss at ({r},{c}): {} < {}",
                        built.get(r, c),
                        open.get(r, c)
                    );
                }
            }
        }
    }

    #[test]
    fn matrix_round_trip_and_mask() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = PathLossMatrix::zeros(6, 5);
        for r in 0..6 {
            for c in 0..5 {
                m.set(r, c, 60.0 + (r * 5 + c) as f64);
            }
        }
        let mask: Vec<bool> = (0..30).map(|i| i % 3 != 0).collect();
        m.apply_mask(&mask).unwrap();
        assert_eq!(m.valid_count(), mask.iter().filter(|&&b| b).count());
        // invalid pixels now hold the sentinel
        assert_eq!(m.get(0, 0), 0.0);
        let path = dir.path().join("m.plm");
        write_matrix(&m, &path).unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(back.height(), 6);
        assert_eq!(back.width(), 5);
        assert_eq!(back.mask(), m.mask());
        for (a, b) in m.values().iter().zip(back.values()) {
            assert_eq!(*a as f32, *b as f32);
        }
        // malformed files
        fs::write(&path, b"PLMX").unwrap();
        assert!(matches!(
            read_matrix(&path),
            Err(RaysimError::Format { .. })
        ));
    }

    #[test]
    fn road_mask_coverage_and_determinism() {
        for seed in [1u64, 7, 42, 99] {
            let mask = road_mask(64, 64, seed, 0.075);
            let coverage = mask.iter().filter(|&&b| b).count() as f64 / (64.0 * 64.0);
            assert!(
                (0.06..=0.09).contains(&coverage),
                "seed {seed}: coverage {coverage}"
            );
            assert_eq!(mask, road_mask(64, 64, seed, 0.075));
        }
        let half = road_mask(40, 40, 3, 0.5);
        let coverage = half.iter().filter(|&&b| b).count() as f64 / 1600.0;
        assert!((0.4..=0.6).contains(&coverage));
        // different seeds give different roads
        assert_ne!(road_mask(64, 64, 1, 0.075), road_mask(64, 64, 2, 0.075));
    }

    #[test]
    fn clutter_table_validation_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let table = ClutterLossTable::default_synthetic();
        assert_eq!(table.loss(0), 0.0);
        let path = dir.path().join("clutter.csv");
        table.save(&path).unwrap();
        let back = ClutterLossTable::load(&path).unwrap();
        assert_eq!(back, table);

        let mut bad = [0.0; 22];
        bad[0] = 1.0;
        assert!(ClutterLossTable::new(bad).is_err());

        fs::write(&path, "code,loss_db\n0,0\n").unwrap();
        assert!(ClutterLossTable::load(&path).is_err());
    }
}
