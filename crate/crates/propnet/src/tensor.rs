//! The 8-channel model input: scaled map layers plus per-pixel antenna
//! geometry, stored channel-major. Includes the dihedral augmentation
//! transforms and the PLT1 binary tensor format.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::antenna::{pattern_gain, wrap_angle, AntennaConfig, AntennaError};
use crate::geodata::GisPatch;

pub const CHANNELS: usize = 8;

/// Channel order within an [`InputTensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    /// Clutter code / 21.
    Clutter = 0,
    /// Building height / 100 m.
    Building = 1,
    /// Normalized terrain altitude / 100 m.
    Terrain = 2,
    /// Line-of-sight azimuth offset from boresight / 180 deg.
    AzimuthOffset = 3,
    /// Line-of-sight depression offset from boresight / 90 deg.
    ElevationOffset = 4,
    /// Antenna mount height / 100 m.
    AntennaHeight = 5,
    /// Carrier frequency / 3000 MHz.
    Frequency = 6,
    /// Directional antenna gain toward the pixel / 30 dB.
    AntennaGain = 7,
}

pub const CLUTTER_SCALE: f64 = 21.0;
pub const HEIGHT_SCALE_M: f64 = 100.0;
pub const AZIMUTH_SCALE_DEG: f64 = 180.0;
pub const ELEVATION_SCALE_DEG: f64 = 90.0;
pub const FREQUENCY_SCALE_MHZ: f64 = 3000.0;
pub const GAIN_SCALE_DB: f64 = 30.0;
/// Scaled channel values beyond this magnitude indicate misconfiguration.
pub const MAX_SCALED_MAGNITUDE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("channel {channel} value {value} exceeds scaled magnitude {MAX_SCALED_MAGNITUDE}")]
    ScaleOverflow { channel: usize, value: f64 },
    #[error("rotations require a square tensor, got {width}x{height}")]
    NonSquare { width: usize, height: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed tensor file: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Antenna(#[from] AntennaError),
}

/// Channel-major (channel, row, column) stack of 8 scaled feature planes.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl InputTensor {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; CHANNELS * height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        self.data[(channel * self.height + row) * self.width + col] = value;
    }

    /// One H*W channel plane, row-major.
    pub fn channel(&self, channel: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[channel * plane..(channel + 1) * plane]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != CHANNELS * height * width {
            return Err(TensorError::ShapeMismatch(format!(
                "expected {} values for {CHANNELS}x{height}x{width}, got {}",
                CHANNELS * height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }
}

/// Per-pixel line-of-sight angles relative to the antenna boresight.
#[derive(Debug, Clone)]
pub struct LosAngles {
    pub height: usize,
    pub width: usize,
    /// Degrees in (-180, 180], row-major.
    pub azimuth_offset_deg: Vec<f64>,
    /// Degrees in [-90, 90], row-major.
    pub elevation_offset_deg: Vec<f64>,
}

/// Compute the boresight-relative direction of every pixel.
///
/// Bearings are measured clockwise from north. The elevation offset is a
/// depression angle: how far the sight line to the pixel dips below the
/// antenna's horizontal, minus the mechanical downtilt, clamped to
/// [-90, 90] — positive values look below boresight. The antenna's own
/// pixel gets azimuth 0 and elevation -90 by convention.
pub fn compute_los_angles(patch: &GisPatch, antenna: &AntennaConfig) -> LosAngles {
    let (h, w) = (patch.height(), patch.width());
    let (cr, cc) = patch.center_pixel;
    let res = patch.resolution_m;
    let antenna_alt = patch.terrain_m(cr, cc) + antenna.height_m;

    let mut az = vec![0.0; h * w];
    let mut el = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if (r, c) == (cr, cc) {
                az[i] = 0.0;
                el[i] = -90.0;
                continue;
            }
            let dx = (c as f64 - cc as f64) * res; // east
            let dy = (cr as f64 - r as f64) * res; // north
            let dist = dx.hypot(dy);
            let bearing = dx.atan2(dy).to_degrees();
            az[i] = wrap_angle(bearing - antenna.azimuth_deg);
            let pixel_alt = patch.terrain_m(r, c);
            let los_depression = (antenna_alt - pixel_alt).atan2(dist).to_degrees();
            el[i] = (los_depression - antenna.tilt_deg).clamp(-90.0, 90.0);
        }
    }
    LosAngles {
        height: h,
        width: w,
        azimuth_offset_deg: az,
        elevation_offset_deg: el,
    }
}

/// Assemble the 8-channel scaled input for one antenna/patch pair.
pub fn build_input_tensor(
    patch: &GisPatch,
    antenna: &AntennaConfig,
) -> Result<InputTensor, TensorError> {
    let (h, w) = (patch.height(), patch.width());
    let los = compute_los_angles(patch, antenna);
    let mut t = InputTensor::zeros(h, w);

    let mut put = |channel: usize, row: usize, col: usize, value: f64| -> Result<(), TensorError> {
        if !value.is_finite() || value.abs() > MAX_SCALED_MAGNITUDE {
            return Err(TensorError::ScaleOverflow { channel, value });
        }
        t.set(channel, row, col, value);
        Ok(())
    };

    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            put(0, r, c, patch.clutter_code(r, c) as f64 / CLUTTER_SCALE)?;
            put(1, r, c, patch.building_m(r, c) / HEIGHT_SCALE_M)?;
            put(2, r, c, patch.terrain_m(r, c) / HEIGHT_SCALE_M)?;
            put(3, r, c, los.azimuth_offset_deg[i] / AZIMUTH_SCALE_DEG)?;
            put(4, r, c, los.elevation_offset_deg[i] / ELEVATION_SCALE_DEG)?;
            put(5, r, c, antenna.height_m / HEIGHT_SCALE_M)?;
            put(6, r, c, antenna.frequency_mhz / FREQUENCY_SCALE_MHZ)?;
            let gain = pattern_gain(
                &antenna.pattern,
                los.azimuth_offset_deg[i],
                los.elevation_offset_deg[i],
            )?;
            put(7, r, c, gain / GAIN_SCALE_DB)?;
        }
    }
    Ok(t)
}

/// One of the eight dihedral (rotation/mirror) symmetries of a square image.
///
/// The mirror (a column flip) is applied first, then the rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentTransform {
    pub rotation: Rotation,
    pub mirror: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rotation {
    None,
    /// 90 degrees clockwise.
    Cw90,
    Cw180,
    Cw270,
}

impl AugmentTransform {
    pub const IDENTITY: Self = Self {
        rotation: Rotation::None,
        mirror: false,
    };

    /// All eight transforms, identity first.
    pub fn all() -> [Self; 8] {
        let mut out = [Self::IDENTITY; 8];
        let rots = [
            Rotation::None,
            Rotation::Cw90,
            Rotation::Cw180,
            Rotation::Cw270,
        ];
        for (i, &rotation) in rots.iter().enumerate() {
            out[i] = Self {
                rotation,
                mirror: false,
            };
            out[i + 4] = Self {
                rotation,
                mirror: true,
            };
        }
        out
    }

    /// The four transforms that preserve non-square shapes.
    pub fn shape_preserving() -> [Self; 4] {
        [
            Self::IDENTITY,
            Self {
                rotation: Rotation::Cw180,
                mirror: false,
            },
            Self {
                rotation: Rotation::None,
                mirror: true,
            },
            Self {
                rotation: Rotation::Cw180,
                mirror: true,
            },
        ]
    }

    fn changes_shape(&self) -> bool {
        matches!(self.rotation, Rotation::Cw90 | Rotation::Cw270)
    }

    /// Source index (row, col) that lands at destination (row, col).
    #[inline]
    fn source_index(&self, dr: usize, dc: usize, src_h: usize, src_w: usize) -> (usize, usize) {
        // Invert the rotation first, then the mirror.
        let (mut r, mut c) = match self.rotation {
            Rotation::None => (dr, dc),
            // dest(r, c) = src(h-1-c, r) for a clockwise quarter turn
            Rotation::Cw90 => (src_h - 1 - dc, dr),
            Rotation::Cw180 => (src_h - 1 - dr, src_w - 1 - dc),
            Rotation::Cw270 => (dc, src_w - 1 - dr),
        };
        if self.mirror {
            c = src_w - 1 - c;
        }
        let _ = &mut r;
        (r, c)
    }
}

/// Apply a dihedral transform to one row-major plane.
fn transform_plane(src: &[f64], src_h: usize, src_w: usize, t: AugmentTransform) -> Vec<f64> {
    let (dst_h, dst_w) = if t.changes_shape() {
        (src_w, src_h)
    } else {
        (src_h, src_w)
    };
    let mut out = vec![0.0; src.len()];
    for r in 0..dst_h {
        for c in 0..dst_w {
            let (sr, sc) = t.source_index(r, c, src_h, src_w);
            out[r * dst_w + c] = src[sr * src_w + sc];
        }
    }
    out
}

fn transform_mask(src: &[bool], src_h: usize, src_w: usize, t: AugmentTransform) -> Vec<bool> {
    let (dst_h, dst_w) = if t.changes_shape() {
        (src_w, src_h)
    } else {
        (src_h, src_w)
    };
    let mut out = vec![false; src.len()];
    for r in 0..dst_h {
        for c in 0..dst_w {
            let (sr, sc) = t.source_index(r, c, src_h, src_w);
            out[r * dst_w + c] = src[sr * src_w + sc];
        }
    }
    out
}

/// Jointly transform a tensor, its label plane, and the validity mask.
///
/// The azimuth-offset channel is negated under mirroring (a reflection
/// flips the sign of clockwise angle offsets). Quarter-turn rotations
/// require a square tensor.
pub fn augment(
    tensor: &InputTensor,
    label: &[f64],
    mask: &[bool],
    t: AugmentTransform,
) -> Result<(InputTensor, Vec<f64>, Vec<bool>), TensorError> {
    let (h, w) = (tensor.height, tensor.width);
    if t.changes_shape() && h != w {
        return Err(TensorError::NonSquare {
            width: w,
            height: h,
        });
    }
    if label.len() != h * w || mask.len() != h * w {
        return Err(TensorError::ShapeMismatch(format!(
            "label/mask length must be {}, got {}/{}",
            h * w,
            label.len(),
            mask.len()
        )));
    }
    let mut out = InputTensor::zeros(h, w);
    for ch in 0..CHANNELS {
        let mut plane = transform_plane(tensor.channel(ch), h, w, t);
        if ch == Channel::AzimuthOffset as usize && t.mirror {
            for v in &mut plane {
                *v = -*v;
            }
        }
        let base = ch * h * w;
        out.data[base..base + h * w].copy_from_slice(&plane);
    }
    let label_out = transform_plane(label, h, w, t);
    let mask_out = transform_mask(mask, h, w, t);
    Ok((out, label_out, mask_out))
}

const PLT_MAGIC: &[u8; 4] = b"PLT1";

/// Write a tensor in the PLT1 format: magic, u32 LE channel/height/width,
/// then f32 LE values channel-major.
pub fn write_tensor(tensor: &InputTensor, path: &Path) -> Result<(), TensorError> {
    let mut buf = Vec::with_capacity(16 + tensor.data.len() * 4);
    buf.extend_from_slice(PLT_MAGIC);
    buf.extend_from_slice(&(CHANNELS as u32).to_le_bytes());
    buf.extend_from_slice(&(tensor.height as u32).to_le_bytes());
    buf.extend_from_slice(&(tensor.width as u32).to_le_bytes());
    for &v in &tensor.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|source| TensorError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Read a PLT1 tensor file. Values are widened back to f64.
pub fn read_tensor(path: &Path) -> Result<InputTensor, TensorError> {
    let display = path.display().to_string();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| TensorError::Io {
            path: display.clone(),
            source,
        })?;
    let fmt_err = |message: &str| TensorError::Format {
        path: display.clone(),
        message: message.to_string(),
    };
    if bytes.len() < 16 || &bytes[0..4] != PLT_MAGIC {
        return Err(fmt_err("missing PLT1 magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (c, h, w) = (u32_at(4), u32_at(8), u32_at(12));
    if c != CHANNELS {
        return Err(fmt_err(&format!("expected {CHANNELS} channels, found {c}")));
    }
    let expected = 16 + c * h * w * 4;
    if bytes.len() != expected {
        return Err(fmt_err(&format!(
            "expected {expected} bytes for {c}x{h}x{w}, found {}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(c * h * w);
    for i in 0..c * h * w {
        let o = 16 + i * 4;
        data.push(f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64);
    }
    InputTensor::from_data(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::antenna::{omni_pattern, sector_pattern};
    use crate::geodata::{normalize_terrain, RasterGrid};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn flat_patch(h: usize, w: usize, res: f64) -> GisPatch {
        GisPatch {
            clutter: RasterGrid::filled(w, h, res, 3.0),
            building: RasterGrid::filled(w, h, res, 0.0),
            terrain: RasterGrid::filled(w, h, res, 0.0),
            center_pixel: (h / 2, w / 2),
            resolution_m: res,
        }
    }

    fn antenna(azimuth: f64, tilt: f64) -> AntennaConfig {
        AntennaConfig {
            easting_m: 0.0,
            northing_m: 0.0,
            height_m: 30.0,
            azimuth_deg: azimuth,
            tilt_deg: tilt,
            frequency_mhz: 1800.0,
            tx_power_dbm: 43.0,
            pattern: Arc::new(omni_pattern(2.0)),
        }
    }

    #[test]
    fn los_azimuth_matches_compass_bearings() {
        // antenna at center of a 9x9 flat patch, boresight north
        let patch = flat_patch(9, 9, 10.0);
        let ant = antenna(0.0, 0.0);
        let los = compute_los_angles(&patch, &ant);
        let at = |r: usize, c: usize| los.azimuth_offset_deg[r * 9 + c];
        // due north of the antenna: bearing 0
        assert_abs_diff_eq!(at(0, 4), 0.0, epsilon = 1e-12);
        // due east: bearing 90
        assert_abs_diff_eq!(at(4, 8), 90.0, epsilon = 1e-12);
        // due south: bearing 180
        assert_abs_diff_eq!(at(8, 4), 180.0, epsilon = 1e-12);
        // due west: bearing -90
        assert_abs_diff_eq!(at(4, 0), -90.0, epsilon = 1e-12);
        // northeast diagonal: 45
        assert_abs_diff_eq!(at(0, 8), 45.0, epsilon = 1e-12);
    }

    #[test]
    fn los_azimuth_is_relative_to_boresight() {
        let patch = flat_patch(9, 9, 10.0);
        let ant = antenna(90.0, 0.0); // boresight east
        let los = compute_los_angles(&patch, &ant);
        let at = |r: usize, c: usize| los.azimuth_offset_deg[r * 9 + c];
        assert_abs_diff_eq!(at(4, 8), 0.0, epsilon = 1e-12); // east pixel on boresight
        assert_abs_diff_eq!(at(0, 4), -90.0, epsilon = 1e-12); // north is 90 left
        assert_abs_diff_eq!(at(8, 4), 90.0, epsilon = 1e-12); // south is 90 right
        assert_abs_diff_eq!(at(4, 0), 180.0, epsilon = 1e-12); // west is behind
    }

    #[test]
    fn los_elevation_against_hand_computed_oracle() {
        // 30 m mast on flat ground, pixel 40 m east: the sight line dips
        // atan2(30, 40) = 36.8698976458... degrees below horizontal.
        let patch = flat_patch(9, 9, 10.0);
        let ant = antenna(0.0, 0.0);
        let los = compute_los_angles(&patch, &ant);
        let el = los.elevation_offset_deg[4 * 9 + 8];
        let expected = 30f64.atan2(40.0).to_degrees();
        assert_abs_diff_eq!(el, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 36.86989764584402, epsilon = 1e-12);

        // 4 degrees of downtilt brings the offset 4 degrees toward zero
        let tilted = antenna(0.0, 4.0);
        let los_t = compute_los_angles(&patch, &tilted);
        assert_abs_diff_eq!(
            los_t.elevation_offset_deg[4 * 9 + 8],
            expected - 4.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn tilt_matching_depression_centers_the_offset() {
        // 100 m mast, pixel 100 m away, 45 degrees of downtilt: the pixel
        // sits exactly on boresight.
        let mut patch = flat_patch(9, 9, 25.0);
        patch.center_pixel = (4, 4);
        let mut ant = antenna(90.0, 45.0);
        ant.height_m = 100.0;
        let los = compute_los_angles(&patch, &ant);
        // pixel 4 cells east: 100 m horizontal distance
        assert_abs_diff_eq!(los.elevation_offset_deg[4 * 9 + 8], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(los.azimuth_offset_deg[4 * 9 + 8], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn los_elevation_is_negative_toward_higher_ground() {
        // pixel terrain 80 m with a 30 m mast on 0 m ground, 40 m east:
        // the sight line rises, so the depression offset is negative.
        let mut patch = flat_patch(9, 9, 10.0);
        patch.terrain.set(4, 8, 80.0);
        let ant = antenna(0.0, 0.0);
        let los = compute_los_angles(&patch, &ant);
        let expected = -(50f64.atan2(40.0).to_degrees());
        assert_abs_diff_eq!(
            los.elevation_offset_deg[4 * 9 + 8],
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn azimuth_wrap_at_the_seam() {
        // pixel due east with boresight west: offset wraps to exactly +180
        let patch = flat_patch(9, 9, 10.0);
        let ant = antenna(270.0, 0.0);
        let los = compute_los_angles(&patch, &ant);
        assert_abs_diff_eq!(los.azimuth_offset_deg[4 * 9 + 8], 180.0, epsilon = 1e-12);
    }

    #[test]
    fn antenna_pixel_convention() {
        let patch = flat_patch(8, 8, 10.0);
        let ant = antenna(217.0, 6.0);
        let los = compute_los_angles(&patch, &ant);
        let (cr, cc) = patch.center_pixel;
        assert_eq!((cr, cc), (4, 4));
        assert_eq!(los.azimuth_offset_deg[cr * 8 + cc], 0.0);
        assert_eq!(los.elevation_offset_deg[cr * 8 + cc], -90.0);
    }

    #[test]
    fn tensor_channels_scale_as_documented() {
        let mut patch = flat_patch(8, 8, 10.0);
        patch.clutter.set(2, 3, 7.0);
        patch.building.set(2, 3, 25.0);
        patch.terrain.set(2, 3, 12.0);
        let patch = normalize_terrain(patch).unwrap();
        let mut ant = antenna(45.0, 2.0);
        ant.pattern = Arc::new(sector_pattern(17.0, 65.0, 7.0, 30.0));
        let t = build_input_tensor(&patch, &ant).unwrap();

        assert_abs_diff_eq!(t.get(0, 2, 3), 7.0 / 21.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.get(1, 2, 3), 25.0 / 100.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.get(2, 2, 3), 12.0 / 100.0, epsilon = 1e-15);
        let los = compute_los_angles(&patch, &ant);
        assert_abs_diff_eq!(
            t.get(3, 2, 3),
            los.azimuth_offset_deg[2 * 8 + 3] / 180.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            t.get(4, 2, 3),
            los.elevation_offset_deg[2 * 8 + 3] / 90.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(t.get(5, 0, 0), 30.0 / 100.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.get(6, 0, 0), 1800.0 / 3000.0, epsilon = 1e-15);
        let g = pattern_gain(
            &ant.pattern,
            los.azimuth_offset_deg[2 * 8 + 3],
            los.elevation_offset_deg[2 * 8 + 3],
        )
        .unwrap();
        assert_abs_diff_eq!(t.get(7, 2, 3), g / 30.0, epsilon = 1e-15);
    }

    #[test]
    fn scale_overflow_is_detected() {
        let patch = flat_patch(8, 8, 10.0);
        let mut ant = antenna(0.0, 0.0);
        ant.frequency_mhz = 40000.0; // 40 GHz: scaled value 13.3 > 10
        match build_input_tensor(&patch, &ant) {
            Err(TensorError::ScaleOverflow { channel, .. }) => assert_eq!(channel, 6),
            other => panic!("expected ScaleOverflow, got {other:?}"),
        }
    }

    #[test]
    fn identity_augment_is_identity() {
        let patch = flat_patch(8, 8, 10.0);
        let ant = antenna(30.0, 3.0);
        let t = build_input_tensor(&patch, &ant).unwrap();
        let label: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let mask: Vec<bool> = (0..64).map(|i| i % 3 == 0).collect();
        let (t2, l2, m2) = augment(&t, &label, &mask, AugmentTransform::IDENTITY).unwrap();
        assert_eq!(t2, t);
        assert_eq!(l2, label);
        assert_eq!(m2, mask);
    }

    #[test]
    fn all_eight_transforms_are_distinct_and_bijective() {
        // a plane with all-distinct values: transforms must permute it
        let h = 4;
        let w = 4;
        let plane: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let mut seen = Vec::new();
        for t in AugmentTransform::all() {
            let out = transform_plane(&plane, h, w, t);
            let mut sorted = out.clone();
            sorted.sort_by(f64::total_cmp);
            assert_eq!(sorted, plane, "transform must be a permutation");
            assert!(!seen.contains(&out), "transform {t:?} duplicates another");
            seen.push(out);
        }
    }

    #[test]
    fn double_180_and_double_mirror_are_identity() {
        let h = 6;
        let w = 4;
        let plane: Vec<f64> = (0..24).map(|i| (i * 7 % 13) as f64).collect();
        let t180 = AugmentTransform {
            rotation: Rotation::Cw180,
            mirror: false,
        };
        let once = transform_plane(&plane, h, w, t180);
        let twice = transform_plane(&once, h, w, t180);
        assert_eq!(twice, plane);
        let tm = AugmentTransform {
            rotation: Rotation::None,
            mirror: true,
        };
        let m1 = transform_plane(&plane, h, w, tm);
        let m2 = transform_plane(&m1, h, w, tm);
        assert_eq!(m2, plane);
    }

    #[test]
    fn quarter_turn_on_non_square_is_rejected() {
        let t = InputTensor::zeros(6, 4);
        let label = vec![0.0; 24];
        let mask = vec![true; 24];
        let res = augment(
            &t,
            &label,
            &mask,
            AugmentTransform {
                rotation: Rotation::Cw90,
                mirror: false,
            },
        );
        assert!(matches!(res, Err(TensorError::NonSquare { .. })));
    }

    #[test]
    fn mirror_negates_azimuth_channel_only() {
        let patch = flat_patch(8, 8, 10.0);
        let ant = antenna(0.0, 0.0);
        let t = build_input_tensor(&patch, &ant).unwrap();
        let label = vec![0.0; 64];
        let mask = vec![true; 64];
        let tm = AugmentTransform {
            rotation: Rotation::None,
            mirror: true,
        };
        let (out, _, _) = augment(&t, &label, &mask, tm).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                let mirrored_col = 7 - c;
                for ch in 0..CHANNELS {
                    let expect = if ch == 3 {
                        -t.get(ch, r, mirrored_col)
                    } else {
                        t.get(ch, r, mirrored_col)
                    };
                    assert_eq!(out.get(ch, r, c), expect, "ch{ch} ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn mirrored_tensor_matches_mirrored_world() {
        // Build a scene, then build its mirror image (flip east-west,
        // azimuth negated). The augmented tensor of the first must equal
        // the directly-built tensor of the second.
        let mut patch = flat_patch(8, 8, 10.0);
        for r in 0..8 {
            for c in 0..8 {
                patch.terrain.set(r, c, (r * 3 + c * 5) as f64 % 17.0);
                patch.building.set(r, c, ((r + 2 * c) % 5) as f64);
                patch.clutter.set(r, c, ((r * c) % 22) as f64);
            }
        }
        let patch = normalize_terrain(patch).unwrap();

        let mut mirrored = patch.clone();
        for r in 0..8 {
            for c in 0..8 {
                mirrored.terrain.set(r, c, patch.terrain.get(r, 7 - c));
                mirrored.building.set(r, c, patch.building.get(r, 7 - c));
                mirrored.clutter.set(r, c, patch.clutter.get(r, 7 - c));
            }
        }
        mirrored.center_pixel = (4, 7 - 4);

        let az = 37.0;
        let ant = antenna(az, 3.0); // omni pattern: symmetric under mirror
        let mirrored_ant = antenna(360.0 - az, 3.0);

        let t = build_input_tensor(&patch, &ant).unwrap();
        let (t_aug, _, _) = augment(
            &t,
            &vec![0.0; 64],
            &vec![true; 64],
            AugmentTransform {
                rotation: Rotation::None,
                mirror: true,
            },
        )
        .unwrap();
        let t_world = build_input_tensor(&mirrored, &mirrored_ant).unwrap();

        for ch in 0..CHANNELS {
            for r in 0..8 {
                for c in 0..8 {
                    // the mirrored center column maps 4 -> 3, so compare there
                    assert_abs_diff_eq!(
                        t_aug.get(ch, r, c),
                        t_world.get(ch, r, c),
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn plt_round_trip_preserves_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let patch = flat_patch(8, 8, 10.0);
        let ant = antenna(123.0, 5.0);
        let t = build_input_tensor(&patch, &ant).unwrap();
        let path = dir.path().join("t.plt");
        write_tensor(&t, &path).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.height(), 8);
        assert_eq!(back.width(), 8);
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn plt_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.plt");
        fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(
            read_tensor(&path),
            Err(TensorError::Format { .. })
        ));
        let t = InputTensor::zeros(8, 8);
        write_tensor(&t, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_tensor(&path),
            Err(TensorError::Format { .. })
        ));
    }
}
