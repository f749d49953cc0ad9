//! Antenna configuration and directional radiation patterns.
//!
//! Patterns are stored as two principal-plane cuts (horizontal 1° steps,
//! vertical 1° steps over [-90, 90]) in dB relative to the peak; the
//! absolute peak gain lives in `peak_gain_dbi`. Gain lookups bilinearly
//! combine the two cuts.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AntennaError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: missing {cut} cut")]
    MissingCut { path: String, cut: String },
    #[error("elevation offset {0} outside [-90, 90]")]
    AngleOutOfRange(f64),
    #[error("invalid pattern: {0}")]
    InvalidPattern(String),
    #[error("invalid antenna config: {0}")]
    InvalidConfig(String),
}

/// Wrap an angle in degrees into (-180, 180].
pub fn wrap_angle(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Directional gain pattern: one horizontal and one vertical cut.
///
/// Both cuts are relative to the peak (values <= 0, per-cut maximum 0);
/// `horizontal_cut[i]` is the gain at azimuth offset i degrees clockwise
/// from boresight, `vertical_cut[j]` at elevation offset `j - 90` degrees
/// (index 0 = straight down, 90 = boresight, 180 = straight up).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiationPattern {
    pub horizontal_cut: Vec<f64>,
    pub vertical_cut: Vec<f64>,
    pub peak_gain_dbi: f64,
}

pub const HORIZONTAL_SAMPLES: usize = 360;
pub const VERTICAL_SAMPLES: usize = 181;

impl RadiationPattern {
    pub fn new(
        horizontal_cut: Vec<f64>,
        vertical_cut: Vec<f64>,
        peak_gain_dbi: f64,
    ) -> Result<Self, AntennaError> {
        if horizontal_cut.len() != HORIZONTAL_SAMPLES {
            return Err(AntennaError::InvalidPattern(format!(
                "horizontal cut needs {HORIZONTAL_SAMPLES} samples, got {}",
                horizontal_cut.len()
            )));
        }
        if vertical_cut.len() != VERTICAL_SAMPLES {
            return Err(AntennaError::InvalidPattern(format!(
                "vertical cut needs {VERTICAL_SAMPLES} samples, got {}",
                vertical_cut.len()
            )));
        }
        for (name, cut) in [("horizontal", &horizontal_cut), ("vertical", &vertical_cut)] {
            let mut max = f64::NEG_INFINITY;
            for &v in cut.iter() {
                if !v.is_finite() || v > 1e-9 {
                    return Err(AntennaError::InvalidPattern(format!(
                        "{name} cut value {v} must be a finite dB value <= 0"
                    )));
                }
                max = max.max(v);
            }
            if max < -1e-9 {
                return Err(AntennaError::InvalidPattern(format!(
                    "{name} cut maximum {max} must be 0 (pattern not normalized)"
                )));
            }
        }
        if !peak_gain_dbi.is_finite() {
            return Err(AntennaError::InvalidPattern(format!(
                "peak gain {peak_gain_dbi} is not finite"
            )));
        }
        Ok(Self {
            horizontal_cut,
            vertical_cut,
            peak_gain_dbi,
        })
    }
}

/// Isotropic pattern: 0 dB everywhere relative to the peak.
pub fn omni_pattern(peak_gain_dbi: f64) -> RadiationPattern {
    RadiationPattern::new(
        vec![0.0; HORIZONTAL_SAMPLES],
        vec![0.0; VERTICAL_SAMPLES],
        peak_gain_dbi,
    )
    .expect("omni pattern is always valid")
}

/// Parabolic sector pattern: attenuation 12 * (angle / beamwidth)^2 dB,
/// limited by the front-to-back ratio. Boresight gain is 0 in both cuts.
pub fn sector_pattern(
    peak_gain_dbi: f64,
    h_beamwidth_deg: f64,
    v_beamwidth_deg: f64,
    front_to_back_db: f64,
) -> RadiationPattern {
    let shape = |offset: f64, bw: f64| -> f64 {
        let a = 12.0 * (offset / bw).powi(2);
        -a.min(front_to_back_db)
    };
    let horizontal: Vec<f64> = (0..HORIZONTAL_SAMPLES)
        .map(|i| shape(wrap_angle(i as f64), h_beamwidth_deg))
        .collect();
    let vertical: Vec<f64> = (0..VERTICAL_SAMPLES)
        .map(|i| shape(i as f64 - 90.0, v_beamwidth_deg))
        .collect();
    RadiationPattern::new(horizontal, vertical, peak_gain_dbi)
        .expect("sector pattern is always valid")
}

/// A small assortment of realistic patterns for synthetic scenes.
pub fn standard_pattern_set() -> Vec<Arc<RadiationPattern>> {
    vec![
        Arc::new(omni_pattern(2.15)),
        Arc::new(sector_pattern(17.0, 65.0, 7.0, 30.0)),
        Arc::new(sector_pattern(15.0, 90.0, 9.0, 25.0)),
        Arc::new(sector_pattern(18.5, 33.0, 6.0, 35.0)),
    ]
}

/// Gain toward a direction given as offsets from boresight.
///
/// Azimuth wraps circularly and interpolates linearly between 1° samples;
/// elevation must lie within [-90, 90] and interpolates linearly with
/// clamped ends. Result in dBi: peak + horizontal cut + vertical cut.
pub fn pattern_gain(
    pattern: &RadiationPattern,
    az_offset_deg: f64,
    el_offset_deg: f64,
) -> Result<f64, AntennaError> {
    if !(-90.0..=90.0).contains(&el_offset_deg) || el_offset_deg.is_nan() {
        return Err(AntennaError::AngleOutOfRange(el_offset_deg));
    }
    let az = wrap_angle(az_offset_deg).rem_euclid(360.0); // [0, 360)
    let ia = az.floor() as usize % HORIZONTAL_SAMPLES;
    let fa = az - az.floor();
    let ib = (ia + 1) % HORIZONTAL_SAMPLES;
    let h = pattern.horizontal_cut[ia] * (1.0 - fa) + pattern.horizontal_cut[ib] * fa;

    let ev = el_offset_deg + 90.0; // [0, 180]
    let iv = (ev.floor() as usize).min(VERTICAL_SAMPLES - 2);
    let fv = ev - iv as f64;
    let v = pattern.vertical_cut[iv] * (1.0 - fv) + pattern.vertical_cut[iv + 1] * fv;

    Ok(pattern.peak_gain_dbi + h + v)
}

/// Parse an antenna pattern text file.
///
/// Format: `GAIN <dBi>`, then `HORIZONTAL 360` with 360 `<deg> <dB>` lines
/// (deg 0..359), then `VERTICAL 181` with 181 lines (deg -90..90). Cuts are
/// renormalized so each cut's maximum is 0; the removed offsets are folded
/// into the peak gain.
pub fn load_pattern(path: &Path) -> Result<RadiationPattern, AntennaError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| AntennaError::Io {
        path: display.clone(),
        source,
    })?;
    parse_pattern(&text, &display)
}

fn parse_pattern(text: &str, path: &str) -> Result<RadiationPattern, AntennaError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let parse_err = |message: String| AntennaError::Parse {
        path: path.to_string(),
        message,
    };

    let gain_line = lines
        .next()
        .ok_or_else(|| parse_err("empty pattern file".into()))?;
    let mut parts = gain_line.split_whitespace();
    if !parts.next().unwrap_or("").eq_ignore_ascii_case("GAIN") {
        return Err(parse_err(format!(
            "expected `GAIN <dBi>`, found `{gain_line}`"
        )));
    }
    let mut peak: f64 = parts
        .next()
        .ok_or_else(|| parse_err("GAIN line has no value".into()))?
        .parse()
        .map_err(|_| parse_err("GAIN value is not a number".into()))?;

    let read_cut = |lines: &mut dyn Iterator<Item = &str>,
                    keyword: &str,
                    count: usize,
                    deg_offset: i32|
     -> Result<Vec<f64>, AntennaError> {
        let header = lines.next().ok_or_else(|| AntennaError::MissingCut {
            path: path.to_string(),
            cut: keyword.to_lowercase(),
        })?;
        let mut parts = header.split_whitespace();
        if !parts.next().unwrap_or("").eq_ignore_ascii_case(keyword) {
            return Err(AntennaError::MissingCut {
                path: path.to_string(),
                cut: keyword.to_lowercase(),
            });
        }
        let declared: usize = parts
            .next()
            .ok_or_else(|| parse_err(format!("{keyword} header has no sample count")))?
            .parse()
            .map_err(|_| parse_err(format!("{keyword} sample count is not an integer")))?;
        if declared != count {
            return Err(parse_err(format!(
                "{keyword} cut must declare {count} samples, found {declared}"
            )));
        }
        let mut values = vec![None; count];
        for _ in 0..count {
            let line = lines.next().ok_or_else(|| AntennaError::MissingCut {
                path: path.to_string(),
                cut: keyword.to_lowercase(),
            })?;
            let mut p = line.split_whitespace();
            let deg: i32 = p
                .next()
                .ok_or_else(|| parse_err(format!("empty {keyword} sample line")))?
                .parse()
                .map_err(|_| parse_err(format!("bad angle in {keyword} line `{line}`")))?;
            let db: f64 = p
                .next()
                .ok_or_else(|| parse_err(format!("{keyword} line `{line}` has no value")))?
                .parse()
                .map_err(|_| parse_err(format!("bad value in {keyword} line `{line}`")))?;
            let idx = deg + deg_offset;
            if idx < 0 || idx as usize >= count {
                return Err(parse_err(format!("{keyword} angle {deg} out of range")));
            }
            if values[idx as usize].replace(db).is_some() {
                return Err(parse_err(format!("duplicate {keyword} angle {deg}")));
            }
        }
        Ok(values.into_iter().map(Option::unwrap).collect())
    };

    let mut horizontal = read_cut(&mut lines, "HORIZONTAL", HORIZONTAL_SAMPLES, 0)?;
    let mut vertical = read_cut(&mut lines, "VERTICAL", VERTICAL_SAMPLES, 90)?;

    // Renormalize each cut to max 0; fold the removed offset into the peak.
    let hmax = horizontal.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let vmax = vertical.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !hmax.is_finite() || !vmax.is_finite() {
        return Err(parse_err("pattern cut contains non-finite values".into()));
    }
    for v in &mut horizontal {
        *v -= hmax;
    }
    for v in &mut vertical {
        *v -= vmax;
    }
    peak += hmax + vmax;

    RadiationPattern::new(horizontal, vertical, peak)
}

/// Transmitter site: position, mount, pointing, carrier and pattern.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AntennaConfig {
    pub easting_m: f64,
    pub northing_m: f64,
    /// Mount height above ground, meters.
    pub height_m: f64,
    /// Boresight bearing, degrees clockwise from north, [0, 360).
    pub azimuth_deg: f64,
    /// Mechanical downtilt, degrees below horizontal, [-90, 90].
    pub tilt_deg: f64,
    pub frequency_mhz: f64,
    pub tx_power_dbm: f64,
    pub pattern: Arc<RadiationPattern>,
}

impl AntennaConfig {
    pub fn validate(&self) -> Result<(), AntennaError> {
        if !(self.height_m > 0.0) {
            return Err(AntennaError::InvalidConfig(format!(
                "height_m must be > 0, got {}",
                self.height_m
            )));
        }
        if !(self.frequency_mhz > 0.0) {
            return Err(AntennaError::InvalidConfig(format!(
                "frequency_mhz must be > 0, got {}",
                self.frequency_mhz
            )));
        }
        if !(0.0..360.0).contains(&self.azimuth_deg) {
            return Err(AntennaError::InvalidConfig(format!(
                "azimuth_deg must lie in [0, 360), got {}",
                self.azimuth_deg
            )));
        }
        if !(-90.0..=90.0).contains(&self.tilt_deg) {
            return Err(AntennaError::InvalidConfig(format!(
                "tilt_deg must lie in [-90, 90], got {}",
                self.tilt_deg
            )));
        }
        Ok(())
    }
}

/// Receiver-side parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MobileConfig {
    /// Receiver height above ground, meters.
    pub height_m: f64,
}

impl Default for MobileConfig {
    fn default() -> Self {
        Self { height_m: 1.5 }
    }
}

impl MobileConfig {
    pub fn validate(&self) -> Result<(), AntennaError> {
        if !(self.height_m > 0.0) {
            return Err(AntennaError::InvalidConfig(format!(
                "mobile height_m must be > 0, got {}",
                self.height_m
            )));
        }
        Ok(())
    }
}
