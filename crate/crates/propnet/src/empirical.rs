//! Empirical path-loss baselines: the classical Okumura-Hata urban model
//! and a simplified, calibratable SPM-style linear model with per-clutter
//! offsets. Both can be evaluated per-pixel into a [`PathLossMatrix`].

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::antenna::{AntennaConfig, MobileConfig};
use crate::geodata::GisPatch;
use crate::raysim::PathLossMatrix;

#[derive(Debug, Error)]
pub enum EmpiricalError {
    #[error("{name} = {value} outside validity range [{min}, {max}]")]
    OutOfValidityRange {
        name: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("distance must be > 0 km, got {0}")]
    NonPositiveDistance(f64),
    #[error("clutter code {0} outside [0, 21]")]
    InvalidClutterCode(u8),
    #[error("{samples} samples cannot determine {free_params} free parameters")]
    RankDeficient { samples: usize, free_params: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error: {message}")]
    Parse { path: String, message: String },
}

/// City-size regime selecting the mobile-antenna correction branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CitySize {
    SmallMedium,
    Large,
}

/// Validity-range handling: `Strict` rejects inputs outside the model's
/// published ranges; `Permissive` evaluates anyway (matrix evaluation
/// clamps distances and logs a single warning).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeMode {
    Strict,
    Permissive,
}

/// Inputs to the Okumura-Hata urban model.
#[derive(Debug, Clone, Copy)]
pub struct HataInput {
    pub f_mhz: f64,
    pub h_b_m: f64,
    pub h_m_m: f64,
    pub d_km: f64,
    pub city_size: CitySize,
}

pub const HATA_F_RANGE: (f64, f64) = (150.0, 1500.0);
pub const HATA_HB_RANGE: (f64, f64) = (30.0, 200.0);
pub const HATA_HM_RANGE: (f64, f64) = (1.0, 10.0);
pub const HATA_D_RANGE: (f64, f64) = (1.0, 10.0);

fn check_range(name: &'static str, value: f64, range: (f64, f64)) -> Result<(), EmpiricalError> {
    if value < range.0 || value > range.1 || value.is_nan() {
        return Err(EmpiricalError::OutOfValidityRange {
            name,
            value,
            min: range.0,
            max: range.1,
        });
    }
    Ok(())
}

fn validate_hata(input: &HataInput) -> Result<(), EmpiricalError> {
    check_range("f_mhz", input.f_mhz, HATA_F_RANGE)?;
    check_range("h_b_m", input.h_b_m, HATA_HB_RANGE)?;
    check_range("h_m_m", input.h_m_m, HATA_HM_RANGE)?;
    check_range("d_km", input.d_km, HATA_D_RANGE)
}

/// Mobile-antenna height correction C_H in dB.
///
/// Small/medium cities use one formula for all frequencies; large cities
/// switch between a low-band and a high-band formula at 200 MHz (the
/// boundary itself uses the low-band branch).
pub fn hata_correction(
    f_mhz: f64,
    h_m_m: f64,
    city_size: CitySize,
    mode: RangeMode,
) -> Result<f64, EmpiricalError> {
    if mode == RangeMode::Strict {
        check_range("f_mhz", f_mhz, HATA_F_RANGE)?;
        check_range("h_m_m", h_m_m, HATA_HM_RANGE)?;
    }
    Ok(match city_size {
        CitySize::SmallMedium => (1.1 * f_mhz.log10() - 0.7) * h_m_m - (1.56 * f_mhz.log10() - 0.8),
        CitySize::Large => {
            if f_mhz <= 200.0 {
                8.29 * (1.54 * h_m_m).log10().powi(2) - 1.1
            } else {
                3.2 * (11.75 * h_m_m).log10().powi(2) - 4.97
            }
        }
    })
}

/// Okumura-Hata urban median path loss in dB.
pub fn hata_urban(input: &HataInput, mode: RangeMode) -> Result<f64, EmpiricalError> {
    if mode == RangeMode::Strict {
        validate_hata(input)?;
    }
    if !(input.d_km > 0.0) {
        return Err(EmpiricalError::NonPositiveDistance(input.d_km));
    }
    let c_h = hata_correction(input.f_mhz, input.h_m_m, input.city_size, mode)?;
    Ok(
        69.55 + 26.16 * input.f_mhz.log10() - 13.82 * input.h_b_m.log10() - c_h
            + (44.9 - 6.55 * input.h_b_m.log10()) * input.d_km.log10(),
    )
}

/// Smallest distance used for per-pixel evaluation (kilometers): pixels at
/// or very near the antenna are clamped here rather than rejected.
pub const MIN_MATRIX_DISTANCE_KM: f64 = 0.01;

/// Evaluate the Hata urban model at every pixel of a patch (permissive
/// range handling; distances clamped to [`MIN_MATRIX_DISTANCE_KM`]).
pub fn hata_matrix(
    patch: &GisPatch,
    antenna: &AntennaConfig,
    mobile: &MobileConfig,
    city_size: CitySize,
) -> PathLossMatrix {
    let (h, w) = (patch.height(), patch.width());
    let (cr, cc) = patch.center_pixel;
    let res = patch.resolution_m;
    let mut out = PathLossMatrix::zeros(h, w);
    let mut clamped = false;
    for r in 0..h {
        for c in 0..w {
            let dx = (c as f64 - cc as f64) * res;
            let dy = (cr as f64 - r as f64) * res;
            let mut d_km = dx.hypot(dy) / 1000.0;
            if d_km < MIN_MATRIX_DISTANCE_KM {
                d_km = MIN_MATRIX_DISTANCE_KM;
                clamped = true;
            }
            let input = HataInput {
                f_mhz: antenna.frequency_mhz,
                h_b_m: antenna.height_m,
                h_m_m: mobile.height_m,
                d_km,
                city_size,
            };
            let v = hata_urban(&input, RangeMode::Permissive)
                .expect("permissive evaluation with clamped distance cannot fail");
            out.set(r, c, v);
        }
    }
    if clamped {
        log::debug!("hata_matrix: near-antenna distances clamped to {MIN_MATRIX_DISTANCE_KM} km");
    }
    out
}

/// Coefficients of the simplified SPM-style model:
/// PL = K1 + K2 log10 d + K3 log10 h_B + K4 log10 d log10 h_B + clutter_offset.
#[derive(Debug, Clone, PartialEq)]
pub struct SpmParams {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    /// Additive dB per clutter code, indexed 0..=21.
    pub clutter_offset: [f64; 22],
}

impl Default for SpmParams {
    /// Uncalibrated Hata-flavored defaults with zero clutter offsets.
    fn default() -> Self {
        Self {
            k1: 23.5,
            k2: 44.9,
            k3: -13.82,
            k4: -6.55,
            clutter_offset: [0.0; 22],
        }
    }
}

/// One calibration observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpmMeasurement {
    pub d_km: f64,
    pub h_b_m: f64,
    pub clutter_code: u8,
    pub observed_db: f64,
}

/// Result of [`calibrate_spm`]: fitted parameters plus rank diagnostics.
///
/// The intercept and a complete set of per-code offsets are inherently
/// collinear (their columns sum to the intercept column), so fits are
/// resolved to the minimal-norm solution and flagged when the design
/// matrix is rank deficient.
#[derive(Debug, Clone)]
pub struct SpmFit {
    pub params: SpmParams,
    pub rank: usize,
    pub rank_deficient: bool,
    pub residual_rms_db: f64,
}

pub fn spm_predict(
    params: &SpmParams,
    d_km: f64,
    h_b_m: f64,
    clutter_code: u8,
) -> Result<f64, EmpiricalError> {
    if !(d_km > 0.0) {
        return Err(EmpiricalError::NonPositiveDistance(d_km));
    }
    if clutter_code > 21 {
        return Err(EmpiricalError::InvalidClutterCode(clutter_code));
    }
    let ld = d_km.log10();
    let lh = h_b_m.log10();
    Ok(params.k1
        + params.k2 * ld
        + params.k3 * lh
        + params.k4 * ld * lh
        + params.clutter_offset[clutter_code as usize])
}

/// Least-squares fit of [`SpmParams`] to measurements.
///
/// Free parameters: K1..K4 plus one offset per clutter code present in the
/// data (absent codes keep offset 0). Needs at least as many samples as
/// free parameters; the solution is the minimal-norm least-squares
/// minimizer (singular value decomposition).
pub fn calibrate_spm(measurements: &[SpmMeasurement]) -> Result<SpmFit, EmpiricalError> {
    let mut codes: Vec<u8> = Vec::new();
    for m in measurements {
        if !(m.d_km > 0.0) {
            return Err(EmpiricalError::NonPositiveDistance(m.d_km));
        }
        if m.clutter_code > 21 {
            return Err(EmpiricalError::InvalidClutterCode(m.clutter_code));
        }
        if !codes.contains(&m.clutter_code) {
            codes.push(m.clutter_code);
        }
    }
    codes.sort_unstable();
    let free = 4 + codes.len();
    if measurements.len() < free {
        return Err(EmpiricalError::RankDeficient {
            samples: measurements.len(),
            free_params: free,
        });
    }

    let n = measurements.len();
    let mut a = DMatrix::<f64>::zeros(n, free);
    let mut b = DVector::<f64>::zeros(n);
    for (i, m) in measurements.iter().enumerate() {
        let ld = m.d_km.log10();
        let lh = m.h_b_m.log10();
        a[(i, 0)] = 1.0;
        a[(i, 1)] = ld;
        a[(i, 2)] = lh;
        a[(i, 3)] = ld * lh;
        let j = codes.binary_search(&m.clutter_code).unwrap();
        a[(i, 4 + j)] = 1.0;
        b[i] = m.observed_db;
    }

    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = max_sv * (n.max(free) as f64) * f64::EPSILON;
    let rank = svd.rank(eps);
    let x = svd
        .solve(&b, eps)
        .expect("SVD solve with computed factors cannot fail");

    let residual = &a * &x - &b;
    let residual_rms_db = (residual.norm_squared() / n as f64).sqrt();

    let mut params = SpmParams {
        k1: x[0],
        k2: x[1],
        k3: x[2],
        k4: x[3],
        clutter_offset: [0.0; 22],
    };
    for (j, &code) in codes.iter().enumerate() {
        params.clutter_offset[code as usize] = x[4 + j];
    }
    Ok(SpmFit {
        params,
        rank,
        rank_deficient: rank < free,
        residual_rms_db,
    })
}

/// Evaluate the SPM model at every pixel (distances clamped like
/// [`hata_matrix`], clutter code read from the patch).
pub fn spm_matrix(patch: &GisPatch, antenna: &AntennaConfig, params: &SpmParams) -> PathLossMatrix {
    let (h, w) = (patch.height(), patch.width());
    let (cr, cc) = patch.center_pixel;
    let res = patch.resolution_m;
    let mut out = PathLossMatrix::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let dx = (c as f64 - cc as f64) * res;
            let dy = (cr as f64 - r as f64) * res;
            let d_km = (dx.hypot(dy) / 1000.0).max(MIN_MATRIX_DISTANCE_KM);
            let v = spm_predict(params, d_km, antenna.height_m, patch.clutter_code(r, c))
                .expect("clamped distance and validated code cannot fail");
            out.set(r, c, v);
        }
    }
    out
}

/// Load calibration measurements from a CSV file with header
/// `d_km,h_b_m,clutter,observed_db`.
pub fn load_measurements(path: &Path) -> Result<Vec<SpmMeasurement>, EmpiricalError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| EmpiricalError::Io {
        path: display.clone(),
        source,
    })?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header.trim() != "d_km,h_b_m,clutter,observed_db" {
        return Err(EmpiricalError::Parse {
            path: display,
            message: format!("unexpected header `{header}`"),
        });
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(EmpiricalError::Parse {
                path: display,
                message: format!("line {}: expected 4 fields", lineno + 2),
            });
        }
        let parse = |s: &str| -> Result<f64, EmpiricalError> {
            s.parse::<f64>().map_err(|_| EmpiricalError::Parse {
                path: display.clone(),
                message: format!("line {}: `{s}` is not a number", lineno + 2),
            })
        };
        out.push(SpmMeasurement {
            d_km: parse(fields[0])?,
            h_b_m: parse(fields[1])?,
            clutter_code: parse(fields[2])? as u8,
            observed_db: parse(fields[3])?,
        });
    }
    Ok(out)
}

/// Write measurements in the CSV format read by [`load_measurements`].
pub fn save_measurements(
    measurements: &[SpmMeasurement],
    path: &Path,
) -> Result<(), EmpiricalError> {
    let mut text = String::from("d_km,h_b_m,clutter,observed_db\n");
    for m in measurements {
        text.push_str(&format!(
            "{},{},{},{}\n",
            m.d_km, m.h_b_m, m.clutter_code, m.observed_db
        ));
    }
    fs::write(path, text).map_err(|source| EmpiricalError::Io {
        path: path.display().to_string(),
        source,
    })
}
