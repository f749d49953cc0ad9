//! Dataset synthesis, training, evaluation, fine-tuning and filter export.
//!
//! A [`Dataset`] is a list of (input tensor, masked label matrix, metadata)
//! samples tagged with a [`Split`]. Datasets are synthesized from GIS maps
//! by placing virtual antennas with a minimum-separation constraint and
//! labeling each patch with the deterministic ray simulator, then saved as
//! a JSON manifest plus one tensor and one matrix file per sample.
//!
//! [`train`] runs a seeded mini-batch Adam loop with masked loss and
//! optional dihedral augmentation; [`finetune`] continues from existing
//! weights at a reduced learning rate. [`evaluate_rmse`] pools squared
//! errors over every valid pixel of every sample, so each pixel — not each
//! sample — carries equal weight.

use std::borrow::Cow;
use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::antenna::{standard_pattern_set, AntennaConfig, AntennaError, MobileConfig};
use crate::empirical::{
    hata_matrix, spm_matrix, CitySize, EmpiricalError, SpmMeasurement, SpmParams,
    MIN_MATRIX_DISTANCE_KM,
};
use crate::geodata::{extract_patch, GeodataError, GisMap, GisPatch, RasterGrid};
use crate::net::{
    adam_step, load_weights, masked_loss, save_weights, AdamConfig, AdamState, ArchSpec,
    FeatureMap, LossKind, ModelGradients, ModelWeights, NetError, RmseAccumulator, Scalar,
};
use crate::raysim::{
    read_matrix, road_mask, simulate, write_matrix, ClutterLossTable, PathLossMatrix, RaysimError,
};
use crate::tensor::{
    augment, build_input_tensor, read_tensor, write_tensor, AugmentTransform, InputTensor,
    TensorError,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("could not place antenna {placed} of {requested} on map `{map}` with {separation_m} m separation after {tries} tries")]
    PlacementExhausted {
        map: String,
        placed: usize,
        requested: usize,
        separation_m: f64,
        tries: usize,
    },
    #[error("split `{0}` is empty")]
    EmptySplit(Split),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset invariant violated: {0}")]
    InvalidDataset(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest error on {path}: {source}")]
    Manifest {
        path: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Geodata(#[from] GeodataError),
    #[error(transparent)]
    Antenna(#[from] AntennaError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Raysim(#[from] RaysimError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Empirical(#[from] EmpiricalError),
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Role of a sample within a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Calibrate,
    Holdout,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Test, Split::Calibrate, Split::Holdout];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Calibrate => "calibrate",
            Split::Holdout => "holdout",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "calibrate" => Ok(Split::Calibrate),
            "holdout" => Ok(Split::Holdout),
            other => Err(format!(
                "unknown split `{other}` (expected train|test|calibrate|holdout)"
            )),
        }
    }
}

/// Per-sample metadata carried alongside the tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    /// Identifier of the source map; splits are compared map-wise.
    pub map: String,
    pub split: Split,
    /// Seed that drove this sample's validity mask.
    pub seed: u64,
    pub antenna: AntennaConfig,
}

/// One training example: scaled input channels, masked label, provenance.
#[derive(Debug, Clone)]
pub struct PathLossSample {
    pub input: InputTensor,
    pub label: PathLossMatrix,
    pub meta: SampleMeta,
}

/// An in-memory dataset with its geometric context.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub resolution_m: f64,
    /// Patch edge length in pixels (samples are square).
    pub patch: usize,
    pub samples: Vec<PathLossSample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&PathLossSample> {
        self.samples
            .iter()
            .filter(|s| s.meta.split == split)
            .collect()
    }

    /// Append another dataset's samples; both must share geometry, and the
    /// combined dataset must still satisfy [`Dataset::validate`].
    pub fn merge(mut self, other: Dataset) -> Result<Dataset, HarnessError> {
        if (self.resolution_m - other.resolution_m).abs() > 1e-9 || self.patch != other.patch {
            return Err(HarnessError::InvalidDataset(format!(
                "cannot merge {}px @ {} m with {}px @ {} m",
                self.patch, self.resolution_m, other.patch, other.resolution_m
            )));
        }
        self.samples.extend(other.samples);
        self.validate()?;
        Ok(self)
    }

    /// Check the structural invariants:
    /// * within one (map, split) group, antenna positions are pairwise
    ///   separated by at least the patch width in meters;
    /// * the train and test splits never share a map.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let separation = self.patch as f64 * self.resolution_m;
        for (i, a) in self.samples.iter().enumerate() {
            for b in &self.samples[i + 1..] {
                if a.meta.map != b.meta.map || a.meta.split != b.meta.split {
                    continue;
                }
                let d = (a.meta.antenna.easting_m - b.meta.antenna.easting_m)
                    .hypot(a.meta.antenna.northing_m - b.meta.antenna.northing_m);
                if d < separation - 1e-9 {
                    return Err(HarnessError::InvalidDataset(format!(
                        "samples {} and {} on map `{}` ({}) are {d:.1} m apart, need {separation} m",
                        a.meta.id,
                        b.meta.id,
                        a.meta.map,
                        a.meta.split
                    )));
                }
            }
        }
        let maps_of = |split: Split| -> BTreeSet<&str> {
            self.samples
                .iter()
                .filter(|s| s.meta.split == split)
                .map(|s| s.meta.map.as_str())
                .collect()
        };
        let shared: Vec<&str> = maps_of(Split::Train)
            .intersection(&maps_of(Split::Test))
            .copied()
            .collect();
        if !shared.is_empty() {
            return Err(HarnessError::InvalidDataset(format!(
                "train and test splits share maps: {}",
                shared.join(", ")
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    map: String,
    split: Split,
    seed: u64,
    tensor: String,
    label: String,
    antenna: AntennaConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    resolution_m: f64,
    patch: usize,
    samples: Vec<ManifestEntry>,
}

const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

/// Write a dataset directory: `manifest.json` plus `samples/<id>.plt` and
/// `samples/<id>.plm` per sample.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<(), HarnessError> {
    dataset.validate()?;
    let samples_dir = dir.join("samples");
    fs::create_dir_all(&samples_dir).map_err(|e| io_err(&samples_dir, e))?;
    let mut entries = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        let tensor_rel = format!("samples/{}.plt", s.meta.id);
        let label_rel = format!("samples/{}.plm", s.meta.id);
        write_tensor(&s.input, &dir.join(&tensor_rel))?;
        write_matrix(&s.label, &dir.join(&label_rel))?;
        entries.push(ManifestEntry {
            id: s.meta.id.clone(),
            map: s.meta.map.clone(),
            split: s.meta.split,
            seed: s.meta.seed,
            tensor: tensor_rel,
            label: label_rel,
            antenna: s.meta.antenna.clone(),
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        resolution_m: dataset.resolution_m,
        patch: dataset.patch,
        samples: entries,
    };
    let path = dir.join(MANIFEST_NAME);
    let json =
        serde_json::to_string_pretty(&manifest).map_err(|source| HarnessError::Manifest {
            path: path.display().to_string(),
            source,
        })?;
    fs::write(&path, json + "\n").map_err(|e| io_err(&path, e))
}

/// Load a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset, HarnessError> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|source| HarnessError::Manifest {
            path: path.display().to_string(),
            source,
        })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(HarnessError::InvalidDataset(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in manifest.samples {
        let input = read_tensor(&dir.join(&entry.tensor))?;
        let label = read_matrix(&dir.join(&entry.label))?;
        if (label.height(), label.width()) != (input.height(), input.width()) {
            return Err(HarnessError::InvalidDataset(format!(
                "sample {}: label is {}x{}, tensor is {}x{}",
                entry.id,
                label.height(),
                label.width(),
                input.height(),
                input.width()
            )));
        }
        samples.push(PathLossSample {
            input,
            label,
            meta: SampleMeta {
                id: entry.id,
                map: entry.map,
                split: entry.split,
                seed: entry.seed,
                antenna: entry.antenna,
            },
        });
    }
    let dataset = Dataset {
        resolution_m: manifest.resolution_m,
        patch: manifest.patch,
        samples,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Load every map subdirectory of `dir` (sorted by name) as a
/// `(name, GisMap)` pair. A map subdirectory is one containing
/// `clutter.asc`.
pub fn load_maps_dir(dir: &Path) -> Result<Vec<(String, GisMap)>, HarnessError> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let path = entry.path();
        if path.is_dir() && path.join("clutter.asc").is_file() {
            names.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(HarnessError::Config(format!(
            "no map subdirectories (containing clutter.asc) found in {}",
            dir.display()
        )));
    }
    names
        .into_iter()
        .map(|(name, path)| Ok((name, GisMap::load(&path)?)))
        .collect()
}

// ---------------------------------------------------------------------------
// Synthetic demo maps
// ---------------------------------------------------------------------------

/// Procedurally generate a GIS map: smooth wave-sum terrain, Voronoi
/// clutter regions, and street-grid building blocks inside built-up
/// clutter. Deterministic per seed.
pub fn demo_map(seed: u64, size: usize, resolution_m: f64) -> GisMap {
    assert!(size >= 64, "demo map needs at least 64 pixels per side");
    let mut rng = Pcg64::seed_from_u64(seed);
    let n = size * size;
    let extent_m = size as f64 * resolution_m;

    // Terrain: a sum of random plane waves gives smooth rolling hills.
    struct Wave {
        amp: f64,
        kx: f64,
        ky: f64,
        phase: f64,
    }
    let waves: Vec<Wave> = (0..6)
        .map(|_| {
            let amp = rng.random_range(2.0..10.0);
            let wavelength = rng.random_range(250.0..1200.0);
            let dir = rng.random_range(0.0..std::f64::consts::TAU);
            let k = std::f64::consts::TAU / wavelength;
            Wave {
                amp,
                kx: k * dir.cos(),
                ky: k * dir.sin(),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            }
        })
        .collect();

    // Clutter: nearest-site Voronoi regions over a palette dominated by
    // fields/suburban/forest with urban cores and a little water.
    let palette: [u8; 14] = [3, 3, 3, 4, 4, 4, 5, 5, 6, 6, 7, 2, 1, 3];
    let sites: Vec<(f64, f64, u8)> = palette
        .iter()
        .map(|&code| {
            (
                rng.random_range(0.0..size as f64),
                rng.random_range(0.0..size as f64),
                code,
            )
        })
        .collect();

    // Buildings: per-block height factors, carved by a street grid.
    const BLOCK: usize = 6;
    let blocks = size.div_ceil(BLOCK);
    let block_u: Vec<f64> = (0..blocks * blocks)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();

    let mut terrain = vec![0.0f64; n];
    let mut clutter = vec![0.0f64; n];
    let mut building = vec![0.0f64; n];
    for r in 0..size {
        for c in 0..size {
            let i = r * size + c;
            let (x, y) = (c as f64 * resolution_m, r as f64 * resolution_m);
            terrain[i] = waves
                .iter()
                .map(|w| w.amp * (w.kx * x + w.ky * y + w.phase).cos())
                .sum();
            let code = sites
                .iter()
                .map(|&(sr, sc, code)| {
                    let d2 = (r as f64 - sr).powi(2) + (c as f64 - sc).powi(2);
                    (d2, code)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, code)| code)
                .unwrap();
            clutter[i] = code as f64;
            let on_street = r % BLOCK == 0 || c % BLOCK == 0;
            if !on_street {
                let u = block_u[(r / BLOCK) * blocks + c / BLOCK];
                building[i] = match code {
                    4 => 4.0 + 8.0 * u,
                    6 => 10.0 + 20.0 * u,
                    7 => 20.0 + 35.0 * u,
                    _ => 0.0,
                };
            }
        }
    }
    let min_t = terrain.iter().copied().fold(f64::INFINITY, f64::min);
    for v in &mut terrain {
        *v = *v - min_t + 1.0;
    }

    let origin = (0.0, extent_m);
    let grid = |values: Vec<f64>| {
        RasterGrid::new(size, size, resolution_m, origin, -9999.0, values)
            .expect("demo map layers have consistent dimensions")
    };
    GisMap::new(grid(clutter), grid(building), grid(terrain))
        .expect("demo map layers are co-registered by construction")
}

// ---------------------------------------------------------------------------
// Dataset synthesis
// ---------------------------------------------------------------------------

/// Randomization ranges and bookkeeping for [`synth_dataset`]. The ranges
/// are synthetic defaults chosen to exercise the models, not calibrated
/// survey statistics.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_samples: usize,
    /// Patch edge length in pixels; also fixes the antenna separation
    /// (one patch width in meters).
    pub patch: usize,
    pub seed: u64,
    /// `true` labels only a sparse road network (drive-test style masks);
    /// `false` keeps every pixel valid.
    pub field_mode: bool,
    /// Target fraction of pixels kept by road masks in field mode.
    pub coverage: f64,
    /// Split tag stamped on every generated sample.
    pub split: Split,
    pub height_range_m: (f64, f64),
    pub tilt_range_deg: (f64, f64),
    pub frequencies_mhz: Vec<f64>,
    pub tx_power_dbm: f64,
    pub mobile: MobileConfig,
    pub clutter_table: ClutterLossTable,
    /// Radiation patterns to draw from.
    pub patterns: Vec<std::sync::Arc<crate::antenna::RadiationPattern>>,
    /// Placement attempts per antenna before giving up.
    pub max_tries: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 8,
            patch: 64,
            seed: 0,
            field_mode: false,
            coverage: 0.075,
            split: Split::Train,
            height_range_m: (20.0, 60.0),
            tilt_range_deg: (0.0, 12.0),
            frequencies_mhz: vec![900.0, 1800.0, 2600.0],
            tx_power_dbm: 43.0,
            mobile: MobileConfig::default(),
            clutter_table: ClutterLossTable::default_synthetic(),
            patterns: standard_pattern_set(),
            max_tries: 2000,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), HarnessError> {
        if self.patch < 8 {
            return Err(HarnessError::Config(format!(
                "patch must be at least 8 pixels, got {}",
                self.patch
            )));
        }
        if self.frequencies_mhz.is_empty() {
            return Err(HarnessError::Config(
                "frequencies_mhz must not be empty".into(),
            ));
        }
        if self.field_mode && !(0.01..=0.5).contains(&self.coverage) {
            return Err(HarnessError::Config(format!(
                "coverage {} outside [0.01, 0.5]",
                self.coverage
            )));
        }
        let (h0, h1) = self.height_range_m;
        if !(h0 > 0.0 && h1 >= h0) {
            return Err(HarnessError::Config(format!(
                "height range ({h0}, {h1}) must be positive and ordered"
            )));
        }
        if self.patterns.is_empty() {
            return Err(HarnessError::Config("patterns must not be empty".into()));
        }
        Ok(())
    }
}

/// Generate `cfg.n_samples` labeled samples by installing virtual antennas
/// on the given maps (named for split bookkeeping), spread as evenly as
/// possible across maps.
///
/// Placement is seeded rejection sampling on pixel centers: a candidate is
/// accepted when it keeps at least one patch width (in meters) from every
/// antenna already placed on the same map and the patch fits inside the
/// map. Antenna height, azimuth, tilt, frequency and radiation pattern are
/// drawn uniformly from the configured ranges; labels come from the ray
/// simulator, masked by a synthetic road network in field mode.
pub fn synth_dataset(
    maps: &[(String, GisMap)],
    cfg: &SynthConfig,
) -> Result<Dataset, HarnessError> {
    cfg.validate()?;
    if maps.is_empty() && cfg.n_samples > 0 {
        return Err(HarnessError::Config("no maps given".into()));
    }
    let mut rng = Pcg64::seed_from_u64(cfg.seed);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut resolution_m = 1.0;

    for (map_index, (map_name, map)) in maps.iter().enumerate() {
        let share =
            cfg.n_samples / maps.len() + usize::from(map_index < cfg.n_samples % maps.len());
        if share == 0 {
            continue;
        }
        let res = map.resolution_m();
        if samples.is_empty() {
            resolution_m = res;
        } else if (res - resolution_m).abs() > 1e-9 * resolution_m {
            return Err(HarnessError::Config(format!(
                "map `{map_name}` resolution {res} m differs from {resolution_m} m"
            )));
        }
        let separation_m = cfg.patch as f64 * res;
        let half = cfg.patch / 2;
        let (h, w) = (map.height(), map.width());
        if h < cfg.patch || w < cfg.patch {
            return Err(HarnessError::Config(format!(
                "map `{map_name}` is {w}x{h}, smaller than the {0}x{0} patch",
                cfg.patch
            )));
        }
        // Valid center pixels keep the whole patch inside the map.
        let (row_hi, col_hi) = (h - half, w - half);
        let mut placed: Vec<(f64, f64)> = Vec::with_capacity(share);

        for k in 0..share {
            let mut accepted = None;
            for _ in 0..cfg.max_tries {
                let row = rng.random_range(half..row_hi);
                let col = rng.random_range(half..col_hi);
                let (e, n) = map.clutter.pixel_center(row, col);
                if placed
                    .iter()
                    .all(|&(pe, pn)| (e - pe).hypot(n - pn) >= separation_m)
                {
                    accepted = Some((e, n));
                    break;
                }
            }
            let Some((easting, northing)) = accepted else {
                return Err(HarnessError::PlacementExhausted {
                    map: map_name.clone(),
                    placed: k,
                    requested: share,
                    separation_m,
                    tries: cfg.max_tries,
                });
            };
            placed.push((easting, northing));

            let height_m = rng.random_range(cfg.height_range_m.0..=cfg.height_range_m.1);
            let azimuth_deg = rng.random_range(0.0..360.0);
            let tilt_deg = rng.random_range(cfg.tilt_range_deg.0..=cfg.tilt_range_deg.1);
            let frequency_mhz = cfg.frequencies_mhz[rng.random_range(0..cfg.frequencies_mhz.len())];
            let pattern = cfg.patterns[rng.random_range(0..cfg.patterns.len())].clone();
            let mask_seed: u64 = rng.random_range(0..u64::MAX);

            let antenna = AntennaConfig {
                easting_m: easting,
                northing_m: northing,
                height_m,
                azimuth_deg,
                tilt_deg,
                frequency_mhz,
                tx_power_dbm: cfg.tx_power_dbm,
                pattern,
            };
            antenna.validate()?;

            let patch = extract_patch(map, (easting, northing), cfg.patch, cfg.patch)?;
            let input = build_input_tensor(&patch, &antenna)?;
            let mut label = simulate(&patch, &antenna, &cfg.mobile, &cfg.clutter_table);
            if cfg.field_mode {
                let mask = road_mask(cfg.patch, cfg.patch, mask_seed, cfg.coverage);
                label.apply_mask(&mask)?;
            }
            samples.push(PathLossSample {
                input,
                label,
                meta: SampleMeta {
                    id: format!("s{:06}", samples.len()),
                    map: map_name.clone(),
                    split: cfg.split,
                    seed: mask_seed,
                    antenna,
                },
            });
        }
    }

    let dataset = Dataset {
        resolution_m,
        patch: cfg.patch,
        samples,
    };
    dataset.validate()?;
    Ok(dataset)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Hyperparameters for [`train`].
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub arch: ArchSpec,
    pub loss: LossKind,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Sample one of the eight dihedral transforms per sample per epoch.
    pub augment: bool,
    pub seed: u64,
    /// Save intermediate weights every this many epochs (0 = never).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop early once the evaluation RMSE drops to this value.
    pub target_rmse_db: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: ArchSpec::default(),
            loss: LossKind::Mse,
            adam: AdamConfig::default(),
            epochs: 80,
            batch_size: 8,
            augment: true,
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
            target_rmse_db: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), HarnessError> {
        if self.epochs < 1 {
            return Err(HarnessError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(HarnessError::Config("batch_size must be >= 1".into()));
        }
        self.arch.validate().map_err(HarnessError::Net)
    }
}

/// One history row; `val_loss` and `rmse_db` are measured on the
/// evaluation split after the epoch's updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub rmse_db: f64,
}

/// Write history rows as `epoch,train_loss,val_loss,rmse_db` CSV.
pub fn write_history(history: &[EpochStats], path: &Path) -> Result<(), HarnessError> {
    let mut out = String::from("epoch,train_loss,val_loss,rmse_db\n");
    for row in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.train_loss, row.val_loss, row.rmse_db
        ));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// A sample prepared for the optimizer loop.
struct FitSample<'a> {
    input: &'a InputTensor,
    label: &'a [f64],
    mask: &'a [bool],
}

/// Collect a split's samples, skipping (with a warning) any whose mask has
/// no valid pixels — field datasets legitimately contain such samples.
fn prepare_split<'a>(dataset: &'a Dataset, split: Split) -> Vec<FitSample<'a>> {
    let mut out = Vec::new();
    for s in &dataset.samples {
        if s.meta.split != split {
            continue;
        }
        if s.label.valid_count() == 0 {
            eprintln!(
                "warning: sample {} has no valid label pixels; skipping",
                s.meta.id
            );
            continue;
        }
        out.push(FitSample {
            input: &s.input,
            label: s.label.values(),
            mask: s.label.mask(),
        });
    }
    out
}

/// Mean masked loss and pooled RMSE of `weights` over prepared samples.
fn evaluate_prepared(
    weights: &ModelWeights<f32>,
    samples: &[FitSample<'_>],
    loss: LossKind,
) -> Result<(f64, f64), HarnessError> {
    let per_sample: Vec<Result<(f64, f64, u64), HarnessError>> = samples
        .par_iter()
        .map(|s| {
            let x = FeatureMap::<f32>::from_input_tensor(s.input);
            let pred = weights.forward(&x)?;
            let (loss_value, _) = masked_loss(&pred, s.label, s.mask, loss)?;
            let mut acc = RmseAccumulator::new();
            for (i, (&m, &t)) in s.mask.iter().zip(s.label).enumerate() {
                if m {
                    acc.push(pred.data[i].into_f64(), t);
                }
            }
            Ok((loss_value, acc.sum_sq(), acc.count()))
        })
        .collect();
    let mut loss_sum = 0.0;
    let mut pooled = RmseAccumulator::new();
    for r in per_sample {
        let (loss_value, sum_sq, count) = r?;
        loss_sum += loss_value;
        pooled.push_sum(sum_sq, count);
    }
    let rmse = pooled.rmse().unwrap_or(f64::NAN);
    Ok((loss_sum / samples.len().max(1) as f64, rmse))
}

/// The shared optimizer loop behind [`train`] and [`finetune`].
///
/// Per epoch: shuffle, draw one dihedral transform per sample (when
/// augmenting), accumulate per-sample gradients in parallel per
/// mini-batch, and apply one Adam update per batch. Gradients are reduced
/// in sample order so results are independent of thread count.
#[allow(clippy::too_many_arguments)]
fn fit(
    weights: &mut ModelWeights<f32>,
    train_samples: &[FitSample<'_>],
    eval_samples: &[FitSample<'_>],
    loss: LossKind,
    adam: &AdamConfig,
    epochs: usize,
    batch_size: usize,
    augmented: bool,
    seed: u64,
    checkpoint_every: usize,
    checkpoint_dir: Option<&Path>,
    target_rmse_db: Option<f64>,
) -> Result<Vec<EpochStats>, HarnessError> {
    let mut rng = Pcg64::seed_from_u64(seed);
    let mut state = AdamState::new(weights);
    let mut history = Vec::with_capacity(epochs);
    let transforms = AugmentTransform::all();
    let mut order: Vec<usize> = (0..train_samples.len()).collect();

    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let picks: Vec<AugmentTransform> = order
            .iter()
            .map(|_| {
                if augmented {
                    transforms[rng.random_range(0..transforms.len())]
                } else {
                    AugmentTransform::IDENTITY
                }
            })
            .collect();

        let mut epoch_loss_sum = 0.0;
        for (batch_ids, batch_picks) in order.chunks(batch_size).zip(picks.chunks(batch_size)) {
            let w: &ModelWeights<f32> = weights;
            let results: Vec<Result<(f64, ModelGradients<f32>), HarnessError>> = batch_ids
                .par_iter()
                .zip(batch_picks)
                .map(|(&i, &t)| {
                    let s = &train_samples[i];
                    let (x, label, mask): (_, Cow<'_, [f64]>, Cow<'_, [bool]>) =
                        if t == AugmentTransform::IDENTITY {
                            (
                                FeatureMap::<f32>::from_input_tensor(s.input),
                                Cow::Borrowed(s.label),
                                Cow::Borrowed(s.mask),
                            )
                        } else {
                            let (tensor_t, label_t, mask_t) = augment(s.input, s.label, s.mask, t)?;
                            (
                                FeatureMap::<f32>::from_input_tensor(&tensor_t),
                                Cow::Owned(label_t),
                                Cow::Owned(mask_t),
                            )
                        };
                    let (pred, cache) = w.forward_cached(&x)?;
                    let (loss_value, d_pred) = masked_loss(&pred, &label, &mask, loss)?;
                    let mut grads = ModelGradients::zeros(&w.arch);
                    w.backward(&cache, &d_pred, &mut grads);
                    Ok((loss_value, grads))
                })
                .collect();

            let mut batch_grads = ModelGradients::zeros(&weights.arch);
            for r in results {
                let (loss_value, grads) = r?;
                epoch_loss_sum += loss_value;
                batch_grads.add_assign(&grads);
            }
            batch_grads.scale(1.0 / batch_ids.len() as f64);
            adam_step(weights, &batch_grads, &mut state, adam);
        }

        let train_loss = epoch_loss_sum / train_samples.len() as f64;
        let (val_loss, rmse_db) = evaluate_prepared(weights, eval_samples, loss)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            rmse_db,
        });

        if checkpoint_every > 0 && epoch % checkpoint_every == 0 {
            if let Some(dir) = checkpoint_dir {
                fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
                let path = dir.join(format!("checkpoint_epoch{epoch:04}.plw"));
                save_weights(weights, &path)?;
            }
        }
        if let Some(target) = target_rmse_db {
            if rmse_db <= target {
                break;
            }
        }
    }
    Ok(history)
}

/// Train a freshly initialized model on the dataset's train split.
///
/// The per-epoch evaluation metrics (`val_loss`, `rmse_db`) are measured
/// on the test split when it is non-empty, otherwise on the train split
/// itself. Fully seeded: same config, same dataset, same weights.
pub fn train(
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelWeights<f32>, Vec<EpochStats>), HarnessError> {
    cfg.validate()?;
    let train_samples = prepare_split(dataset, Split::Train);
    if train_samples.is_empty() {
        return Err(HarnessError::EmptySplit(Split::Train));
    }
    let eval_samples = {
        let test = prepare_split(dataset, Split::Test);
        if test.is_empty() {
            prepare_split(dataset, Split::Train)
        } else {
            test
        }
    };
    let mut weights = ModelWeights::<f32>::init(cfg.arch.clone(), cfg.seed)?;
    let history = fit(
        &mut weights,
        &train_samples,
        &eval_samples,
        cfg.loss,
        &cfg.adam,
        cfg.epochs,
        cfg.batch_size,
        cfg.augment,
        cfg.seed,
        cfg.checkpoint_every,
        cfg.checkpoint_dir.as_deref(),
        cfg.target_rmse_db,
    )?;
    Ok((weights, history))
}

/// Pooled masked RMSE (dB) of a model over one split: every valid pixel of
/// every sample carries the same weight.
pub fn evaluate_rmse(
    weights: &ModelWeights<f32>,
    dataset: &Dataset,
    split: Split,
) -> Result<f64, HarnessError> {
    let samples = prepare_split(dataset, split);
    if samples.is_empty() {
        return Err(HarnessError::EmptySplit(split));
    }
    let (_, rmse) = evaluate_prepared(weights, &samples, LossKind::Mse)?;
    if rmse.is_nan() {
        return Err(HarnessError::EmptySplit(split));
    }
    Ok(rmse)
}

/// Hyperparameters for [`finetune`]. The defaults follow the calibration
/// recipe: a few epochs at one tenth of the training learning rate.
#[derive(Debug, Clone)]
pub struct FinetuneConfig {
    pub loss: LossKind,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub augment: bool,
    pub seed: u64,
    /// Which split provides the calibration samples.
    pub split: Split,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Mse,
            adam: AdamConfig {
                lr: AdamConfig::default().lr / 10.0,
                ..AdamConfig::default()
            },
            epochs: 5,
            batch_size: 8,
            augment: false,
            seed: 0,
            split: Split::Calibrate,
        }
    }
}

/// Continue training from existing weights on a calibration split. The
/// input weights are left untouched; a zero-epoch config returns a plain
/// copy. History metrics are measured on the calibration split itself.
pub fn finetune(
    weights: &ModelWeights<f32>,
    dataset: &Dataset,
    cfg: &FinetuneConfig,
) -> Result<(ModelWeights<f32>, Vec<EpochStats>), HarnessError> {
    if cfg.batch_size < 1 {
        return Err(HarnessError::Config("batch_size must be >= 1".into()));
    }
    let mut tuned = weights.clone();
    if cfg.epochs == 0 {
        return Ok((tuned, Vec::new()));
    }
    let samples = prepare_split(dataset, cfg.split);
    if samples.is_empty() {
        return Err(HarnessError::EmptySplit(cfg.split));
    }
    let history = fit(
        &mut tuned,
        &samples,
        &samples,
        cfg.loss,
        &cfg.adam,
        cfg.epochs,
        cfg.batch_size,
        cfg.augment,
        cfg.seed,
        0,
        None,
        None,
    )?;
    Ok((tuned, history))
}

/// Load weights from disk, picking up the architecture stored with them.
pub fn load_model(path: &Path) -> Result<ModelWeights<f32>, HarnessError> {
    Ok(load_weights(path)?)
}

// ---------------------------------------------------------------------------
// First-layer filter export
// ---------------------------------------------------------------------------

/// One first-layer 3x3 kernel slice, min-max normalized to [0, 1].
#[derive(Debug, Clone)]
pub struct FilterImage {
    pub in_channel: usize,
    pub out_index: usize,
    /// Row-major 3x3 values in [0, 1]; constant kernels map to 0.5.
    pub pixels: [f64; 9],
}

/// Slice the first encoder convolution into per-input-channel kernel
/// images, each normalized independently. Ordered by input channel, then
/// output index, so a `base_channels` model yields `base_channels` images
/// per input channel.
pub fn export_first_layer_filters<T: Scalar>(weights: &ModelWeights<T>) -> Vec<FilterImage> {
    let layer = &weights.encoder[0];
    let mut out = Vec::with_capacity(layer.in_channels * layer.out_channels);
    for in_channel in 0..layer.in_channels {
        for out_index in 0..layer.out_channels {
            let mut pixels = [0.0f64; 9];
            for (k, p) in pixels.iter_mut().enumerate() {
                *p = layer.w(out_index, in_channel, k / 3, k % 3).into_f64();
            }
            let min = pixels.iter().copied().fold(f64::INFINITY, f64::min);
            let max = pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max > min {
                for p in &mut pixels {
                    *p = (*p - min) / (max - min);
                }
            } else {
                pixels = [0.5; 9];
            }
            out.push(FilterImage {
                in_channel,
                out_index,
                pixels,
            });
        }
    }
    out
}

/// Write an 8-bit binary (P5) PGM image.
pub fn write_pgm(
    path: &Path,
    width: usize,
    height: usize,
    pixels: &[u8],
) -> Result<(), HarnessError> {
    assert_eq!(pixels.len(), width * height, "pgm pixel count mismatch");
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&bytes).map_err(|e| io_err(path, e))
}

/// Write each filter as `filter_in<c>_out<o>.pgm` (3x3, optionally
/// upscaled by an integer factor for inspection) and return the paths.
pub fn save_filter_pgms(
    filters: &[FilterImage],
    dir: &Path,
    upscale: usize,
) -> Result<Vec<PathBuf>, HarnessError> {
    let scale = upscale.max(1);
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut paths = Vec::with_capacity(filters.len());
    for f in filters {
        let side = 3 * scale;
        let mut pixels = vec![0u8; side * side];
        for r in 0..side {
            for c in 0..side {
                let v = f.pixels[(r / scale) * 3 + c / scale];
                pixels[r * side + c] = (v * 255.0).round() as u8;
            }
        }
        let path = dir.join(format!("filter_in{}_out{}.pgm", f.in_channel, f.out_index));
        write_pgm(&path, side, side, &pixels)?;
        paths.push(path);
    }
    Ok(paths)
}

// ---------------------------------------------------------------------------
// Baseline evaluation over datasets
// ---------------------------------------------------------------------------

/// Which reference model to run over a dataset split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Hata,
    Spm,
    Raysim,
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hata" => Ok(BaselineKind::Hata),
            "spm" => Ok(BaselineKind::Spm),
            "raysim" => Ok(BaselineKind::Raysim),
            other => Err(format!(
                "unknown baseline `{other}` (expected hata|spm|raysim)"
            )),
        }
    }
}

/// Everything a baseline needs besides the samples themselves.
#[derive(Debug, Clone)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub city: CitySize,
    pub spm: SpmParams,
    pub clutter_table: ClutterLossTable,
    pub mobile: MobileConfig,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind) -> Self {
        Self {
            kind,
            city: CitySize::SmallMedium,
            spm: SpmParams::default(),
            clutter_table: ClutterLossTable::default_synthetic(),
            mobile: MobileConfig::default(),
        }
    }
}

/// Rebuild the GIS patch a tensor was derived from by inverting the
/// channel scaling: clutter codes are rounded back to integers, building
/// and terrain heights are exact up to the f32 precision of the tensor
/// file format.
pub fn reconstruct_patch(
    tensor: &InputTensor,
    resolution_m: f64,
) -> Result<GisPatch, HarnessError> {
    let (h, w) = (tensor.height(), tensor.width());
    let origin = (0.0, h as f64 * resolution_m);
    let plane = |values: Vec<f64>| -> Result<RasterGrid, HarnessError> {
        Ok(RasterGrid::new(
            w,
            h,
            resolution_m,
            origin,
            -9999.0,
            values,
        )?)
    };
    let clutter = plane(
        tensor
            .channel(0)
            .iter()
            .map(|&v| (v * crate::tensor::CLUTTER_SCALE).round())
            .collect(),
    )?;
    let building = plane(
        tensor
            .channel(1)
            .iter()
            .map(|&v| v * crate::tensor::HEIGHT_SCALE_M)
            .collect(),
    )?;
    let terrain = plane(
        tensor
            .channel(2)
            .iter()
            .map(|&v| v * crate::tensor::HEIGHT_SCALE_M)
            .collect(),
    )?;
    Ok(GisPatch {
        clutter,
        building,
        terrain,
        center_pixel: (h / 2, w / 2),
        resolution_m,
    })
}

/// Obtain a sample's patch: re-extracted from the original map when one is
/// available (exact), otherwise reconstructed from the stored tensor
/// (exact up to f32 tensor-file precision).
pub fn sample_patch(
    sample: &PathLossSample,
    resolution_m: f64,
    maps: Option<&[(String, GisMap)]>,
) -> Result<GisPatch, HarnessError> {
    if let Some(maps) = maps {
        let map = maps
            .iter()
            .find(|(name, _)| *name == sample.meta.map)
            .map(|(_, m)| m)
            .ok_or_else(|| {
                HarnessError::Config(format!("map `{}` not found in maps dir", sample.meta.map))
            })?;
        let a = &sample.meta.antenna;
        Ok(extract_patch(
            map,
            (a.easting_m, a.northing_m),
            sample.input.width(),
            sample.input.height(),
        )?)
    } else {
        reconstruct_patch(&sample.input, resolution_m)
    }
}

/// Run one baseline over one sample. Predictions are quantized to the f32
/// precision of the on-disk matrix format, the same precision the labels
/// were stored at.
pub fn baseline_prediction(
    sample: &PathLossSample,
    cfg: &BaselineConfig,
    resolution_m: f64,
    maps: Option<&[(String, GisMap)]>,
) -> Result<PathLossMatrix, HarnessError> {
    let patch = sample_patch(sample, resolution_m, maps)?;
    let antenna = &sample.meta.antenna;
    let mut pred = match cfg.kind {
        BaselineKind::Hata => hata_matrix(&patch, antenna, &cfg.mobile, cfg.city),
        BaselineKind::Spm => spm_matrix(&patch, antenna, &cfg.spm),
        BaselineKind::Raysim => simulate(&patch, antenna, &cfg.mobile, &cfg.clutter_table),
    };
    for r in 0..pred.height() {
        for c in 0..pred.width() {
            let v = pred.get(r, c) as f32 as f64;
            pred.set(r, c, v);
        }
    }
    Ok(pred)
}

/// Pooled RMSE of one baseline against the stored labels of a split.
pub fn baseline_rmse(
    dataset: &Dataset,
    split: Split,
    cfg: &BaselineConfig,
    maps: Option<&[(String, GisMap)]>,
) -> Result<f64, HarnessError> {
    let samples = dataset.split(split);
    if samples.is_empty() {
        return Err(HarnessError::EmptySplit(split));
    }
    let mut acc = RmseAccumulator::new();
    for s in samples {
        let pred = baseline_prediction(s, cfg, dataset.resolution_m, maps)?;
        for (r, c, truth) in s.label.iter_valid() {
            acc.push(pred.get(r, c), truth);
        }
    }
    acc.rmse().ok_or(HarnessError::EmptySplit(split))
}

/// Flatten a split's valid pixels into SPM calibration measurements. The
/// per-pixel distance is clamped exactly as the SPM matrix evaluation
/// clamps it, so a least-squares fit on these measurements is optimal for
/// the same split's RMSE.
pub fn measurements_from_split(
    dataset: &Dataset,
    split: Split,
    maps: Option<&[(String, GisMap)]>,
) -> Result<Vec<SpmMeasurement>, HarnessError> {
    let samples = dataset.split(split);
    if samples.is_empty() {
        return Err(HarnessError::EmptySplit(split));
    }
    let mut out = Vec::new();
    for s in samples {
        let patch = sample_patch(s, dataset.resolution_m, maps)?;
        let (cr, cc) = patch.center_pixel;
        for (r, c, observed_db) in s.label.iter_valid() {
            let dx = (c as f64 - cc as f64) * patch.resolution_m;
            let dy = (cr as f64 - r as f64) * patch.resolution_m;
            let d_km = (dx.hypot(dy) / 1000.0).max(MIN_MATRIX_DISTANCE_KM);
            out.push(SpmMeasurement {
                d_km,
                h_b_m: s.meta.antenna.height_m,
                clutter_code: patch.clutter_code(r, c),
                observed_db,
            });
        }
    }
    Ok(out)
}
