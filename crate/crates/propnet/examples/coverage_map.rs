//! Simulate a full path-loss coverage map for one antenna on a procedural
//! demo map, write the matrix in the binary matrix format, and render a
//! grayscale PGM preview (60-160 dB mapped to black-white).

use std::error::Error;
use std::path::Path;

use propnet::antenna::{standard_pattern_set, AntennaConfig, MobileConfig};
use propnet::geodata::extract_patch;
use propnet::harness::{demo_map, write_pgm};
use propnet::raysim::{simulate, write_matrix, ClutterLossTable};

fn main() -> Result<(), Box<dyn Error>> {
    let map = demo_map(11, 320, 5.0);
    let (easting_m, northing_m) = map.terrain.pixel_center(160, 160);
    let antenna = AntennaConfig {
        easting_m,
        northing_m,
        height_m: 45.0,
        azimuth_deg: 210.0,
        tilt_deg: 5.0,
        frequency_mhz: 900.0,
        tx_power_dbm: 43.0,
        pattern: standard_pattern_set()[1].clone(),
    };
    antenna.validate()?;

    let patch = extract_patch(&map, (easting_m, northing_m), 256, 256)?;
    let matrix = simulate(
        &patch,
        &antenna,
        &MobileConfig::default(),
        &ClutterLossTable::default_synthetic(),
    );

    let values = matrix.values();
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    println!(
        "simulated {}x{} path-loss matrix: min {min:.1} dB, mean {mean:.1} dB, max {max:.1} dB",
        matrix.height(),
        matrix.width()
    );

    let plm = Path::new("target/coverage.plm");
    write_matrix(&matrix, plm)?;
    println!("wrote {}", plm.display());

    let bytes: Vec<u8> = values
        .iter()
        .map(|&v| (((v - 60.0) / 100.0).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let pgm = Path::new("target/coverage.pgm");
    write_pgm(pgm, matrix.width(), matrix.height(), &bytes)?;
    println!("wrote {}", pgm.display());
    Ok(())
}
