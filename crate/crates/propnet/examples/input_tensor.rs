//! Build the 8-channel network input tensor for one antenna placed on a
//! procedural demo map, print per-channel statistics, and write the tensor
//! to disk in the binary tensor format.

use std::error::Error;
use std::path::Path;

use propnet::antenna::{standard_pattern_set, AntennaConfig};
use propnet::geodata::extract_patch;
use propnet::harness::demo_map;
use propnet::tensor::{build_input_tensor, write_tensor, CHANNELS};

fn main() -> Result<(), Box<dyn Error>> {
    let map = demo_map(7, 256, 5.0);
    let (easting_m, northing_m) = map.terrain.pixel_center(128, 128);
    let antenna = AntennaConfig {
        easting_m,
        northing_m,
        height_m: 40.0,
        azimuth_deg: 135.0,
        tilt_deg: 4.0,
        frequency_mhz: 1800.0,
        tx_power_dbm: 43.0,
        pattern: standard_pattern_set()[1].clone(),
    };
    antenna.validate()?;

    let patch = extract_patch(&map, (easting_m, northing_m), 64, 64)?;
    let tensor = build_input_tensor(&patch, &antenna)?;

    let names = [
        "clutter",
        "building",
        "terrain",
        "azimuth",
        "tilt",
        "height",
        "frequency",
        "gain",
    ];
    println!("tensor {}x{}x{}", CHANNELS, tensor.height(), tensor.width());
    println!("{:>10} {:>9} {:>9} {:>9}", "channel", "min", "max", "mean");
    for (c, name) in names.iter().enumerate() {
        let data = tensor.channel(c);
        let min = data.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        println!("{name:>10} {min:>9.4} {max:>9.4} {mean:>9.4}");
    }

    let out = Path::new("target/example_input.plt");
    write_tensor(&tensor, out)?;
    println!("wrote {}", out.display());
    Ok(())
}
