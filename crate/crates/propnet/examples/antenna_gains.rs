//! Radiation-pattern gain lookups: an omni and a 65-degree sector antenna,
//! sampled across azimuth and elevation offsets from boresight.

use std::error::Error;

use propnet::antenna::{omni_pattern, pattern_gain, sector_pattern};

fn main() -> Result<(), Box<dyn Error>> {
    let omni = omni_pattern(2.15);
    let sector = sector_pattern(17.0, 65.0, 7.0, 30.0);

    println!("gain (dBi) vs azimuth offset at 0° elevation");
    println!("{:>8} {:>8} {:>8}", "az_off", "omni", "sector");
    for az in [0.0, 10.0, 32.5, 65.0, 120.0, 180.0, -32.5] {
        println!(
            "{az:>8.1} {:>8.2} {:>8.2}",
            pattern_gain(&omni, az, 0.0)?,
            pattern_gain(&sector, az, 0.0)?
        );
    }

    println!("\nsector gain (dBi) vs elevation offset on boresight");
    for el in [-10.0, -3.5, 0.0, 3.5, 10.0] {
        println!("{el:>8.1} {:>8.2}", pattern_gain(&sector, 0.0, el)?);
    }

    println!("\nhalf-power check: 12*(32.5/65)^2 = 3 dB down at half beamwidth");
    let down = pattern_gain(&sector, 0.0, 0.0)? - pattern_gain(&sector, 32.5, 0.0)?;
    println!("measured falloff at 32.5°: {down:.2} dB");
    Ok(())
}
