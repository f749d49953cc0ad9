//! Okumura-Hata urban path loss swept over distance, frequency, and city
//! size, plus the mobile-height correction at a few receiver heights.

use std::error::Error;

use propnet::empirical::{hata_correction, hata_urban, CitySize, HataInput, RangeMode};

fn main() -> Result<(), Box<dyn Error>> {
    println!("path loss (dB), h_b = 50 m, h_m = 1.5 m");
    println!(
        "{:>6} {:>7} {:>14} {:>10}",
        "d_km", "f_mhz", "small-medium", "large"
    );
    for f_mhz in [900.0, 1500.0] {
        for d_km in [1.0, 2.0, 5.0, 10.0] {
            let loss = |city_size| {
                hata_urban(
                    &HataInput {
                        f_mhz,
                        h_b_m: 50.0,
                        h_m_m: 1.5,
                        d_km,
                        city_size,
                    },
                    RangeMode::Strict,
                )
            };
            println!(
                "{d_km:>6.1} {f_mhz:>7.0} {:>14.2} {:>10.2}",
                loss(CitySize::SmallMedium)?,
                loss(CitySize::Large)?
            );
        }
    }

    println!("\nmobile antenna height correction a(h_m) (dB) at 900 MHz");
    for h_m in [1.0, 1.5, 3.0, 5.0, 10.0] {
        println!(
            "  h_m = {h_m:>4.1} m   small-medium {:>7.3}   large {:>7.3}",
            hata_correction(900.0, h_m, CitySize::SmallMedium, RangeMode::Strict)?,
            hata_correction(900.0, h_m, CitySize::Large, RangeMode::Strict)?
        );
    }
    Ok(())
}
