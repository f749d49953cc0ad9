//! Knife-edge diffraction: the single-edge loss curve, Fresnel parameters
//! for a synthetic ridge, and a two-edge profile resolved recursively from
//! the dominant edge.

use std::error::Error;

use propnet::raysim::{diffraction_loss, knife_edge_loss, knife_edge_v, Profile, ProfileSample};

fn main() -> Result<(), Box<dyn Error>> {
    println!("single-edge loss J(v):");
    for v in [-1.0, -0.78, -0.5, 0.0, 0.5, 1.0, 2.0, 5.0] {
        println!("  v = {v:>5.2}   {:>6.2} dB", knife_edge_loss(v));
    }

    // A 2 km link: antenna 40 m, receiver 10 m, one ridge at the midpoint
    // reaching 15 m above the direct ray.
    let single = Profile {
        samples: vec![ProfileSample {
            distance_m: 1000.0,
            obstruction_m: 40.0,
        }],
        tx_alt_m: 40.0,
        rx_alt_m: 10.0,
        total_distance_m: 2000.0,
    };
    println!("\none 40 m ridge on a 2 km link (ray height 25 m at midpoint):");
    for f_mhz in [900.0, 1800.0, 2600.0] {
        let v = knife_edge_v(&single, 0, f_mhz)?;
        println!(
            "  f = {f_mhz:>6.0} MHz   v = {v:>5.3}   loss = {:>6.2} dB",
            diffraction_loss(&single, f_mhz)
        );
    }

    // Two edges: the dominant one splits the path; secondary edges are
    // evaluated on the sub-paths and their losses accumulate.
    let double = Profile {
        samples: vec![
            ProfileSample {
                distance_m: 600.0,
                obstruction_m: 38.0,
            },
            ProfileSample {
                distance_m: 1400.0,
                obstruction_m: 42.0,
            },
        ],
        tx_alt_m: 40.0,
        rx_alt_m: 10.0,
        total_distance_m: 2000.0,
    };
    println!("\ntwo ridges (38 m at 600 m, 42 m at 1400 m):");
    for f_mhz in [900.0, 1800.0, 2600.0] {
        println!(
            "  f = {f_mhz:>6.0} MHz   loss = {:>6.2} dB",
            diffraction_loss(&double, f_mhz)
        );
    }
    Ok(())
}
