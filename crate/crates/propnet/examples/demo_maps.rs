//! Generate procedural demo maps (terrain, clutter, buildings) and save each
//! as a directory of ASCII grids — the map format every other tool consumes.
//!
//! Usage: cargo run --release --example demo_maps -- [OUT_DIR] [COUNT] [SIZE]

use std::env;
use std::error::Error;
use std::path::PathBuf;

use propnet::harness::demo_map;

fn main() -> Result<(), Box<dyn Error>> {
    let mut args = env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/demo_maps".into()));
    let count: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    let size: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(256);

    for i in 0..count {
        let map = demo_map(1000 + i as u64, size, 5.0);
        let dir = out.join(format!("map{i:02}"));
        map.save(&dir)?;
        let built = map.building.values().iter().filter(|&&b| b > 0.0).count();
        println!(
            "wrote {} ({size}x{size} px at 5 m/px, {built} building pixels)",
            dir.display()
        );
    }
    Ok(())
}
