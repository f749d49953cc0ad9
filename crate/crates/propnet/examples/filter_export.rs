//! Initialize a model, export its first-layer convolution kernels as
//! per-input-channel grayscale images, and write them as PGM files.

use std::env;
use std::error::Error;
use std::path::PathBuf;

use propnet::harness::{export_first_layer_filters, save_filter_pgms};
use propnet::net::{ArchSpec, ModelWeights};

fn main() -> Result<(), Box<dyn Error>> {
    let out = PathBuf::from(
        env::args()
            .nth(1)
            .unwrap_or_else(|| "target/filters".into()),
    );
    let weights = ModelWeights::<f32>::init(ArchSpec::default(), 42)?;
    let filters = export_first_layer_filters(&weights);
    let files = save_filter_pgms(&filters, &out, 16)?;
    println!(
        "exported {} kernels ({} input channels x {} base channels) to {}",
        files.len(),
        weights.arch.in_channels,
        weights.arch.base_channels,
        out.display()
    );
    println!("first file: {}", files[0].display());
    Ok(())
}
