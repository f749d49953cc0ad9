//! Calibrate the simplified SPM coefficients against simulator-labelled
//! measurements and show the RMSE improvement over the default parameters.

use std::error::Error;

use propnet::empirical::calibrate_spm;
use propnet::harness::{self, demo_map, BaselineConfig, BaselineKind, Split, SynthConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let maps: Vec<_> = (0..2)
        .map(|i| (format!("map{i}"), demo_map(500 + i, 192, 5.0)))
        .collect();
    let synth = SynthConfig {
        n_samples: 10,
        patch: 32,
        seed: 21,
        split: Split::Calibrate,
        ..SynthConfig::default()
    };
    let dataset = harness::synth_dataset(&maps, &synth)?;

    let measurements = harness::measurements_from_split(&dataset, Split::Calibrate, None)?;
    println!(
        "{} measurements from {} samples",
        measurements.len(),
        dataset.samples.len()
    );

    let fit = calibrate_spm(&measurements)?;
    println!(
        "fit: k1 {:.3}  k2 {:.3}  k3 {:.3}  k4 {:.3}  residual_rms {:.3} dB (rank {}{})",
        fit.params.k1,
        fit.params.k2,
        fit.params.k3,
        fit.params.k4,
        fit.residual_rms_db,
        fit.rank,
        if fit.rank_deficient {
            ", deficient"
        } else {
            ""
        }
    );

    let mut baseline = BaselineConfig::new(BaselineKind::Spm);
    let before = harness::baseline_rmse(&dataset, Split::Calibrate, &baseline, None)?;
    baseline.spm = fit.params;
    let after = harness::baseline_rmse(&dataset, Split::Calibrate, &baseline, None)?;
    println!("calibrate split: default {before:.2} dB -> calibrated {after:.2} dB");
    Ok(())
}
