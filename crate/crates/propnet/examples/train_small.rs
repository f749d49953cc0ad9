//! Miniature end-to-end run: synthesize train/test datasets on procedural
//! maps (simulator-labelled), train a small model, compare its test RMSE
//! against the uncalibrated Hata baseline, then fine-tune on a calibration
//! split. Finishes in well under a minute in release mode.

use std::error::Error;

use propnet::harness::{
    self, demo_map, BaselineConfig, BaselineKind, FinetuneConfig, Split, SynthConfig, TrainConfig,
};

fn main() -> Result<(), Box<dyn Error>> {
    let train_maps: Vec<_> = (0..2)
        .map(|i| (format!("train_map{i}"), demo_map(300 + i, 192, 5.0)))
        .collect();
    let held_out: Vec<_> = (0..1)
        .map(|i| (format!("test_map{i}"), demo_map(400 + i, 192, 5.0)))
        .collect();

    let mut synth = SynthConfig {
        n_samples: 12,
        patch: 32,
        seed: 9,
        ..SynthConfig::default()
    };
    let mut dataset = harness::synth_dataset(&train_maps, &synth)?;

    synth.split = Split::Test;
    synth.n_samples = 4;
    synth.seed = 10;
    dataset = dataset.merge(harness::synth_dataset(&held_out, &synth)?)?;

    synth.split = Split::Calibrate;
    synth.n_samples = 4;
    synth.seed = 11;
    dataset = dataset.merge(harness::synth_dataset(&held_out, &synth)?)?;

    println!(
        "dataset: {} train / {} test / {} calibrate samples of {}x{} px",
        dataset.split(Split::Train).len(),
        dataset.split(Split::Test).len(),
        dataset.split(Split::Calibrate).len(),
        dataset.patch,
        dataset.patch
    );

    let mut cfg = TrainConfig::default();
    cfg.arch.base_channels = 8;
    cfg.arch.depth = 2;
    cfg.epochs = 30;
    cfg.batch_size = 4;
    cfg.augment = false;
    cfg.seed = 1;

    let (weights, history) = harness::train(&dataset, &cfg)?;
    for stats in history.iter().step_by(10).chain(history.last()) {
        println!(
            "epoch {:>3}: train_loss {:>8.3}  val_loss {:>8.3}  rmse {:>6.2} dB",
            stats.epoch, stats.train_loss, stats.val_loss, stats.rmse_db
        );
    }

    let model_rmse = harness::evaluate_rmse(&weights, &dataset, Split::Test)?;
    let hata = BaselineConfig::new(BaselineKind::Hata);
    let hata_rmse = harness::baseline_rmse(&dataset, Split::Test, &hata, None)?;
    println!("\ntest split: model rmse {model_rmse:.2} dB   hata rmse {hata_rmse:.2} dB");

    let mut ft = FinetuneConfig::default();
    ft.epochs = 5;
    let (tuned, _) = harness::finetune(&weights, &dataset, &ft)?;
    let before = harness::evaluate_rmse(&weights, &dataset, Split::Calibrate)?;
    let after = harness::evaluate_rmse(&tuned, &dataset, Split::Calibrate)?;
    println!("calibrate split: before fine-tune {before:.2} dB, after {after:.2} dB");
    Ok(())
}
