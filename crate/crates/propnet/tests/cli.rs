//! End-to-end tests for the `propnet` binary: every subcommand is driven
//! through a real process, and exit codes / outputs are checked against the
//! documented contract (0 ok, 1 tolerance failure, 2 config error,
//! 3 generation failure, 4 malformed data, 5 empty split).

use std::path::Path;
use std::process::{Command, Output};

use propnet::harness::demo_map;
use propnet::net::{save_weights, ArchSpec, ModelWeights};
use propnet::raysim::{write_matrix, PathLossMatrix};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_propnet"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn propnet")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_code(out: &Output, want: i32, context: &str) {
    let got = out.status.code().expect("process terminated by signal");
    assert_eq!(
        got,
        want,
        "{context}: exit {got}, want {want}\nstdout:\n{}\nstderr:\n{}",
        stdout_of(out),
        stderr_of(out)
    );
}

/// Last `rmse_db=<value>` line printed by eval/baseline.
fn parse_rmse(out: &Output) -> f64 {
    let text = stdout_of(out);
    let line = text
        .lines()
        .rev()
        .find(|l| l.starts_with("rmse_db="))
        .unwrap_or_else(|| panic!("no rmse_db= line in:\n{text}"));
    line["rmse_db=".len()..]
        .trim()
        .parse()
        .expect("numeric rmse")
}

/// Write a small demo map directory with `count` maps of `size` pixels.
fn write_maps(dir: &Path, count: u64, size: usize) {
    for i in 0..count {
        let map = demo_map(100 + i, size, 5.0);
        map.save(&dir.join(format!("map{i:02}"))).expect("save map");
    }
}

fn manifest_sample_count(dataset_dir: &Path) -> usize {
    let text = std::fs::read_to_string(dataset_dir.join("manifest.json")).expect("manifest");
    let value: serde_json::Value = serde_json::from_str(&text).expect("manifest json");
    value["samples"].as_array().expect("samples array").len()
}

fn synth(maps: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![
        "synth",
        "--maps",
        maps.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--patch",
        "32",
    ];
    args.extend_from_slice(extra);
    let output = run(&args);
    assert_code(&output, 0, "synth");
}

#[test]
fn help_exits_zero_for_every_subcommand() {
    for sub in [
        None,
        Some("synth"),
        Some("train"),
        Some("eval"),
        Some("predict"),
        Some("finetune"),
        Some("baseline"),
        Some("render"),
        Some("gradcheck"),
    ] {
        let mut args = Vec::new();
        if let Some(s) = sub {
            args.push(s);
        }
        args.push("--help");
        let out = run(&args);
        assert_code(&out, 0, &format!("--help for {sub:?}"));
        assert!(!out.stdout.is_empty(), "--help for {sub:?} printed nothing");
    }
    // Unknown flags are usage errors.
    let out = run(&["synth", "--no-such-flag"]);
    assert_code(&out, 2, "unknown flag");
}

#[test]
fn synth_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let maps = tmp.path().join("maps");
    write_maps(&maps, 1, 96);

    let ds_a = tmp.path().join("ds_a");
    let ds_b = tmp.path().join("ds_b");
    synth(&maps, &ds_a, &["--n", "4", "--seed", "5"]);
    synth(&maps, &ds_b, &["--n", "4", "--seed", "5"]);
    assert_eq!(manifest_sample_count(&ds_a), 4);

    // Same seed: every file byte-identical.
    let manifest_a = std::fs::read(ds_a.join("manifest.json")).unwrap();
    let manifest_b = std::fs::read(ds_b.join("manifest.json")).unwrap();
    assert_eq!(manifest_a, manifest_b, "manifests differ for equal seeds");
    let mut names: Vec<String> = std::fs::read_dir(ds_a.join("samples"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for name in &names {
        let a = std::fs::read(ds_a.join("samples").join(name)).unwrap();
        let b = std::fs::read(ds_b.join("samples").join(name)).unwrap();
        assert_eq!(a, b, "sample file {name} differs for equal seeds");
    }

    // A different seed changes the data.
    let ds_c = tmp.path().join("ds_c");
    synth(&maps, &ds_c, &["--n", "4", "--seed", "6"]);
    let manifest_c = std::fs::read(ds_c.join("manifest.json")).unwrap();
    assert_ne!(manifest_a, manifest_c, "seed had no effect on the manifest");
}

#[test]
fn synth_missing_maps_dir_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "synth",
        "--maps",
        tmp.path().join("nowhere").to_str().unwrap(),
        "--out",
        tmp.path().join("ds").to_str().unwrap(),
        "--n",
        "2",
    ]);
    assert_code(&out, 2, "synth with missing maps dir");
    assert!(
        stderr_of(&out).starts_with("error:"),
        "diagnostics go to stderr"
    );
}

#[test]
fn train_eval_predict_finetune_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let maps = tmp.path().join("maps");
    write_maps(&maps, 2, 96);

    let ds = tmp.path().join("ds");
    synth(&maps, &ds, &["--n", "4", "--seed", "7"]);

    let model = tmp.path().join("model.plw");
    let out = run(&[
        "train",
        "--dataset",
        ds.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
        "--epochs",
        "2",
        "--batch-size",
        "2",
        "--base-channels",
        "4",
        "--depth",
        "2",
        "--augment",
        "false",
        "--seed",
        "1",
    ]);
    assert_code(&out, 0, "train");
    assert!(model.is_file(), "weights file missing");
    assert!(
        tmp.path().join("model.history.csv").is_file(),
        "history CSV missing"
    );

    // eval: machine-readable final line.
    let out = run(&[
        "eval",
        "--dataset",
        ds.to_str().unwrap(),
        "--weights",
        model.to_str().unwrap(),
        "--split",
        "train",
    ]);
    assert_code(&out, 0, "eval");
    let rmse = parse_rmse(&out);
    assert!(rmse.is_finite() && rmse > 0.0, "rmse {rmse} not plausible");

    // predict: consume one of the stored tensors, emit a matrix of the
    // same shape.
    let tensor_file = std::fs::read_dir(ds.join("samples"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "plt"))
        .expect("a stored tensor");
    let pred = tmp.path().join("pred.plm");
    let out = run(&[
        "predict",
        "--weights",
        model.to_str().unwrap(),
        "--input",
        tensor_file.to_str().unwrap(),
        "--out",
        pred.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "predict");
    let matrix = propnet::raysim::read_matrix(&pred).expect("readable matrix");
    assert_eq!((matrix.height(), matrix.width()), (32, 32));
    assert_eq!(
        matrix.valid_count(),
        32 * 32,
        "predictions cover all pixels"
    );

    // finetune: default output is <stem>.finetuned.plw; the starting
    // weights are left untouched.
    let cal = tmp.path().join("cal");
    synth(
        &maps,
        &cal,
        &[
            "--n",
            "2",
            "--seed",
            "8",
            "--field-mode",
            "--split",
            "calibrate",
        ],
    );
    let before = std::fs::read(&model).unwrap();
    let out = run(&[
        "finetune",
        "--dataset",
        cal.to_str().unwrap(),
        "--weights",
        model.to_str().unwrap(),
        "--epochs",
        "1",
    ]);
    assert_code(&out, 0, "finetune");
    let tuned = tmp.path().join("model.finetuned.plw");
    assert!(tuned.is_file(), "default finetune output missing");
    assert_eq!(
        before,
        std::fs::read(&model).unwrap(),
        "finetune modified its input weights"
    );
    assert_ne!(
        before,
        std::fs::read(&tuned).unwrap(),
        "finetune changed nothing"
    );
}

#[test]
fn baseline_raysim_reproduces_its_own_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let maps = tmp.path().join("maps");
    write_maps(&maps, 1, 96);
    let ds = tmp.path().join("ds");
    synth(&maps, &ds, &["--n", "3", "--seed", "11", "--split", "test"]);

    // With the exact maps available the simulator baseline must reproduce
    // the labels it generated: RMSE exactly zero.
    let out = run(&[
        "baseline",
        "raysim",
        "--dataset",
        ds.to_str().unwrap(),
        "--split",
        "test",
        "--maps",
        maps.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "baseline raysim");
    assert_eq!(parse_rmse(&out), 0.0, "raysim with exact maps");

    // hata runs on the same dataset and reports a finite error.
    let out = run(&[
        "baseline",
        "hata",
        "--dataset",
        ds.to_str().unwrap(),
        "--split",
        "test",
        "--city",
        "small-medium",
    ]);
    assert_code(&out, 0, "baseline hata");
    assert!(parse_rmse(&out).is_finite());

    // --calibrate-on is rejected for non-SPM baselines.
    let out = run(&[
        "baseline",
        "hata",
        "--dataset",
        ds.to_str().unwrap(),
        "--calibrate-on",
        "test",
    ]);
    assert_code(&out, 2, "calibrate-on with hata");
}

#[test]
fn baseline_spm_calibration_never_hurts_its_split() {
    let tmp = tempfile::tempdir().unwrap();
    let maps = tmp.path().join("maps");
    write_maps(&maps, 1, 96);
    let ds = tmp.path().join("ds");
    synth(
        &maps,
        &ds,
        &[
            "--n",
            "4",
            "--seed",
            "13",
            "--field-mode",
            "--split",
            "calibrate",
        ],
    );

    let base = &[
        "baseline",
        "spm",
        "--dataset",
        ds.to_str().unwrap(),
        "--split",
        "calibrate",
    ];
    let out = run(base);
    assert_code(&out, 0, "baseline spm");
    let uncalibrated = parse_rmse(&out);

    let mut args = base.to_vec();
    args.extend_from_slice(&["--calibrate-on", "calibrate"]);
    let out = run(&args);
    assert_code(&out, 0, "baseline spm --calibrate-on");
    assert!(
        stdout_of(&out).contains("calibrated on"),
        "calibration was not reported"
    );
    let calibrated = parse_rmse(&out);
    assert!(
        calibrated <= uncalibrated + 1e-9,
        "calibration hurt its own split: {calibrated} > {uncalibrated}"
    );
}

#[test]
fn render_constant_matrix_is_uniform_gray() {
    let tmp = tempfile::tempdir().unwrap();
    let mut matrix = PathLossMatrix::zeros(16, 16);
    for r in 0..16 {
        for c in 0..16 {
            matrix.set(r, c, 110.0);
        }
    }
    let plm = tmp.path().join("m.plm");
    write_matrix(&matrix, &plm).unwrap();

    let pgm = tmp.path().join("m.pgm");
    let out = run(&[
        "render",
        "--matrix",
        plm.to_str().unwrap(),
        "--out",
        pgm.to_str().unwrap(),
        "--min-db",
        "60",
        "--max-db",
        "160",
    ]);
    assert_code(&out, 0, "render matrix");

    let bytes = std::fs::read(&pgm).unwrap();
    let header_end = {
        // P5\n<w> <h>\n<max>\n then raw pixels
        let mut newlines = 0;
        bytes
            .iter()
            .position(|&b| {
                if b == b'\n' {
                    newlines += 1;
                }
                newlines == 3
            })
            .expect("pgm header")
            + 1
    };
    let header = std::str::from_utf8(&bytes[..header_end]).unwrap();
    assert!(header.starts_with("P5\n16 16\n255"), "header: {header:?}");
    let pixels = &bytes[header_end..];
    assert_eq!(pixels.len(), 256);
    // 110 dB sits exactly halfway through the 60..160 range.
    assert!(
        pixels.iter().all(|&p| p == 128),
        "expected uniform mid-gray"
    );

    // Refusing both sources at once is a usage problem, not a crash.
    let out = run(&[
        "render",
        "--matrix",
        plm.to_str().unwrap(),
        "--filters",
        plm.to_str().unwrap(),
        "--out",
        pgm.to_str().unwrap(),
    ]);
    assert_code(&out, 2, "render with two sources");
}

#[test]
fn render_filters_writes_one_image_per_kernel() {
    let tmp = tempfile::tempdir().unwrap();
    let arch = ArchSpec {
        base_channels: 4,
        depth: 2,
        ..ArchSpec::default()
    };
    let weights = ModelWeights::<f32>::init(arch, 3).unwrap();
    let plw = tmp.path().join("w.plw");
    save_weights(&weights, &plw).unwrap();

    let out_dir = tmp.path().join("filters");
    let out = run(&[
        "render",
        "--filters",
        plw.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--scale",
        "2",
    ]);
    assert_code(&out, 0, "render filters");
    let count = std::fs::read_dir(&out_dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "pgm")
        })
        .count();
    // One image per (input channel, first-layer kernel) pair.
    assert_eq!(count, 8 * 4);
}

#[test]
fn malformed_data_and_empty_splits_use_dedicated_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let maps = tmp.path().join("maps");
    write_maps(&maps, 1, 96);
    let ds = tmp.path().join("ds");
    synth(
        &maps,
        &ds,
        &["--n", "2", "--seed", "17", "--split", "train"],
    );

    let arch = ArchSpec {
        base_channels: 4,
        depth: 2,
        ..ArchSpec::default()
    };
    let weights = ModelWeights::<f32>::init(arch, 3).unwrap();
    let plw = tmp.path().join("w.plw");
    save_weights(&weights, &plw).unwrap();

    // Garbage tensor file: exit 4.
    let bad = tmp.path().join("bad.plt");
    std::fs::write(&bad, b"not a tensor at all").unwrap();
    let out = run(&[
        "predict",
        "--weights",
        plw.to_str().unwrap(),
        "--input",
        bad.to_str().unwrap(),
        "--out",
        tmp.path().join("x.plm").to_str().unwrap(),
    ]);
    assert_code(&out, 4, "predict on malformed tensor");

    // The dataset has no test samples: exit 5.
    let out = run(&[
        "eval",
        "--dataset",
        ds.to_str().unwrap(),
        "--weights",
        plw.to_str().unwrap(),
        "--split",
        "test",
    ]);
    assert_code(&out, 5, "eval on an empty split");
}

#[test]
fn gradcheck_reports_pass_and_respects_tolerance() {
    let out = run(&["gradcheck", "--num-params", "40"]);
    assert_code(&out, 0, "gradcheck");
    assert!(
        stdout_of(&out).contains("gradcheck PASS"),
        "missing PASS line:\n{}",
        stdout_of(&out)
    );

    // An absurdly tight tolerance must flip the exit code to 1, the
    // dedicated "tolerance breached" code.
    let out = run(&["gradcheck", "--num-params", "40", "--tol", "1e-16"]);
    assert_code(&out, 1, "gradcheck with impossible tolerance");
    assert!(stdout_of(&out).contains("gradcheck FAIL"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override_it() {
    let tmp = tempfile::tempdir().unwrap();
    let maps = tmp.path().join("maps");
    write_maps(&maps, 1, 96);

    let cfg = tmp.path().join("run.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"maps_dir": {:?}, "n_samples": 3, "patch": 32, "seed": 9}}"#,
            maps.to_str().unwrap()
        ),
    )
    .unwrap();

    // Everything but --out comes from the config file.
    let ds = tmp.path().join("ds_cfg");
    let out = run(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        ds.to_str().unwrap(),
    ]);
    assert_code(&out, 0, "synth from config");
    assert_eq!(manifest_sample_count(&ds), 3);

    // An explicit flag beats the config value.
    let ds2 = tmp.path().join("ds_flag");
    let out = run(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        ds2.to_str().unwrap(),
        "--n",
        "2",
    ]);
    assert_code(&out, 0, "synth with overriding flag");
    assert_eq!(manifest_sample_count(&ds2), 2);

    // A config file pointing nowhere is a config error.
    let out = run(&[
        "synth",
        "--config",
        tmp.path().join("missing.json").to_str().unwrap(),
        "--out",
        tmp.path().join("ds3").to_str().unwrap(),
    ]);
    assert_code(&out, 2, "missing config file");
}
