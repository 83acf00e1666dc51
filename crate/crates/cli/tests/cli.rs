use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use regformer::data::{load_image, rgb_to_y, save_image, write_manifest, Image, RainParams};
use regformer::model::init_params;
use regformer_cli::checkpoint::Checkpoint;
use regformer_cli::infer::{cmd_eval, cmd_infer, cmd_mask_dump, load_model, mask_file_names};
use regformer_cli::synth::{cmd_synth_data, CleanSource, MANIFEST};
use regformer_cli::train::{
    checkpoint_name, run_training, TrainOptions, FINAL_CHECKPOINT, LOG_FILE,
};
use regformer_cli::{CliError, RunConfig};
use tempfile::TempDir;

fn tiny_config(dir: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.model.base_channels = 4;
    c.model.blocks = [1; 4];
    c.model.heads = [1; 4];
    c.patch_size = 16;
    c.total_steps = 20;
    c.checkpoint_interval = 10;
    c.out_dir = dir.join("run");
    c
}

fn synth(dir: &Path, count: usize, size: usize) -> PathBuf {
    cmd_synth_data(
        &CleanSource::Procedural { count, size },
        &RainParams::default(),
        5,
        &dir.join("data"),
    )
    .unwrap()
}

fn zero_checkpoint(cfg: &RunConfig, path: &Path) {
    let mut params = init_params(&cfg.model, 0).unwrap();
    params.zero_all();
    Checkpoint {
        config: cfg.clone(),
        step: 0,
        params,
        optim: None,
    }
    .save(path)
    .unwrap();
}

fn gradient_image(w: usize, h: usize) -> Image {
    let data = (0..w * h)
        .flat_map(|i| {
            let (x, y) = (i % w, i / w);
            [(x * 6) as u8, (y * 5) as u8, ((x + y) * 3) as u8]
        })
        .collect();
    Image::new(w, h, data).unwrap()
}

#[test]
fn resumed_run_matches_uninterrupted_run_bitwise() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth(tmp.path(), 3, 24);

    let mut full = tiny_config(tmp.path());
    full.train_manifest = Some(manifest.clone());
    full.out_dir = tmp.path().join("full");
    run_training(&full, &TrainOptions::default()).unwrap();

    let mut split = full.clone();
    split.out_dir = tmp.path().join("split");
    let first = run_training(
        &split,
        &TrainOptions {
            stop_after: Some(10),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(first.steps_done, 10);
    assert_eq!(first.checkpoint, split.out_dir.join(checkpoint_name(10)));
    assert!(!split.out_dir.join(FINAL_CHECKPOINT).exists());
    run_training(
        &split,
        &TrainOptions {
            resume: Some(first.checkpoint),
            ..Default::default()
        },
    )
    .unwrap();

    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    let full_ck = read(&full.out_dir, FINAL_CHECKPOINT);
    let split_ck = read(&split.out_dir, FINAL_CHECKPOINT);
    // The embedded config echoes out_dir, so compare everything past it.
    let a = Checkpoint::from_bytes(&full_ck).unwrap();
    let b = Checkpoint::from_bytes(&split_ck).unwrap();
    assert_eq!(a.step, 20);
    assert_eq!(a.params, b.params);
    assert_eq!(a.optim, b.optim);
    let log_a = read(&full.out_dir, LOG_FILE);
    let log_b = read(&split.out_dir, LOG_FILE);
    assert_eq!(log_a, log_b);
    assert_eq!(String::from_utf8(log_a).unwrap().lines().count(), 21);
}

#[test]
fn training_log_starts_at_lr0_and_stays_finite() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = tiny_config(tmp.path());
    cfg.train_manifest = Some(synth(tmp.path(), 2, 16));
    cfg.total_steps = 6;
    run_training(&cfg, &TrainOptions::default()).unwrap();
    let log = fs::read_to_string(cfg.out_dir.join(LOG_FILE)).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("step,lr,loss"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0][1], 3e-4);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], i as f64);
        assert!(r[2].is_finite() && r[2] > 0.0);
    }
}

#[test]
fn checkpoint_load_then_save_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = tiny_config(tmp.path());
    cfg.train_manifest = Some(synth(tmp.path(), 2, 16));
    cfg.total_steps = 3;
    let summary = run_training(&cfg, &TrainOptions::default()).unwrap();
    let bytes = fs::read(&summary.checkpoint).unwrap();
    let resaved = tmp.path().join("again.ckpt");
    Checkpoint::load(&summary.checkpoint)
        .unwrap()
        .save(&resaved)
        .unwrap();
    assert_eq!(fs::read(&resaved).unwrap(), bytes);

    let zero = tmp.path().join("zero.ckpt");
    zero_checkpoint(&cfg, &zero);
    let again = tmp.path().join("zero2.ckpt");
    Checkpoint::load(&zero).unwrap().save(&again).unwrap();
    assert_eq!(fs::read(&zero).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn corrupt_or_mismatched_checkpoints_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    let path = tmp.path().join("zero.ckpt");
    zero_checkpoint(&cfg, &path);

    let mut other = cfg.clone();
    other.model.heads = [2, 1, 1, 1];
    other.model.use_bg_mask = false;
    match load_model(&path, Some(&other)) {
        Err(CliError::ConfigMismatch(keys)) => assert_eq!(keys, vec!["heads", "use_bg_mask"]),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("mismatch accepted"),
    }
    let mut run_only = cfg.clone();
    run_only.seed = 77;
    run_only.lr0 = 1e-3;
    assert!(load_model(&path, Some(&run_only)).is_ok());

    let mut bytes = fs::read(&path).unwrap();
    bytes[1] = b'?';
    let bad = tmp.path().join("bad.ckpt");
    fs::write(&bad, &bytes).unwrap();
    assert!(matches!(
        load_model(&bad, None),
        Err(CliError::Checkpoint(_))
    ));

    let mut wrong = cfg.clone();
    wrong.model.base_channels = 6;
    let ck = Checkpoint::load(&path).unwrap();
    let forged = Checkpoint {
        config: wrong,
        ..ck
    }
    .to_bytes();
    fs::write(&bad, forged).unwrap();
    let err = load_model(&bad, None).err().expect("layout mismatch");
    assert!(err.to_string().contains("shape"), "{err}");
}

#[test]
fn zero_weight_inference_is_identity_on_odd_sizes() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    let ck = tmp.path().join("zero.ckpt");
    zero_checkpoint(&cfg, &ck);
    let model = load_model(&ck, None).unwrap();
    for (w, h) in [(41, 37), (8, 8), (13, 29)] {
        let img = gradient_image(w, h);
        let input = tmp.path().join(format!("in_{w}x{h}.png"));
        let output = tmp.path().join(format!("out_{w}x{h}.ppm"));
        save_image(&img, &input).unwrap();
        cmd_infer(&model, &input, &output).unwrap();
        let out = load_image(&output).unwrap();
        assert_eq!((out.width(), out.height()), (w, h));
        assert_eq!(out.data(), img.data());
    }
}

#[test]
fn eval_rows_mean_and_missing_files() {
    let tmp = TempDir::new().unwrap();
    let cfg = tiny_config(tmp.path());
    let ck = tmp.path().join("zero.ckpt");
    zero_checkpoint(&cfg, &ck);
    let model = load_model(&ck, None).unwrap();

    let dir = tmp.path().join("pairs");
    fs::create_dir_all(&dir).unwrap();
    let mut entries = Vec::new();
    for i in 0..3 {
        let name = format!("{i}.png");
        save_image(&gradient_image(16 + i, 16), &dir.join(&name)).unwrap();
        entries.push((name.clone(), name));
    }
    let same = dir.join("same.txt");
    write_manifest(&same, &entries).unwrap();
    let csv_path = tmp.path().join("same.csv");
    let report = cmd_eval(&model, &same, &csv_path).unwrap();
    let csv = fs::read_to_string(&csv_path).unwrap();
    let rows: Vec<&str> = csv
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .collect();
    assert_eq!(rows.len(), 3 + 1);
    for row in &rows[..3] {
        assert!(row.ends_with(",inf,1"), "{row}");
    }
    assert_eq!(report.entries.len(), 3);

    // Distinct rainy images give finite rows; MEAN is their plain average.
    let mut mixed = entries.clone();
    let shifted = gradient_image(16, 16);
    let mut noisy = shifted.clone();
    noisy.set_pixel(3, 3, [250, 0, 10]);
    noisy.set_pixel(9, 12, [0, 255, 0]);
    save_image(&noisy, &dir.join("noisy.png")).unwrap();
    mixed[0].1 = "noisy.png".into();
    let mut brighter = gradient_image(17, 16);
    brighter.set_pixel(0, 0, [255, 255, 255]);
    save_image(&brighter, &dir.join("bright.png")).unwrap();
    mixed[1].1 = "bright.png".into();
    let mixed_path = dir.join("mixed.txt");
    write_manifest(&mixed_path, &mixed).unwrap();
    let csv = fs::read_to_string({
        let p = tmp.path().join("mixed.csv");
        cmd_eval(&model, &mixed_path, &p).unwrap();
        p
    })
    .unwrap();
    let mut finite = Vec::new();
    let mut mean_row = None;
    for line in csv.lines().skip(1).filter(|l| !l.starts_with('#')) {
        let f: Vec<&str> = line.split(',').collect();
        if f[0] == "MEAN" {
            mean_row = Some(f[1].parse::<f64>().unwrap());
        } else if f[1] != "inf" {
            finite.push(f[1].parse::<f64>().unwrap());
        }
    }
    assert_eq!(finite.len(), 2);
    let expected = finite.iter().sum::<f64>() / 2.0;
    assert!((mean_row.unwrap() - expected).abs() < 1e-9);
    assert!(csv.contains("# MEAN psnr_db excludes 1 row(s)"));

    let mut broken = entries;
    broken[2].0 = "nowhere.png".into();
    let broken_path = dir.join("broken.txt");
    write_manifest(&broken_path, &broken).unwrap();
    match cmd_eval(&model, &broken_path, &tmp.path().join("b.csv")) {
        Err(CliError::MissingFiles(f)) => {
            assert_eq!(f.len(), 1);
            assert!(f[0].ends_with("nowhere.png"));
        }
        other => panic!("expected missing files, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn mask_dump_writes_complementary_masks() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = tiny_config(tmp.path());
    cfg.model.rtc_per_decoder_level = 2;
    let input = tmp.path().join("in.png");
    save_image(&gradient_image(21, 19), &input).unwrap();

    let ck = tmp.path().join("zero.ckpt");
    zero_checkpoint(&cfg, &ck);
    let zero = load_model(&ck, None).unwrap();
    let files = cmd_mask_dump(&zero, &input, &tmp.path().join("zero")).unwrap();
    assert_eq!(files.len(), 3 * 2 * 2 + 1);
    for level in 0..3 {
        for rtc in 0..2 {
            let (r, u) = mask_file_names(level, rtc);
            let r = image::open(tmp.path().join("zero").join(r))
                .unwrap()
                .to_luma8();
            let u = image::open(tmp.path().join("zero").join(u))
                .unwrap()
                .to_luma8();
            assert_eq!(
                r.dimensions(),
                (21u32.div_ceil(1 << level), 19u32.div_ceil(1 << level))
            );
            assert!(r.pixels().all(|p| p.0[0] == 0));
            assert!(u.pixels().all(|p| p.0[0] == 255));
        }
    }

    let ck = tmp.path().join("rand.ckpt");
    Checkpoint {
        config: cfg.clone(),
        step: 0,
        params: init_params(&cfg.model, 11).unwrap(),
        optim: None,
    }
    .save(&ck)
    .unwrap();
    let model = load_model(&ck, None).unwrap();
    let out = tmp.path().join("rand");
    cmd_mask_dump(&model, &input, &out).unwrap();
    let mut any_rain = false;
    for level in 0..3 {
        for rtc in 0..2 {
            let (r, u) = mask_file_names(level, rtc);
            let r = image::open(out.join(r)).unwrap().to_luma8();
            let u = image::open(out.join(u)).unwrap().to_luma8();
            for (a, b) in r.pixels().zip(u.pixels()) {
                assert!(matches!(a.0[0], 0 | 255));
                assert_eq!(a.0[0] as u16 + b.0[0] as u16, 255);
                any_rain |= a.0[0] == 255;
            }
        }
    }
    assert!(any_rain);
    let gains = fs::read_to_string(out.join("gains.txt")).unwrap();
    assert_eq!(gains.lines().filter(|l| !l.starts_with('#')).count(), 6);
}

#[test]
fn synth_data_is_deterministic_and_complete() {
    let tmp = TempDir::new().unwrap();
    let source = CleanSource::Procedural { count: 3, size: 24 };
    let params = RainParams::default();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    cmd_synth_data(&source, &params, 9, &a).unwrap();
    cmd_synth_data(&source, &params, 9, &b).unwrap();
    for rel in [
        "manifest.txt",
        "clean/0001.png",
        "rainy/0001.png",
        "rainy/0002.png",
    ] {
        assert_eq!(
            fs::read(a.join(rel)).unwrap(),
            fs::read(b.join(rel)).unwrap(),
            "{rel}"
        );
    }

    // A directory of N clean images gives N manifest lines; no streaks
    // means identical pairs.
    let clean = tmp.path().join("clean_in");
    fs::create_dir_all(&clean).unwrap();
    for i in 0..5 {
        save_image(
            &gradient_image(10 + i, 12),
            &clean.join(format!("img{i}.ppm")),
        )
        .unwrap();
    }
    fs::write(clean.join("notes.txt"), "not an image").unwrap();
    let dry = RainParams {
        streak_count: 0,
        ..RainParams::default()
    };
    let out = tmp.path().join("dry");
    let manifest = cmd_synth_data(&CleanSource::Dir(clean), &dry, 1, &out).unwrap();
    assert_eq!(manifest, out.join(MANIFEST));
    let text = fs::read_to_string(&manifest).unwrap();
    assert_eq!(text.lines().count(), 5);
    for line in text.lines() {
        let (c, r) = line.split_once('\t').unwrap();
        assert_eq!(
            load_image(&out.join(c)).unwrap(),
            load_image(&out.join(r)).unwrap()
        );
    }

    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    assert!(cmd_synth_data(&CleanSource::Dir(empty), &params, 1, &tmp.path().join("e")).is_err());
}

#[test]
fn rain_changes_luma() {
    let tmp = TempDir::new().unwrap();
    let manifest = synth(tmp.path(), 2, 32);
    let text = fs::read_to_string(&manifest).unwrap();
    let base = manifest.parent().unwrap();
    for line in text.lines() {
        let (c, r) = line.split_once('\t').unwrap();
        let (yc, yr) = (
            rgb_to_y(&load_image(&base.join(c)).unwrap()),
            rgb_to_y(&load_image(&base.join(r)).unwrap()),
        );
        let brighter = yc.data.iter().zip(&yr.data).filter(|(a, b)| b > a).count();
        let darker = yc.data.iter().zip(&yr.data).filter(|(a, b)| b < a).count();
        assert!(brighter > 0);
        assert_eq!(darker, 0, "additive rain never darkens");
    }
}

#[test]
fn exploding_learning_rate_aborts_with_diagnostic() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = tiny_config(tmp.path());
    cfg.train_manifest = Some(synth(tmp.path(), 2, 16));
    cfg.lr0 = 1e300;
    cfg.lr_min = 1e300;
    cfg.total_steps = 5;
    let err = run_training(&cfg, &TrainOptions::default()).unwrap_err();
    assert!(err.to_string().contains("non-finite"), "{err}");
}

#[test]
fn training_needs_pairs() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = tiny_config(tmp.path());
    let manifest = tmp.path().join("m.txt");
    fs::write(&manifest, "# nothing\n").unwrap();
    cfg.train_manifest = Some(manifest);
    assert!(run_training(&cfg, &TrainOptions::default()).is_err());
    cfg.train_manifest = None;
    assert!(run_training(&cfg, &TrainOptions::default()).is_err());
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_regformer"))
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let code = |c: &mut Command| c.output().unwrap().status.code();
    assert_eq!(code(bin().arg("--help")), Some(0));
    assert_eq!(code(bin().arg("frobnicate")), Some(1));
    assert_eq!(code(bin().args(["infer", "--input", "x.png"])), Some(1));
    assert_eq!(code(bin().args(["train", "--seed", "abc"])), Some(1));
    assert_eq!(
        code(bin().args([
            "infer",
            "--checkpoint",
            "/nonexistent.ckpt",
            "--input",
            "x.png"
        ])),
        Some(2)
    );
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "learning_rate = 1\n").unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    let data = tmp.path().join("d");
    let out = bin()
        .args([
            "synth-data",
            "--scenes",
            "2",
            "--size",
            "16",
            "--seed",
            "4",
            "--out",
        ])
        .arg(&data)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        fs::read_to_string(data.join(MANIFEST))
            .unwrap()
            .lines()
            .count(),
        2
    );
}
