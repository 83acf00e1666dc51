mod common;

use std::collections::HashSet;
use std::fs;

use proptest::prelude::*;
use rand::Rng;
use regformer::data::{
    clean_scene, load_image, patch_origin, rain_layer, read_manifest, rgb_to_y, sample_patch,
    save_image, synth_rain, synth_rain_with_layer, write_manifest, DataError, Image, RainParams,
};

fn random_image(w: usize, h: usize, seed: u64) -> Image {
    let mut r = common::rng(seed);
    Image::new(w, h, (0..w * h * 3).map(|_| r.gen()).collect()).unwrap()
}

#[test]
fn png_and_ppm_round_trip_losslessly() {
    let dir = tempfile::tempdir().unwrap();
    let img = random_image(16, 16, 1);
    for name in ["a.png", "b.ppm"] {
        let p = dir.path().join(name);
        save_image(&img, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);
    }
}

#[test]
fn hand_written_p6() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.ppm");
    let mut bytes = b"P6 2 2 255\n".to_vec();
    bytes.extend(0u8..12);
    fs::write(&p, bytes).unwrap();
    let img = load_image(&p).unwrap();
    assert_eq!((img.width(), img.height()), (2, 2));
    assert_eq!(img.pixel(1, 1), [9, 10, 11]);
}

#[test]
fn truncated_and_sixteen_bit_files_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("g.png");
    save_image(&random_image(8, 8, 2), &good).unwrap();
    let bytes = fs::read(&good).unwrap();
    let cut = dir.path().join("cut.png");
    fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_image(&cut), Err(DataError::Decode { .. })));

    let deep = dir.path().join("deep.ppm");
    let mut b = b"P6 1 1 65535\n".to_vec();
    b.extend([0u8; 6]);
    fs::write(&deep, b).unwrap();
    assert!(matches!(
        load_image(&deep),
        Err(DataError::UnsupportedDepth { .. })
    ));

    assert!(matches!(
        load_image(&dir.path().join("none.png")),
        Err(DataError::Io { .. })
    ));
}

#[test]
fn zero_streaks_leave_image_unchanged() {
    let img = clean_scene(24, 24, 3);
    let p = RainParams {
        streak_count: 0,
        ..RainParams::default()
    };
    assert_eq!(synth_rain(&img, &p, 9).unwrap(), img);
}

#[test]
fn rain_is_deterministic_and_additive() {
    let img = clean_scene(32, 32, 4);
    let p = RainParams::default();
    let a = synth_rain(&img, &p, 5).unwrap();
    assert_eq!(a, synth_rain(&img, &p, 5).unwrap());
    assert_ne!(a, synth_rain(&img, &p, 6).unwrap());
    assert!(a.data().iter().zip(img.data()).all(|(r, c)| r >= c));
}

#[test]
fn single_vertical_streak_rasterizes_to_a_band() {
    let black = Image::filled(8, 8, [0, 0, 0]).unwrap();
    for (seed, length, width) in [
        (1u64, 4.0, 1.0),
        (2, 6.0, 1.0),
        (3, 5.0, 2.0),
        (4, 8.0, 3.0),
    ] {
        let p = RainParams {
            streak_count: 1,
            length: (length, length),
            angle_deg: (0.0, 0.0),
            width,
            intensity: (1.0, 1.0),
            blur_sigma: 0.0,
        };
        let rainy = synth_rain(&black, &p, seed).unwrap();
        let lit: Vec<(usize, usize)> = (0..8)
            .flat_map(|y| (0..8).map(move |x| (x, y)))
            .filter(|&(x, y)| rainy.pixel(x, y) != [0, 0, 0])
            .collect();
        let count = lit.len() as f64;
        assert!(
            count >= length && count <= length * width * 3.0,
            "{count} pixels"
        );
        let cols: HashSet<usize> = lit.iter().map(|p| p.0).collect();
        let rows: HashSet<usize> = lit.iter().map(|p| p.1).collect();
        assert!(cols.len() <= width as usize);
        let (lo, hi) = (*rows.iter().min().unwrap(), *rows.iter().max().unwrap());
        assert_eq!(rows.len(), hi - lo + 1, "rows must be contiguous");
    }
}

#[test]
fn rain_layer_is_bounded() {
    let l = rain_layer(20, 12, &RainParams::default(), 3).unwrap();
    assert!(l.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(l.data.iter().any(|&v| v > 0.0));
}

#[test]
fn whole_image_patch_and_seed_determinism() {
    let c = random_image(12, 12, 7);
    let r = random_image(12, 12, 8);
    assert_eq!(sample_patch(&c, &r, 12, 1).unwrap(), (c.clone(), r.clone()));
    assert_eq!(
        sample_patch(&c, &r, 5, 3).unwrap(),
        sample_patch(&c, &r, 5, 3).unwrap()
    );
    assert!(matches!(
        sample_patch(&c, &r, 13, 0),
        Err(DataError::PatchTooLarge { .. })
    ));
}

/// 1000 uniform draws over 33×33 cells hit about 1089·(1 − e^(−1000/1089))
/// ≈ 654 distinct cells, so 90% joint coverage is out of reach for a
/// uniform sampler at that count. Checked instead: each axis is covered to
/// 90% after 1000 draws, the joint count is near its uniform expectation,
/// and the joint grid is covered to 90% after 10000 draws.
#[test]
fn patch_origins_cover_the_valid_grid() {
    let mut rng = common::rng(9);
    let draws: Vec<(usize, usize)> = (0..10_000)
        .map(|_| {
            let p = patch_origin(64, 64, 32, &mut rng).unwrap();
            (p.x, p.y)
        })
        .collect();
    assert!(draws.iter().all(|&(x, y)| x <= 32 && y <= 32));
    let first = &draws[..1000];
    let xs: HashSet<usize> = first.iter().map(|p| p.0).collect();
    let ys: HashSet<usize> = first.iter().map(|p| p.1).collect();
    assert!(xs.len() as f64 >= 0.9 * 33.0 && ys.len() as f64 >= 0.9 * 33.0);

    let cells: f64 = 33.0 * 33.0;
    let expected = cells * (1.0 - (-1000.0 / cells).exp());
    let joint: HashSet<_> = first.iter().collect();
    assert!(
        (joint.len() as f64 - expected).abs() <= 0.1 * expected,
        "{} vs {expected}",
        joint.len()
    );

    let all: HashSet<_> = draws.iter().collect();
    assert!(all.len() as f64 >= 0.9 * cells, "{} of 1089", all.len());
}

#[test]
fn patches_stay_paired() {
    // Coordinate watermark: red = x, green = y in the clean image and
    // (x, y) swapped in the rainy one.
    let mut clean = Image::filled(40, 30, [0, 0, 0]).unwrap();
    let mut rainy = clean.clone();
    for y in 0..30 {
        for x in 0..40 {
            clean.set_pixel(x, y, [x as u8, y as u8, 0]);
            rainy.set_pixel(x, y, [y as u8, x as u8, 1]);
        }
    }
    for seed in 0..50 {
        let (c, r) = sample_patch(&clean, &rainy, 8, seed).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let [cx, cy, _] = c.pixel(x, y);
                assert_eq!(r.pixel(x, y), [cy, cx, 1]);
            }
        }
    }
}

#[test]
fn manifest_round_trip_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("pairs.txt");
    write_manifest(
        &m,
        &[
            ("c/0.png".into(), "r/0.png".into()),
            ("c/1.png".into(), "r/1.png".into()),
        ],
    )
    .unwrap();
    let pairs = read_manifest(&m).unwrap();
    assert_eq!(pairs.len(), 2);
    assert_eq!(pairs[1].clean, dir.path().join("c/1.png"));
}

#[test]
fn scenes_are_deterministic_and_varied() {
    assert_eq!(clean_scene(32, 32, 1), clean_scene(32, 32, 1));
    assert_ne!(clean_scene(32, 32, 1), clean_scene(32, 32, 2));
}

#[test]
fn rain_layer_ground_truth_matches_changed_pixels() {
    let img = Image::filled(32, 32, [40, 40, 40]).unwrap();
    let (rainy, layer) = synth_rain_with_layer(&img, &RainParams::default(), 11).unwrap();
    for (i, &a) in layer.data.iter().enumerate() {
        let changed = rainy.data()[3 * i] != 40;
        assert_eq!(changed, (a * 255.0).round() >= 1.0);
    }
}

proptest! {
    #[test]
    fn luma_is_monotone_in_gray(a in 0u8..=255, b in 0u8..=255) {
        let ya = rgb_to_y(&Image::filled(1, 1, [a, a, a]).unwrap()).data[0];
        let yb = rgb_to_y(&Image::filled(1, 1, [b, b, b]).unwrap()).data[0];
        prop_assert_eq!(a.cmp(&b), ya.partial_cmp(&yb).unwrap());
    }

    #[test]
    fn rain_never_darkens(seed in 0u64..500, count in 0usize..40) {
        let img = clean_scene(16, 16, seed);
        let p = RainParams { streak_count: count, ..RainParams::default() };
        let r = synth_rain(&img, &p, seed).unwrap();
        prop_assert!(r.data().iter().zip(img.data()).all(|(a, b)| a >= b));
    }
}
