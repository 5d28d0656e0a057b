//! Golden-file stability for the cleaning cascade. The input pair is
//! synthesized deterministically; only the expected output PNG is
//! committed. It was generated by the brute-force oracle below (dense
//! window means, full cascade, mask replacement) — run with
//! REGEN_GOLDEN=1 to rebuild it — and the test then requires the
//! production implementation to reproduce it byte-for-byte.

use fundus_core::cleaner::{clean_image, CleanConfig, Padding};
use fundus_core::imgio::load_rgb;
use fundus_core::synth::synth_vessel_pair;
use ndarray::{Array2, Array3};

const GOLDEN_SEED: u64 = 61893;
const GOLDEN_SIZE: usize = 96;

fn golden_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_cleaned.png")
}

fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Dense O(k²)-per-pixel windowed mean, anchor (k/2, k/2), reflect border.
fn brute_box(plane: &Array2<f64>, k: usize) -> Array2<f64> {
    let (h, w) = plane.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        let rlo = r as isize - (k / 2) as isize;
        let clo = c as isize - (k / 2) as isize;
        let mut sum = 0.0;
        for i in rlo..rlo + k as isize {
            for j in clo..clo + k as isize {
                sum += plane[[reflect(i, h), reflect(j, w)]];
            }
        }
        sum / (k * k) as f64
    })
}

/// Oracle cleaning: cascade of brute-force box means, then replacement.
fn oracle_clean(px: &Array3<u8>, mask: &Array2<u8>, filters: &[usize]) -> Array3<u8> {
    let (h, w, _) = px.dim();
    let mut out = px.clone();
    for ch in 0..3 {
        let mut plane = Array2::from_shape_fn((h, w), |(r, c)| f64::from(px[[r, c, ch]]));
        for &k in filters {
            plane = brute_box(&plane, k);
        }
        for r in 0..h {
            for c in 0..w {
                if mask[[r, c]] == 1 {
                    out[[r, c, ch]] = plane[[r, c]].round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    out
}

#[test]
fn golden_cleaned_image_is_stable() {
    let (image, mask) = synth_vessel_pair("golden", GOLDEN_SIZE, GOLDEN_SIZE, GOLDEN_SEED).unwrap();
    let path = golden_path();

    if std::env::var("REGEN_GOLDEN").is_ok() {
        let golden = oracle_clean(&image.pixels, &mask.pixels, &[4, 16, 32, 64]);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        fundus_core::imgio::save_rgb_png(&path, &golden).unwrap();
        eprintln!("regenerated {}", path.display());
    }

    let golden = load_rgb(&path).expect("golden fixture missing; run with REGEN_GOLDEN=1");
    let cleaned = clean_image(&image, &mask, &CleanConfig::default()).unwrap();
    assert_eq!(
        cleaned.pixels, golden,
        "production cleaner no longer matches the committed golden output"
    );
}

#[test]
fn golden_pins_the_ascending_cascade_order() {
    let (image, mask) = synth_vessel_pair("golden", GOLDEN_SIZE, GOLDEN_SIZE, GOLDEN_SEED).unwrap();
    let golden = load_rgb(&golden_path()).expect("golden fixture missing; run with REGEN_GOLDEN=1");
    let reversed = CleanConfig {
        filter_sizes: vec![64, 32, 16, 4],
        padding: Padding::Reflect,
    };
    let cleaned = clean_image(&image, &mask, &reversed).unwrap();
    assert_ne!(
        cleaned.pixels, golden,
        "reversed cascade unexpectedly reproduces the golden file"
    );
}
