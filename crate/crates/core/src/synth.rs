//! Deterministic synthetic fixtures: fundus-like images with drawn
//! vessel trees (paired with exact masks) and grade-correlated lesion
//! patterns. Used by the test suite, the demo configuration, and the
//! golden-file checks — everything derives from (id, seed), so fixtures
//! never need to be committed except where byte-stability is the point.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::split::derive_seed;
use crate::error::{CoreResult, PipelineError};
use crate::imgio::{save_mask_png, save_rgb_png};
use crate::types::{FundusImage, SourceDataset, VesselMask};

/// Fundus-like vignette: a bright warm disk fading to a dark border.
fn background(h: usize, w: usize, brightness: f64) -> Array3<u8> {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let radius = 0.55 * h.min(w) as f64;
    Array3::from_shape_fn((h, w, 3), |(r, c, ch)| {
        let d = (((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt() / radius).min(1.4);
        let falloff = (1.0 - 0.55 * d * d).max(0.06);
        let channel_gain = match ch {
            0 => 1.0,
            1 => 0.62,
            _ => 0.38,
        };
        (brightness * falloff * channel_gain).round().clamp(0.0, 255.0) as u8
    })
}

/// Stamp a filled disk into the mask/image.
fn stamp(
    px: &mut Array3<u8>,
    mask: Option<&mut Array2<u8>>,
    row: f64,
    col: f64,
    radius: f64,
    color: [f64; 3],
) {
    let (h, w, _) = px.dim();
    let r0 = ((row - radius).floor().max(0.0)) as usize;
    let r1 = ((row + radius).ceil().min(h as f64 - 1.0)) as usize;
    let c0 = ((col - radius).floor().max(0.0)) as usize;
    let c1 = ((col + radius).ceil().min(w as f64 - 1.0)) as usize;
    let mut mask = mask;
    for r in r0..=r1 {
        for c in c0..=c1 {
            let d2 = (r as f64 - row).powi(2) + (c as f64 - col).powi(2);
            if d2 <= radius * radius {
                for ch in 0..3 {
                    px[[r, c, ch]] = color[ch].round().clamp(0.0, 255.0) as u8;
                }
                if let Some(m) = mask.as_deref_mut() {
                    m[[r, c]] = 1;
                }
            }
        }
    }
}

/// Draw one meandering dark vessel; marks the mask where it paints.
fn draw_vessel(
    px: &mut Array3<u8>,
    mask: &mut Array2<u8>,
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
) {
    let mut row = rng.gen_range(0.15 * h as f64..0.85 * h as f64);
    let mut col = rng.gen_range(0.15 * w as f64..0.85 * w as f64);
    let mut dir = rng.gen_range(0.0..std::f64::consts::TAU);
    let turn = Normal::new(0.0, 0.22).expect("positive std");
    let steps = (h + w) as usize;
    let radius = rng.gen_range(0.8..1.8);
    for _ in 0..steps {
        stamp(px, Some(mask), row, col, radius, [52.0, 26.0, 22.0]);
        dir += turn.sample(rng);
        row += dir.sin();
        col += dir.cos();
        if row < 2.0 || col < 2.0 || row > h as f64 - 3.0 || col > w as f64 - 3.0 {
            break;
        }
    }
}

/// A fundus-like image with a drawn vessel tree and its exact mask.
pub fn synth_vessel_pair(
    id: &str,
    h: usize,
    w: usize,
    seed: u64,
) -> CoreResult<(FundusImage, VesselMask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("vessel:{id}")));
    let mut px = background(h, w, 215.0);
    let mut mask = Array2::<u8>::zeros((h, w));
    let strokes = 5 + (h * w) / 16384;
    for _ in 0..strokes {
        draw_vessel(&mut px, &mut mask, &mut rng, h, w);
    }
    let image = FundusImage::new(id, px, SourceDataset::External, None)?;
    let mask = VesselMask::new(id, mask)?;
    Ok((image, mask))
}

/// A grade-correlated fundus: brightness tilt plus lesion counts that grow
/// with the grade (bright exudate blobs, dark microaneurysm dots), with a
/// few vessels so segmentation/cleaning has something to do.
pub fn synth_graded_image(
    id: &str,
    h: usize,
    w: usize,
    grade: u8,
    seed: u64,
) -> CoreResult<FundusImage> {
    if grade > 4 {
        return Err(PipelineError::Data(format!(
            "grade {grade} out of range for synthetic image '{id}'"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("graded:{id}")));
    let mut px = background(h, w, 150.0 + 18.0 * f64::from(grade));
    let mut scratch_mask = Array2::<u8>::zeros((h, w));
    for _ in 0..3 {
        draw_vessel(&mut px, &mut scratch_mask, &mut rng, h, w);
    }
    let g = usize::from(grade);
    for _ in 0..(g * 6) {
        let row = rng.gen_range(0.2 * h as f64..0.8 * h as f64);
        let col = rng.gen_range(0.2 * w as f64..0.8 * w as f64);
        stamp(&mut px, None, row, col, rng.gen_range(1.5..3.0), [250.0, 244.0, 180.0]);
    }
    for _ in 0..(g * 4) {
        let row = rng.gen_range(0.2 * h as f64..0.8 * h as f64);
        let col = rng.gen_range(0.2 * w as f64..0.8 * w as f64);
        stamp(&mut px, None, row, col, rng.gen_range(1.0..2.0), [25.0, 12.0, 10.0]);
    }
    FundusImage::new(id, px, SourceDataset::External, Some(grade))
}

/// Write `n` vessel pairs in the external on-disk layout
/// (`root/images/*.png`, `root/masks/*.png`). Returns the ids.
pub fn write_vessel_fixture(
    root: &Path,
    n: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> CoreResult<Vec<String>> {
    let images = root.join("images");
    let masks = root.join("masks");
    std::fs::create_dir_all(&images).map_err(|e| PipelineError::io(&images, e))?;
    std::fs::create_dir_all(&masks).map_err(|e| PipelineError::io(&masks, e))?;
    let mut ids = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("vessel_{i:03}");
        let (image, mask) = synth_vessel_pair(&id, h, w, seed)?;
        save_rgb_png(&images.join(format!("{id}.png")), &image.pixels)?;
        save_mask_png(&masks.join(format!("{id}.png")), &mask.pixels)?;
        ids.push(id);
    }
    Ok(ids)
}

/// Write a balanced grading fixture: `per_grade` images of every grade
/// plus a labels CSV (`id_code,diagnosis`). Returns the CSV path.
pub fn write_grading_fixture(
    root: &Path,
    per_grade: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> CoreResult<PathBuf> {
    std::fs::create_dir_all(root).map_err(|e| PipelineError::io(root, e))?;
    let csv_path = root.join("labels.csv");
    let mut csv = String::from("id_code,diagnosis\n");
    for grade in 0u8..5 {
        for i in 0..per_grade {
            let id = format!("g{grade}_{i:03}");
            let image = synth_graded_image(&id, h, w, grade, seed)?;
            save_rgb_png(&root.join(format!("{id}.png")), &image.pixels)?;
            csv.push_str(&format!("{id},{grade}\n"));
        }
    }
    std::fs::write(&csv_path, csv).map_err(|e| PipelineError::io(&csv_path, e))?;
    Ok(csv_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{load_aptos, load_vessel_dataset};

    #[test]
    fn vessel_pair_is_deterministic_and_marked() {
        let (a_img, a_mask) = synth_vessel_pair("x", 96, 96, 7).unwrap();
        let (b_img, b_mask) = synth_vessel_pair("x", 96, 96, 7).unwrap();
        assert_eq!(a_img.pixels, b_img.pixels);
        assert_eq!(a_mask.pixels, b_mask.pixels);
        let vessel_px = a_mask.pixels.iter().filter(|&&m| m == 1).count();
        assert!(vessel_px > 200, "only {vessel_px} vessel pixels drawn");
        // Vessels are dark against the background in the red channel.
        let (mut on, mut n_on, mut off, mut n_off) = (0.0, 0u64, 0.0, 0u64);
        for r in 0..96 {
            for c in 0..96 {
                let v = f64::from(a_img.pixels[[r, c, 0]]);
                if a_mask.pixels[[r, c]] == 1 {
                    on += v;
                    n_on += 1;
                } else {
                    off += v;
                    n_off += 1;
                }
            }
        }
        assert!(on / n_on as f64 + 40.0 < off / n_off as f64);
        let (c_img, _) = synth_vessel_pair("x", 96, 96, 8).unwrap();
        assert_ne!(a_img.pixels, c_img.pixels);
    }

    #[test]
    fn graded_images_separate_by_construction() {
        let g0 = synth_graded_image("a", 64, 64, 0, 3).unwrap();
        let g4 = synth_graded_image("b", 64, 64, 4, 3).unwrap();
        let mean = |im: &FundusImage| {
            im.pixels.iter().map(|&v| f64::from(v)).sum::<f64>() / im.pixels.len() as f64
        };
        assert!(mean(&g4) > mean(&g0) + 5.0, "grades not separable");
        assert!(synth_graded_image("c", 8, 8, 9, 0).is_err());
    }

    #[test]
    fn fixtures_round_trip_through_the_loaders() {
        let dir = tempfile::tempdir().unwrap();
        let vroot = dir.path().join("vessels");
        let ids = write_vessel_fixture(&vroot, 3, 64, 64, 5).unwrap();
        assert_eq!(ids.len(), 3);
        let pairs = load_vessel_dataset(&vroot, SourceDataset::External).unwrap();
        assert_eq!(pairs.len(), 3);
        let (orig_img, orig_mask) = synth_vessel_pair(&ids[0], 64, 64, 5).unwrap();
        assert_eq!(pairs[0].0.pixels, orig_img.pixels);
        assert_eq!(pairs[0].1.pixels, orig_mask.pixels);

        let groot = dir.path().join("grading");
        let csv = write_grading_fixture(&groot, 2, 48, 48, 5).unwrap();
        let images = load_aptos(&groot, &csv).unwrap();
        assert_eq!(images.len(), 10);
        let mut counts = [0usize; 5];
        for im in &images {
            counts[im.grade.unwrap() as usize] += 1;
        }
        assert_eq!(counts, [2, 2, 2, 2, 2]);
    }
}
