//! Vessel removal: replace masked pixels with a cascade-box-blurred
//! background. Each channel is blurred by consecutive k×k mean filters
//! (default k = 4, 16, 32, 64, each applied to the running blur), then
//! mask==1 pixels take the blurred value while mask==0 pixels keep their
//! exact input bytes. All blur math is f64; quantization happens once.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{CoreResult, PipelineError};
use crate::types::{FundusImage, VesselMask};
use crate::util::{quantize_u8, reflect_index};

/// Border handling for the box filters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Padding {
    Reflect,
    Zero,
}

/// Cascade configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanConfig {
    /// Kernel sizes applied in order, each to the output of the previous.
    pub filter_sizes: Vec<usize>,
    pub padding: Padding,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            filter_sizes: vec![4, 16, 32, 64],
            padding: Padding::Reflect,
        }
    }
}

impl CleanConfig {
    /// Reject empty or degenerate filter cascades.
    pub fn validate(&self) -> CoreResult<()> {
        if self.filter_sizes.is_empty() {
            return Err(PipelineError::Config(
                "filter_sizes must not be empty".into(),
            ));
        }
        if let Some(&bad) = self.filter_sizes.iter().find(|&&k| k == 0) {
            return Err(PipelineError::Config(format!(
                "filter sizes must be >= 1, got {bad}"
            )));
        }
        Ok(())
    }
}

/// Window along one axis for kernel size k anchored at (k/2): indices
/// [i - k/2, i + k - 1 - k/2].
#[inline]
fn window(i: usize, k: usize) -> (isize, isize) {
    let lo = i as isize - (k / 2) as isize;
    (lo, lo + k as isize - 1)
}

/// One-dimensional box pass over every row of `plane` (divide by k).
fn box_pass_rows(plane: &Array2<f64>, k: usize, padding: Padding) -> Array2<f64> {
    let (h, w) = plane.dim();
    let mut out = Array2::<f64>::zeros((h, w));
    let inv = 1.0 / k as f64;
    for r in 0..h {
        // Sliding sum: start from the window of column 0, then update.
        let (lo0, hi0) = window(0, k);
        let mut sum = 0.0;
        for j in lo0..=hi0 {
            sum += sample_1d(plane, r, j, w, padding);
        }
        out[[r, 0]] = sum * inv;
        for c in 1..w {
            let (lo_prev, _) = window(c - 1, k);
            let (_, hi_cur) = window(c, k);
            sum += sample_1d(plane, r, hi_cur, w, padding);
            sum -= sample_1d(plane, r, lo_prev, w, padding);
            out[[r, c]] = sum * inv;
        }
    }
    out
}

#[inline]
fn sample_1d(plane: &Array2<f64>, r: usize, j: isize, w: usize, padding: Padding) -> f64 {
    match padding {
        Padding::Reflect => plane[[r, reflect_index(j, w)]],
        Padding::Zero => {
            if j < 0 || j >= w as isize {
                0.0
            } else {
                plane[[r, j as usize]]
            }
        }
    }
}

#[inline]
fn sample_1d_col(plane: &Array2<f64>, i: isize, c: usize, h: usize, padding: Padding) -> f64 {
    match padding {
        Padding::Reflect => plane[[reflect_index(i, h), c]],
        Padding::Zero => {
            if i < 0 || i >= h as isize {
                0.0
            } else {
                plane[[i as usize, c]]
            }
        }
    }
}

fn box_pass_cols(plane: &Array2<f64>, k: usize, padding: Padding) -> Array2<f64> {
    let (h, w) = plane.dim();
    let mut out = Array2::<f64>::zeros((h, w));
    let inv = 1.0 / k as f64;
    for c in 0..w {
        let (lo0, hi0) = window(0, k);
        let mut sum = 0.0;
        for i in lo0..=hi0 {
            sum += sample_1d_col(plane, i, c, h, padding);
        }
        out[[0, c]] = sum * inv;
        for r in 1..h {
            let (lo_prev, _) = window(r - 1, k);
            let (_, hi_cur) = window(r, k);
            sum += sample_1d_col(plane, hi_cur, c, h, padding);
            sum -= sample_1d_col(plane, lo_prev, c, h, padding);
            out[[r, c]] = sum * inv;
        }
    }
    out
}

/// k×k mean filter (all-ones kernel, divisor k²). Separable: a row pass
/// then a column pass, each dividing by k.
pub(crate) fn box_blur(plane: &Array2<f64>, k: usize, padding: Padding) -> Array2<f64> {
    if k == 1 {
        return plane.clone();
    }
    let rows = box_pass_rows(plane, k, padding);
    box_pass_cols(&rows, k, padding)
}

/// Run the whole cascade on one plane.
pub(crate) fn cascade_blur(plane: &Array2<f64>, cfg: &CleanConfig) -> Array2<f64> {
    let mut blur = plane.clone();
    for &k in &cfg.filter_sizes {
        blur = box_blur(&blur, k, cfg.padding);
    }
    blur
}

/// Produce the cleaned image: blurred background where the vessel mask is
/// 1, untouched input bytes where it is 0.
pub fn clean_image(
    image: &FundusImage,
    mask: &VesselMask,
    cfg: &CleanConfig,
) -> CoreResult<FundusImage> {
    cfg.validate()?;
    let (h, w) = (image.height(), image.width());
    let (mh, mw) = mask.pixels.dim();
    if (h, w) != (mh, mw) {
        return Err(PipelineError::Data(format!(
            "mask for image '{}' is {mh}x{mw} but the image is {h}x{w}",
            image.id
        )));
    }
    if mask.pixels.iter().all(|&m| m == 0) {
        // Nothing to replace; the contract is byte-exact passthrough.
        return FundusImage::new(image.id.clone(), image.pixels.clone(), image.source, image.grade);
    }
    let mut out = image.pixels.clone();
    for ch in 0..3 {
        let plane = Array2::from_shape_fn((h, w), |(r, c)| f64::from(image.pixels[[r, c, ch]]));
        let blurred = cascade_blur(&plane, cfg);
        for r in 0..h {
            for c in 0..w {
                if mask.pixels[[r, c]] == 1 {
                    out[[r, c, ch]] = quantize_u8(blurred[[r, c]]);
                }
            }
        }
    }
    FundusImage::new(image.id.clone(), out, image.source, image.grade)
}

/// Clean a batch elementwise; any failure aborts the whole batch with the
/// offending id in the error.
pub fn clean_batch(
    pairs: &[(FundusImage, VesselMask)],
    cfg: &CleanConfig,
) -> CoreResult<Vec<FundusImage>> {
    let mut out = Vec::with_capacity(pairs.len());
    for (image, mask) in pairs {
        let cleaned = clean_image(image, mask, cfg).map_err(|e| match e {
            PipelineError::Data(msg) => {
                PipelineError::Data(format!("cleaning '{}': {msg}", image.id))
            }
            other => other,
        })?;
        out.push(cleaned);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SourceDataset;
    use ndarray::Array3;

    fn img(id: &str, px: Array3<u8>) -> FundusImage {
        FundusImage::new(id, px, SourceDataset::External, None).unwrap()
    }

    fn gradient_image(h: usize, w: usize) -> FundusImage {
        let px = Array3::from_shape_fn((h, w, 3), |(r, c, ch)| {
            ((r * 11 + c * 17 + ch * 5) % 256) as u8
        });
        img("grad", px)
    }

    /// Brute-force k×k windowed mean with the same anchor and padding.
    fn brute_box(plane: &Array2<f64>, k: usize, padding: Padding) -> Array2<f64> {
        let (h, w) = plane.dim();
        Array2::from_shape_fn((h, w), |(r, c)| {
            let (rlo, rhi) = window(r, k);
            let (clo, chi) = window(c, k);
            let mut sum = 0.0;
            for i in rlo..=rhi {
                for j in clo..=chi {
                    sum += match padding {
                        Padding::Reflect => plane[[reflect_index(i, h), reflect_index(j, w)]],
                        Padding::Zero => {
                            if i < 0 || j < 0 || i >= h as isize || j >= w as isize {
                                0.0
                            } else {
                                plane[[i as usize, j as usize]]
                            }
                        }
                    };
                }
            }
            sum / (k * k) as f64
        })
    }

    #[test]
    fn all_zero_mask_is_byte_exact_identity() {
        let image = gradient_image(40, 40);
        let mask = VesselMask::new("grad", Array2::zeros((40, 40))).unwrap();
        let out = clean_image(&image, &mask, &CleanConfig::default()).unwrap();
        assert_eq!(out.pixels, image.pixels);
    }

    #[test]
    fn constant_image_survives_any_mask_under_reflect() {
        let image = img("const", Array3::from_elem((70, 70, 3), 201));
        let mask = VesselMask::new(
            "const",
            Array2::from_shape_fn((70, 70), |(r, c)| u8::from((r + c) % 3 == 0)),
        )
        .unwrap();
        let out = clean_image(&image, &mask, &CleanConfig::default()).unwrap();
        assert_eq!(out.pixels, image.pixels);
    }

    #[test]
    fn single_masked_pixel_matches_brute_force_window_mean() {
        // 16x16 gradient, one masked pixel, one 4x4 filter.
        let image = gradient_image(16, 16);
        let mut mpx = Array2::zeros((16, 16));
        mpx[[8, 8]] = 1;
        let mask = VesselMask::new("grad", mpx).unwrap();
        let cfg = CleanConfig {
            filter_sizes: vec![4],
            padding: Padding::Reflect,
        };
        let out = clean_image(&image, &mask, &cfg).unwrap();
        for ch in 0..3 {
            let plane =
                Array2::from_shape_fn((16, 16), |(r, c)| f64::from(image.pixels[[r, c, ch]]));
            let want = quantize_u8(brute_box(&plane, 4, Padding::Reflect)[[8, 8]]);
            assert_eq!(out.pixels[[8, 8, ch]], want, "channel {ch}");
            // Every other pixel untouched.
            for r in 0..16 {
                for c in 0..16 {
                    if (r, c) != (8, 8) {
                        assert_eq!(out.pixels[[r, c, ch]], image.pixels[[r, c, ch]]);
                    }
                }
            }
        }
    }

    #[test]
    fn sliding_blur_equals_brute_force_for_all_kernels_and_paddings() {
        let plane = Array2::from_shape_fn((48, 37), |(r, c)| ((r * 23 + c * 41) % 255) as f64);
        for padding in [Padding::Reflect, Padding::Zero] {
            for k in [1usize, 2, 3, 4, 5, 16, 32, 64] {
                let fast = box_blur(&plane, k, padding);
                let slow = brute_box(&plane, k, padding);
                let max_err = fast
                    .iter()
                    .zip(slow.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                assert!(
                    max_err < 1e-9,
                    "k={k} padding={padding:?}: max err {max_err}"
                );
            }
        }
    }

    #[test]
    fn full_cascade_matches_brute_force_oracle() {
        let image = gradient_image(80, 64);
        let mask = VesselMask::new(
            "grad",
            Array2::from_shape_fn((80, 64), |(r, c)| u8::from((r * 7 + c) % 11 < 3)),
        )
        .unwrap();
        let cfg = CleanConfig::default();
        let out = clean_image(&image, &mask, &cfg).unwrap();
        for ch in 0..3 {
            let plane =
                Array2::from_shape_fn((80, 64), |(r, c)| f64::from(image.pixels[[r, c, ch]]));
            let mut blur = plane.clone();
            for &k in &cfg.filter_sizes {
                blur = brute_box(&blur, k, cfg.padding);
            }
            for r in 0..80 {
                for c in 0..64 {
                    let want = if mask.pixels[[r, c]] == 1 {
                        quantize_u8(blur[[r, c]])
                    } else {
                        image.pixels[[r, c, ch]]
                    };
                    assert_eq!(out.pixels[[r, c, ch]], want, "({r},{c},{ch})");
                }
            }
        }
    }

    #[test]
    fn cascade_order_matters() {
        let plane = Array2::from_shape_fn((40, 40), |(r, c)| ((r * 31 + c * 3) % 250) as f64);
        let asc = cascade_blur(
            &plane,
            &CleanConfig {
                filter_sizes: vec![4, 16],
                padding: Padding::Reflect,
            },
        );
        let desc = cascade_blur(
            &plane,
            &CleanConfig {
                filter_sizes: vec![16, 4],
                padding: Padding::Reflect,
            },
        );
        let diff = asc
            .iter()
            .zip(desc.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(diff > 1e-9, "orders unexpectedly agree: {diff}");
    }

    #[test]
    fn repeated_cleaning_is_idempotent_outside_the_mask() {
        let image = gradient_image(48, 48);
        let mask = VesselMask::new(
            "grad",
            Array2::from_shape_fn((48, 48), |(r, _)| u8::from(r % 9 == 0)),
        )
        .unwrap();
        let cfg = CleanConfig::default();
        let once = clean_image(&image, &mask, &cfg).unwrap();
        let twice = clean_image(&once, &mask, &cfg).unwrap();
        for r in 0..48 {
            for c in 0..48 {
                if mask.pixels[[r, c]] == 0 {
                    for ch in 0..3 {
                        assert_eq!(twice.pixels[[r, c, ch]], image.pixels[[r, c, ch]]);
                    }
                }
            }
        }
    }

    #[test]
    fn batch_maps_elementwise_and_names_failures() {
        let a = gradient_image(40, 40);
        let mask_a = VesselMask::new("grad", Array2::from_elem((40, 40), 1)).unwrap();
        let cfg = CleanConfig::default();
        assert!(clean_batch(&[], &cfg).unwrap().is_empty());
        let batch = clean_batch(
            &[(a.clone(), mask_a.clone()), (a.clone(), mask_a.clone())],
            &cfg,
        )
        .unwrap();
        let single = clean_image(&a, &mask_a, &cfg).unwrap();
        assert_eq!(batch.len(), 2);
        assert_eq!(batch[0].pixels, single.pixels);
        assert_eq!(batch[1].pixels, single.pixels);

        let bad_mask = VesselMask::new("grad", Array2::zeros((13, 13))).unwrap();
        let err = clean_batch(&[(a, bad_mask)], &cfg).unwrap_err();
        assert!(err.to_string().contains("grad"), "got: {err}");
    }

    #[test]
    fn empty_filter_list_is_a_config_error() {
        let image = gradient_image(8, 8);
        let mask = VesselMask::new("grad", Array2::from_elem((8, 8), 1)).unwrap();
        let cfg = CleanConfig {
            filter_sizes: vec![],
            padding: Padding::Reflect,
        };
        assert_eq!(clean_image(&image, &mask, &cfg).unwrap_err().exit_code(), 2);
    }
}
