//! Bilinear resizing with anti-aliasing on downscale: a separable
//! triangle filter whose support widens with the scale factor, so
//! downscaling averages instead of aliasing, while upscaling reduces to
//! classic bilinear interpolation. Same-size resize is the exact identity.

use ndarray::{Array2, Array3};

use crate::error::{CoreResult, PipelineError};
use crate::types::FundusImage;
use crate::util::quantize_u8;

/// Per-output-index taps: source start index and normalized weights.
fn axis_weights(in_len: usize, out_len: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = in_len as f64 / out_len as f64;
    let support = scale.max(1.0);
    let mut rows = Vec::with_capacity(out_len);
    for o in 0..out_len {
        let center = (o as f64 + 0.5) * scale - 0.5;
        let lo = ((center - support).ceil() as isize).max(0) as usize;
        let hi = ((center + support).floor() as isize).min(in_len as isize - 1) as usize;
        let mut weights: Vec<f64> = (lo..=hi)
            .map(|x| {
                let t = (x as f64 - center).abs() / support;
                (1.0 - t).max(0.0)
            })
            .collect();
        let sum: f64 = weights.iter().sum();
        debug_assert!(sum > 0.0);
        for w in &mut weights {
            *w /= sum;
        }
        rows.push((lo, weights));
    }
    rows
}

/// Resize one f64 plane.
pub(crate) fn resize_plane(plane: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = plane.dim();
    let col_w = axis_weights(w, out_w);
    let row_w = axis_weights(h, out_h);
    // Horizontal pass.
    let mut tmp = Array2::<f64>::zeros((h, out_w));
    for r in 0..h {
        for (oc, (lo, weights)) in col_w.iter().enumerate() {
            let mut acc = 0.0;
            for (t, &wgt) in weights.iter().enumerate() {
                acc += wgt * plane[[r, lo + t]];
            }
            tmp[[r, oc]] = acc;
        }
    }
    // Vertical pass.
    let mut out = Array2::<f64>::zeros((out_h, out_w));
    for (or, (lo, weights)) in row_w.iter().enumerate() {
        for oc in 0..out_w {
            let mut acc = 0.0;
            for (t, &wgt) in weights.iter().enumerate() {
                acc += wgt * tmp[[lo + t, oc]];
            }
            out[[or, oc]] = acc;
        }
    }
    out
}

/// Resize an RGB raster to (out_h, out_w).
pub fn resize_rgb(pixels: &Array3<u8>, out_h: usize, out_w: usize) -> CoreResult<Array3<u8>> {
    if out_h == 0 || out_w == 0 {
        return Err(PipelineError::Config(
            "resize target must be nonzero in both axes".into(),
        ));
    }
    let (h, w, _) = pixels.dim();
    let mut out = Array3::<u8>::zeros((out_h, out_w, 3));
    for ch in 0..3 {
        let plane = Array2::from_shape_fn((h, w), |(r, c)| f64::from(pixels[[r, c, ch]]));
        let resized = resize_plane(&plane, out_h, out_w);
        for r in 0..out_h {
            for c in 0..out_w {
                out[[r, c, ch]] = quantize_u8(resized[[r, c]]);
            }
        }
    }
    Ok(out)
}

/// Resize a fundus image, carrying id/source/grade along.
pub fn resize_image(image: &FundusImage, target: (usize, usize)) -> CoreResult<FundusImage> {
    let px = resize_rgb(&image.pixels, target.0, target.1)?;
    FundusImage::new(image.id.clone(), px, image.source, image.grade)
}
