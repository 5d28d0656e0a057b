//! Whole-image inference: tile, predict, stitch, binarize.

use ndarray::{Array2, ArrayD, IxDyn};

use super::model::SegNet;
use crate::error::{CoreResult, PipelineError};
use crate::preprocess::{reflect_pad_rgb, PATCH_SIZE};
use crate::types::{FundusImage, VesselMask};

/// Tile origins covering `0..len` with `tile`-sized windows: stride `tile`,
/// plus a final window flush with the end (which overlaps its neighbor
/// whenever `len` is not a multiple of `tile`).
pub(crate) fn tile_origins(len: usize, tile: usize) -> Vec<usize> {
    debug_assert!(len >= tile);
    let mut origins = Vec::new();
    let mut pos = 0;
    while pos + tile < len {
        origins.push(pos);
        pos += tile;
    }
    origins.push(len - tile);
    origins
}

/// Per-pixel vessel probabilities for a whole image. The image is
/// reflect-padded up to at least the tile size, covered with 256x256 tiles,
/// and overlapping tile predictions are averaged per pixel.
pub fn predict_probabilities(model: &mut SegNet, image: &FundusImage) -> CoreResult<Array2<f32>> {
    let (h, w, _) = image.pixels.dim();
    let padded = reflect_pad_rgb(&image.pixels, PATCH_SIZE, PATCH_SIZE);
    let (ph, pw, _) = padded.dim();

    let mut sum = Array2::<f32>::zeros((ph, pw));
    let mut count = Array2::<f32>::zeros((ph, pw));
    for &top in &tile_origins(ph, PATCH_SIZE) {
        for &left in &tile_origins(pw, PATCH_SIZE) {
            let tile = ArrayD::from_shape_fn(IxDyn(&[1, 3, PATCH_SIZE, PATCH_SIZE]), |ix| {
                f32::from(padded[[top + ix[2], left + ix[3], ix[1]]]) / 255.0
            });
            let probs = model.forward_batch(tile, false)?;
            for r in 0..PATCH_SIZE {
                for c in 0..PATCH_SIZE {
                    sum[[top + r, left + c]] += probs[[0, 0, r, c]];
                    count[[top + r, left + c]] += 1.0;
                }
            }
        }
    }

    let stitched = Array2::from_shape_fn((h, w), |(r, c)| sum[[r, c]] / count[[r, c]]);
    Ok(stitched)
}

/// Predict a binary vessel mask for a whole image: stitched probabilities
/// thresholded at `threshold` (probability >= threshold marks a vessel).
pub fn predict_mask(
    model: &mut SegNet,
    image: &FundusImage,
    threshold: f64,
) -> CoreResult<VesselMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(PipelineError::Config(format!(
            "segmentation threshold must be in (0,1), got {threshold}"
        )));
    }
    let probs = predict_probabilities(model, image)?;
    let mask = probs.mapv(|p| u8::from(f64::from(p) >= threshold));
    VesselMask::new(image.id.clone(), mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segnet::SegNetworkSpec;
    use ndarray::Array3;

    fn gradient_image(id: &str, h: usize, w: usize) -> FundusImage {
        let px = Array3::from_shape_fn((h, w, 3), |(r, c, ch)| {
            (((r * 5 + c * 3 + ch * 40) % 256) as u8).max(20)
        });
        FundusImage::new(id, px, crate::types::SourceDataset::External, None).unwrap()
    }

    #[test]
    fn tile_origins_cover_with_flush_tail() {
        assert_eq!(tile_origins(256, 256), vec![0]);
        assert_eq!(tile_origins(300, 256), vec![0, 44]);
        assert_eq!(tile_origins(512, 256), vec![0, 256]);
        assert_eq!(tile_origins(600, 256), vec![0, 256, 344]);
    }

    #[test]
    fn mask_dims_equal_image_dims_even_for_small_inputs() {
        let spec = SegNetworkSpec::tiny(1, 2);
        let mut model = SegNet::new(&spec, 1).unwrap();
        let image = gradient_image("small", 90, 130);
        let mask = predict_mask(&mut model, &image, 0.5).unwrap();
        assert_eq!(mask.pixels.dim(), (90, 130));
    }

    #[test]
    fn stitching_is_the_per_pixel_mean_of_overlapping_tiles() {
        let spec = SegNetworkSpec::tiny(1, 2);
        let mut model = SegNet::new(&spec, 2).unwrap();
        let image = gradient_image("overlap", 300, 300);

        let got = predict_probabilities(&mut model, &image).unwrap();

        // Oracle: run the same tiles by hand and average.
        let padded = reflect_pad_rgb(&image.pixels, 256, 256);
        let mut sum = Array2::<f32>::zeros((300, 300));
        let mut count = Array2::<f32>::zeros((300, 300));
        for &top in &[0usize, 44] {
            for &left in &[0usize, 44] {
                let tile = ArrayD::from_shape_fn(IxDyn(&[1, 3, 256, 256]), |ix| {
                    f32::from(padded[[top + ix[2], left + ix[3], ix[1]]]) / 255.0
                });
                let probs = model.forward_batch(tile, false).unwrap();
                for r in 0..256 {
                    for c in 0..256 {
                        sum[[top + r, left + c]] += probs[[0, 0, r, c]];
                        count[[top + r, left + c]] += 1.0;
                    }
                }
            }
        }
        let mut max_diff = 0f32;
        for r in 0..300 {
            for c in 0..300 {
                let oracle = sum[[r, c]] / count[[r, c]];
                max_diff = max_diff.max((oracle - got[[r, c]]).abs());
            }
        }
        assert!(max_diff < 1e-6, "stitch differs from mean oracle: {max_diff}");
        // The interior band is covered by all four tiles.
        assert_eq!(count[[100, 100]], 4.0);
    }

    #[test]
    fn extreme_threshold_yields_all_zero_mask() {
        let spec = SegNetworkSpec::tiny(1, 2);
        let mut model = SegNet::new(&spec, 3).unwrap();
        let image = gradient_image("thresh", 64, 64);
        let mask = predict_mask(&mut model, &image, 1.0 - 1e-9).unwrap();
        assert!(mask.pixels.iter().all(|&v| v == 0));
    }

    #[test]
    fn out_of_range_threshold_is_a_config_error() {
        let spec = SegNetworkSpec::tiny(1, 2);
        let mut model = SegNet::new(&spec, 3).unwrap();
        let image = gradient_image("bad", 64, 64);
        for t in [0.0, 1.0, -0.5, 1.5] {
            let err = predict_mask(&mut model, &image, t).unwrap_err();
            assert_eq!(err.exit_code(), 2);
        }
    }
}
