//! Auto-cropping: trim the uninformative dark border around the retinal
//! disk down to the minimal bounding box of above-threshold content.

use crate::error::{CoreResult, PipelineError};
use crate::types::FundusImage;

/// Default intensity threshold separating background from content.
pub const DEFAULT_CROP_THRESHOLD: u8 = 10;

/// Crop to the minimal bounding box of pixels whose maximum channel
/// intensity exceeds `intensity_threshold`. Content pixels are copied
/// unchanged. An image with no pixel above threshold is rejected.
pub fn auto_crop(image: &FundusImage, intensity_threshold: u8) -> CoreResult<FundusImage> {
    let (h, w) = (image.height(), image.width());
    let px = &image.pixels;
    let mut row_has = vec![false; h];
    let mut col_has = vec![false; w];
    for r in 0..h {
        for c in 0..w {
            let m = px[[r, c, 0]].max(px[[r, c, 1]]).max(px[[r, c, 2]]);
            if m > intensity_threshold {
                row_has[r] = true;
                col_has[c] = true;
            }
        }
    }
    let top = row_has.iter().position(|&b| b);
    let (top, bottom, left, right) = match top {
        Some(top) => (
            top,
            row_has.iter().rposition(|&b| b).unwrap(),
            col_has.iter().position(|&b| b).unwrap(),
            col_has.iter().rposition(|&b| b).unwrap(),
        ),
        None => {
            return Err(PipelineError::Data(format!(
                "no foreground content in image '{}' (all pixels <= {intensity_threshold})",
                image.id
            )))
        }
    };
    let cropped = px
        .slice(ndarray::s![top..=bottom, left..=right, ..])
        .to_owned();
    FundusImage::new(image.id.clone(), cropped, image.source, image.grade)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SourceDataset;
    use ndarray::Array3;

    fn img(px: Array3<u8>) -> FundusImage {
        FundusImage::new("t", px, SourceDataset::External, None).unwrap()
    }

    #[test]
    fn removes_black_border_symmetrically() {
        // Bright disk region with a 10-pixel black border on all sides.
        let mut px = Array3::zeros((50, 60, 3));
        for r in 10..40 {
            for c in 10..50 {
                px[[r, c, 1]] = 180;
            }
        }
        let out = auto_crop(&img(px), 10).unwrap();
        assert_eq!((out.height(), out.width()), (30, 40));
        assert!(out.pixels.iter().step_by(3).len() > 0);
        assert_eq!(out.pixels[[0, 0, 1]], 180);
    }

    #[test]
    fn full_content_image_is_unchanged_and_idempotent() {
        let px = Array3::from_shape_fn((8, 9, 3), |(r, c, ch)| (40 + r + c + ch) as u8);
        let image = img(px.clone());
        let once = auto_crop(&image, 10).unwrap();
        assert_eq!(once.pixels, px);
        let twice = auto_crop(&once, 10).unwrap();
        assert_eq!(twice.pixels, once.pixels);
    }

    #[test]
    fn crop_is_idempotent_on_bordered_input() {
        let mut px = Array3::zeros((30, 30, 3));
        for r in 5..20 {
            for c in 7..23 {
                px[[r, c, 0]] = 200;
            }
        }
        let once = auto_crop(&img(px), 10).unwrap();
        let twice = auto_crop(&once, 10).unwrap();
        assert_eq!(once.pixels, twice.pixels);
    }

    #[test]
    fn all_black_image_is_rejected() {
        let err = auto_crop(&img(Array3::zeros((5, 5, 3))), 10).unwrap_err();
        assert!(err.to_string().contains("no foreground content"), "{err}");
    }
}
