//! Raster file I/O: RGB images in any common format, masks as 1-bit PNG.

use std::path::Path;

use image::GenericImageView;
use ndarray::{Array2, Array3};

use crate::error::{CoreResult, PipelineError};

/// Load any supported raster (PNG/JPEG/TIFF/GIF/PPM/BMP) as RGB.
pub fn load_rgb(path: &Path) -> CoreResult<Array3<u8>> {
    let img = image::open(path).map_err(|e| {
        PipelineError::Data(format!("unreadable image {}: {e}", path.display()))
    })?;
    let (w, h) = img.dimensions();
    let rgb = img.to_rgb8();
    let mut out = Array3::<u8>::zeros((h as usize, w as usize, 3));
    for (x, y, p) in rgb.enumerate_pixels() {
        let (y, x) = (y as usize, x as usize);
        out[[y, x, 0]] = p.0[0];
        out[[y, x, 1]] = p.0[1];
        out[[y, x, 2]] = p.0[2];
    }
    Ok(out)
}

/// Load a mask raster and binarize: any nonzero pixel (max over channels)
/// becomes 1.
pub fn load_mask_binarized(path: &Path) -> CoreResult<Array2<u8>> {
    let img = image::open(path).map_err(|e| {
        PipelineError::Data(format!("unreadable mask {}: {e}", path.display()))
    })?;
    let (w, h) = img.dimensions();
    let luma = img.to_luma8();
    let mut out = Array2::<u8>::zeros((h as usize, w as usize));
    for (x, y, p) in luma.enumerate_pixels() {
        out[[y as usize, x as usize]] = u8::from(p.0[0] > 0);
    }
    Ok(out)
}

/// Write an RGB array as PNG.
pub fn save_rgb_png(path: &Path, pixels: &Array3<u8>) -> CoreResult<()> {
    let (h, w, c) = pixels.dim();
    assert_eq!(c, 3, "save_rgb_png expects HxWx3");
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(path, e))?;
        }
    }
    let flat: Vec<u8> = pixels.iter().copied().collect();
    let buf = image::RgbImage::from_raw(w as u32, h as u32, flat)
        .expect("flat buffer length matches dims");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| PipelineError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Write a binary mask as a true 1-bit grayscale PNG (values 0/1 map to
/// black/white).
pub fn save_mask_png(path: &Path, mask: &Array2<u8>) -> CoreResult<()> {
    let (h, w) = mask.dim();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(path, e))?;
        }
    }
    let file = std::fs::File::create(path).map_err(|e| PipelineError::io(path, e))?;
    let writer = std::io::BufWriter::new(file);
    let mut enc = png::Encoder::new(writer, w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::One);
    let mut png_writer = enc
        .write_header()
        .map_err(|e| PipelineError::Data(format!("png header {}: {e}", path.display())))?;
    // Pack each row MSB-first, rows padded to whole bytes.
    let row_bytes = w.div_ceil(8);
    let mut data = vec![0u8; row_bytes * h];
    for y in 0..h {
        for x in 0..w {
            if mask[[y, x]] != 0 {
                data[y * row_bytes + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    png_writer
        .write_image_data(&data)
        .map_err(|e| PipelineError::Data(format!("png write {}: {e}", path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let px = Array3::from_shape_fn((5, 7, 3), |(y, x, c)| (y * 31 + x * 7 + c * 3) as u8);
        save_rgb_png(&path, &px).unwrap();
        assert_eq!(load_rgb(&path).unwrap(), px);
    }

    #[test]
    fn one_bit_mask_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        // Width deliberately not a multiple of 8 to exercise row padding.
        let mask = Array2::from_shape_fn((6, 11), |(y, x)| u8::from((y + x) % 3 == 0));
        save_mask_png(&path, &mask).unwrap();
        assert_eq!(load_mask_binarized(&path).unwrap(), mask);
    }

    #[test]
    fn missing_file_is_a_data_error() {
        let err = load_rgb(Path::new("/nonexistent/nope.png")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
