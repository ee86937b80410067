//! PNG readers and writers: 8-bit RGB for images, 16-bit grayscale for
//! depth. Depth values are stored as `round(mm / depth_scale_mm)`; a raw
//! value of zero marks an invalid pixel.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use ndarray::Array2;

use crate::types::{DepthMap, Image};
use crate::{Error, Result};

pub fn read_image_png(path: &Path) -> Result<Image> {
    let decoded = image::open(path)?;
    let rgb = decoded.to_rgb8();
    Image::from_rgb8(rgb.height() as usize, rgb.width() as usize, rgb.as_raw())
}

pub fn write_image_png(path: &Path, img: &Image) -> Result<()> {
    let (h, w) = (img.height() as u32, img.width() as u32);
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(w, h, img.to_rgb8())
        .expect("buffer sized from image dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn read_depth_png(path: &Path, depth_scale_mm: f64) -> Result<DepthMap> {
    if !(depth_scale_mm.is_finite() && depth_scale_mm > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "depth scale must be positive, got {depth_scale_mm}"
        )));
    }
    let decoded = image::open(path)?;
    let gray = match decoded {
        DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(Error::InvalidArgument(format!(
                "{}: depth PNG must be 16-bit grayscale, got {other:?}",
                path.display()
            )))
        }
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let mut values = Array2::zeros((h, w));
    let mut valid = Array2::from_elem((h, w), false);
    for (x, y, px) in gray.enumerate_pixels() {
        let raw = px.0[0];
        if raw != 0 {
            values[(y as usize, x as usize)] = f64::from(raw) * depth_scale_mm;
            valid[(y as usize, x as usize)] = true;
        }
    }
    DepthMap::new(values, valid)
}

pub fn write_depth_png(path: &Path, depth: &DepthMap, depth_scale_mm: f64) -> Result<()> {
    if !(depth_scale_mm.is_finite() && depth_scale_mm > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "depth scale must be positive, got {depth_scale_mm}"
        )));
    }
    let (h, w) = (depth.height(), depth.width());
    let mut raw = vec![0u16; h * w];
    for (v, r, c) in depth.valid_values() {
        // Valid zero-depth pixels would collide with the invalid marker, so
        // they round up to the smallest representable value.
        let q = (v / depth_scale_mm).round().clamp(1.0, 65535.0);
        raw[r * w + c] = q as u16;
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer sized from dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
