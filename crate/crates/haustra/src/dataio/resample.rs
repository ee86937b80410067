//! Resizing and paired augmentation.
//!
//! Images resize bilinearly; depth maps resize with nearest-neighbor
//! sampling so values stay metric and masks stay crisp. Augmentation (random
//! crop + horizontal flip) moves pixels without resampling, and applies the
//! identical geometry to image and depth.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::{DepthMap, Image, PairedSample, MIN_SIDE};
use crate::{Error, Result};

fn check_target(h: usize, w: usize) -> Result<()> {
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            min: MIN_SIDE,
        });
    }
    Ok(())
}

/// Maps an output index to a continuous source coordinate (align-corners
/// false, the usual half-pixel convention).
fn src_coord(dst: usize, scale: f64) -> f64 {
    (dst as f64 + 0.5) * scale - 0.5
}

pub fn resize_image_bilinear(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    check_target(out_h, out_w)?;
    let (h, w, _) = img.data().dim();
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let src = img.data();
    let out = Array3::from_shape_fn((out_h, out_w, 3), |(r, c, ch)| {
        let fr = src_coord(r, sy).clamp(0.0, (h - 1) as f64);
        let fc = src_coord(c, sx).clamp(0.0, (w - 1) as f64);
        let (r0, c0) = (fr.floor() as usize, fc.floor() as usize);
        let (r1, c1) = ((r0 + 1).min(h - 1), (c0 + 1).min(w - 1));
        let (dr, dc) = ((fr - r0 as f64) as f32, (fc - c0 as f64) as f32);
        let top = src[(r0, c0, ch)] * (1.0 - dc) + src[(r0, c1, ch)] * dc;
        let bot = src[(r1, c0, ch)] * (1.0 - dc) + src[(r1, c1, ch)] * dc;
        (top * (1.0 - dr) + bot * dr).clamp(0.0, 1.0)
    });
    Image::new(out)
}

pub fn resize_depth_nearest(depth: &DepthMap, out_h: usize, out_w: usize) -> Result<DepthMap> {
    check_target(out_h, out_w)?;
    let (h, w) = (depth.height(), depth.width());
    if (h, w) == (out_h, out_w) {
        return Ok(depth.clone());
    }
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let pick = |r: usize, c: usize| -> (usize, usize) {
        let fr = src_coord(r, sy).round().clamp(0.0, (h - 1) as f64) as usize;
        let fc = src_coord(c, sx).round().clamp(0.0, (w - 1) as f64) as usize;
        (fr, fc)
    };
    let values = Array2::from_shape_fn((out_h, out_w), |(r, c)| {
        let (sr, sc) = pick(r, c);
        if depth.valid()[(sr, sc)] {
            depth.values()[(sr, sc)]
        } else {
            0.0
        }
    });
    let valid = Array2::from_shape_fn((out_h, out_w), |(r, c)| {
        let (sr, sc) = pick(r, c);
        depth.valid()[(sr, sc)]
    });
    DepthMap::new(values, valid)
}

/// Random-crop and horizontal-flip settings for paired training samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentOptions {
    pub crop_height: usize,
    pub crop_width: usize,
    pub hflip_probability: f64,
}

impl AugmentOptions {
    pub fn validate(&self) -> Result<()> {
        check_target(self.crop_height, self.crop_width)?;
        if !(0.0..=1.0).contains(&self.hflip_probability) {
            return Err(Error::InvalidArgument(format!(
                "hflip probability must be in [0,1], got {}",
                self.hflip_probability
            )));
        }
        Ok(())
    }
}

/// Applies one random crop + flip draw to the image and its depth map with
/// identical geometry, so pixel `(r, c)` of the output image still
/// corresponds to pixel `(r, c)` of the output depth.
pub fn paired_augment(
    sample: &PairedSample,
    opts: &AugmentOptions,
    rng: &mut ChaCha8Rng,
) -> Result<PairedSample> {
    opts.validate()?;
    let (h, w) = (sample.image.height(), sample.image.width());
    if opts.crop_height > h || opts.crop_width > w {
        return Err(Error::DimensionMismatch {
            what: "crop window",
            expected_h: h,
            expected_w: w,
            got_h: opts.crop_height,
            got_w: opts.crop_width,
        });
    }
    let top = rng.gen_range(0..=h - opts.crop_height);
    let left = rng.gen_range(0..=w - opts.crop_width);
    let flip = rng.gen_bool(opts.hflip_probability);

    let (ch, cw) = (opts.crop_height, opts.crop_width);
    let img = sample.image.data();
    let img_out = Array3::from_shape_fn((ch, cw, 3), |(r, c, k)| {
        let sc = if flip { cw - 1 - c } else { c };
        img[(top + r, left + sc, k)]
    });
    let values = Array2::from_shape_fn((ch, cw), |(r, c)| {
        let sc = if flip { cw - 1 - c } else { c };
        sample.depth.values()[(top + r, left + sc)]
    });
    let valid = Array2::from_shape_fn((ch, cw), |(r, c)| {
        let sc = if flip { cw - 1 - c } else { c };
        sample.depth.valid()[(top + r, left + sc)]
    });

    PairedSample::new(
        Image::new(img_out)?,
        DepthMap::new(values, valid)?,
        sample.sequence_id.clone(),
        sample.frame_index,
    )
}
