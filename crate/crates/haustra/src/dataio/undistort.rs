//! Radial lens undistortion.
//!
//! The camera model distorts a normalized pinhole coordinate `(x, y)` with
//! radius `r` to `(x, y) * (1 + k1 r^2 + k2 r^4 + k3 r^6 + k4 r^8)`.
//! Undistortion therefore back-warps: for every output pixel, the forward
//! polynomial locates the matching source position in the distorted input.
//! With all coefficients zero the warp is skipped entirely, making the
//! operation an exact identity.

use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::types::{DepthMap, Image};
use crate::{Error, Result};

/// Pinhole intrinsics plus radial distortion coefficients `k1..k4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub distortion: [f64; 4],
}

impl Intrinsics {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let intr: Self = serde_json::from_str(&raw)?;
        intr.validate()?;
        Ok(intr)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("fx", self.fx), ("fy", self.fy)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        for (name, v) in [("cx", self.cx), ("cy", self.cy)] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite")));
            }
        }
        if self.distortion.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidArgument(
                "distortion coefficients must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn is_distortion_free(&self) -> bool {
        self.distortion.iter().all(|&k| k == 0.0)
    }

    /// Radial gain of the forward model at squared radius `r2`.
    pub fn radial_factor(&self, r2: f64) -> f64 {
        let [k1, k2, k3, k4] = self.distortion;
        1.0 + r2 * (k1 + r2 * (k2 + r2 * (k3 + r2 * k4)))
    }

    /// Source position in the distorted input for an undistorted output
    /// pixel center `(col, row)`.
    fn source_of(&self, col: f64, row: f64) -> (f64, f64) {
        let xn = (col - self.cx) / self.fx;
        let yn = (row - self.cy) / self.fy;
        let f = self.radial_factor(xn * xn + yn * yn);
        // Equivalent to cx + fx * (xn * f) but avoids the divide/multiply
        // round trip through fx.
        (self.cx + (col - self.cx) * f, self.cy + (row - self.cy) * f)
    }
}

fn bilinear(plane: &Array3<f32>, ch: usize, row: f64, col: f64) -> f32 {
    let (h, w, _) = plane.dim();
    let r0 = row.floor();
    let c0 = col.floor();
    let dr = (row - r0) as f32;
    let dc = (col - c0) as f32;
    let clamp_r = |r: f64| (r.max(0.0) as usize).min(h - 1);
    let clamp_c = |c: f64| (c.max(0.0) as usize).min(w - 1);
    let (r0i, r1i) = (clamp_r(r0), clamp_r(r0 + 1.0));
    let (c0i, c1i) = (clamp_c(c0), clamp_c(c0 + 1.0));
    let v00 = plane[(r0i, c0i, ch)];
    let v01 = plane[(r0i, c1i, ch)];
    let v10 = plane[(r1i, c0i, ch)];
    let v11 = plane[(r1i, c1i, ch)];
    let top = v00 + (v01 - v00) * dc;
    let bot = v10 + (v11 - v10) * dc;
    top + (bot - top) * dr
}

/// Removes radial distortion from an image by backward warping with
/// bilinear sampling. Output pixels whose source falls outside the input
/// are black.
pub fn undistort_image(img: &Image, intr: &Intrinsics) -> Result<Image> {
    intr.validate()?;
    if intr.is_distortion_free() {
        return Ok(img.clone());
    }
    let (h, w, _) = img.data().dim();
    let src = img.data();
    let mut out = Array3::zeros((h, w, 3));
    for r in 0..h {
        for c in 0..w {
            let (sc, sr) = intr.source_of(c as f64, r as f64);
            if sr < 0.0 || sr > (h - 1) as f64 || sc < 0.0 || sc > (w - 1) as f64 {
                continue;
            }
            for ch in 0..3 {
                out[(r, c, ch)] = bilinear(src, ch, sr, sc).clamp(0.0, 1.0);
            }
        }
    }
    Image::new(out)
}

/// Removes radial distortion from a depth map with nearest-neighbor
/// sampling, so no depths are invented by interpolation. Out-of-bounds
/// sources and sources whose nearest pixel is invalid become invalid.
pub fn undistort_depth(depth: &DepthMap, intr: &Intrinsics) -> Result<DepthMap> {
    intr.validate()?;
    if intr.is_distortion_free() {
        return Ok(depth.clone());
    }
    let (h, w) = (depth.height(), depth.width());
    let mut values = Array2::zeros((h, w));
    let mut valid = Array2::from_elem((h, w), false);
    for r in 0..h {
        for c in 0..w {
            let (sc, sr) = intr.source_of(c as f64, r as f64);
            let sri = sr.round();
            let sci = sc.round();
            if sri < 0.0 || sri > (h - 1) as f64 || sci < 0.0 || sci > (w - 1) as f64 {
                continue;
            }
            let (sri, sci) = (sri as usize, sci as usize);
            if depth.valid()[(sri, sci)] {
                values[(r, c)] = depth.values()[(sri, sci)];
                valid[(r, c)] = true;
            }
        }
    }
    DepthMap::new(values, valid)
}
