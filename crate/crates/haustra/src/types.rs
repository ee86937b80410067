//! Core data types shared by every pipeline stage.
//!
//! Construction validates invariants once; the rest of the crate can then
//! assume images are normalized RGB in `[0,1]` and depth maps carry finite,
//! non-negative values wherever their validity mask is set.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Smallest accepted side length for images and depth maps.
pub const MIN_SIDE: usize = 8;

/// Which side of the unpaired translation problem a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    /// Synthetic renders with ground-truth depth.
    A,
    /// Real images without depth.
    B,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Domain::A => write!(f, "A"),
            Domain::B => write!(f, "B"),
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Domain::A),
            "B" | "b" => Ok(Domain::B),
            other => Err(Error::InvalidArgument(format!(
                "unknown domain {other:?}; expected \"A\" or \"B\""
            ))),
        }
    }
}

/// RGB image stored as `[height, width, 3]` with values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f32>,
}

impl Image {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if c != 3 {
            return Err(Error::InvalidArgument(format!(
                "image must have 3 channels, got {c}"
            )));
        }
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::ImageTooSmall {
                height: h,
                width: w,
                min: MIN_SIDE,
            });
        }
        for ((row, col, channel), &v) in data.indexed_iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::PixelOutOfRange {
                    row,
                    col,
                    channel,
                    value: v,
                });
            }
        }
        Ok(Self { data })
    }

    /// Builds a constant-valued image, mostly useful in tests.
    pub fn constant(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(Array3::from_elem((height, width, 3), value))
    }

    /// Converts interleaved 8-bit RGB to the normalized representation.
    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != height * width * 3 {
            return Err(Error::InvalidArgument(format!(
                "expected {} bytes for {height}x{width} RGB, got {}",
                height * width * 3,
                bytes.len()
            )));
        }
        let data = Array3::from_shape_vec(
            (height, width, 3),
            bytes.iter().map(|&b| f32::from(b) / 255.0).collect(),
        )
        .expect("shape checked above");
        Self::new(data)
    }

    /// Quantizes back to interleaved 8-bit RGB (round half up).
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    /// Re-checks the construction invariants. Cheap insurance for values that
    /// crossed a serialization or arithmetic boundary.
    pub fn validate(&self) -> Result<()> {
        Self::new(self.data.clone()).map(|_| ())
    }
}

/// Per-pixel depth in millimeters with an explicit validity mask.
///
/// Values are `f64` end to end so that scale-dependent statistics (medians,
/// histograms, metric aggregation) do not drift with map size.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    values: Array2<f64>,
    valid: Array2<bool>,
}

impl DepthMap {
    pub fn new(values: Array2<f64>, valid: Array2<bool>) -> Result<Self> {
        let (h, w) = values.dim();
        if valid.dim() != (h, w) {
            let (vh, vw) = valid.dim();
            return Err(Error::DimensionMismatch {
                what: "depth validity mask",
                expected_h: h,
                expected_w: w,
                got_h: vh,
                got_w: vw,
            });
        }
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::ImageTooSmall {
                height: h,
                width: w,
                min: MIN_SIDE,
            });
        }
        for ((row, col), &v) in values.indexed_iter() {
            if valid[(row, col)] && (!v.is_finite() || v < 0.0) {
                return Err(Error::DepthOutOfRange { row, col, value: v });
            }
        }
        Ok(Self { values, valid })
    }

    /// Builds a fully valid map.
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        let mask = Array2::from_elem(values.dim(), true);
        Self::new(values, mask)
    }

    pub fn height(&self) -> usize {
        self.values.dim().0
    }

    pub fn width(&self) -> usize {
        self.values.dim().1
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn valid(&self) -> &Array2<bool> {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&m| m).count()
    }

    /// Iterates over `(value, row, col)` of valid pixels in row-major order.
    pub fn valid_values(&self) -> impl Iterator<Item = (f64, usize, usize)> + '_ {
        self.values
            .indexed_iter()
            .filter(|((r, c), _)| self.valid[(*r, *c)])
            .map(|((r, c), &v)| (v, r, c))
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.values.clone(), self.valid.clone()).map(|_| ())
    }
}

/// Synthetic frame: image plus pixel-aligned ground-truth depth.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub image: Image,
    pub depth: DepthMap,
    pub sequence_id: String,
    pub frame_index: u32,
}

impl PairedSample {
    pub fn new(
        image: Image,
        depth: DepthMap,
        sequence_id: impl Into<String>,
        frame_index: u32,
    ) -> Result<Self> {
        validate_pair(Self {
            image,
            depth,
            sequence_id: sequence_id.into(),
            frame_index,
        })
    }
}

/// Real frame: image only.
#[derive(Debug, Clone)]
pub struct UnpairedSample {
    pub image: Image,
    pub sequence_id: String,
    pub frame_index: u32,
}

impl UnpairedSample {
    pub fn new(image: Image, sequence_id: impl Into<String>, frame_index: u32) -> Self {
        Self {
            image,
            sequence_id: sequence_id.into(),
            frame_index,
        }
    }
}

/// Checks that an image/depth pair is mutually consistent and that both
/// halves individually satisfy their invariants, returning the sample on
/// success. Samples assembled field-by-field should pass through here before
/// entering a training set.
pub fn validate_pair(sample: PairedSample) -> Result<PairedSample> {
    sample.image.validate()?;
    sample.depth.validate()?;
    if sample.image.height() != sample.depth.height()
        || sample.image.width() != sample.depth.width()
    {
        return Err(Error::DimensionMismatch {
            what: "paired depth map",
            expected_h: sample.image.height(),
            expected_w: sample.image.width(),
            got_h: sample.depth.height(),
            got_w: sample.depth.width(),
        });
    }
    Ok(sample)
}

/// Scalar weights of the translation objective: adversarial, cycle and
/// mutual-information terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_gan: f64,
    pub lambda_cyc: f64,
    pub lambda_mi: f64,
}

impl LossWeights {
    pub fn new(lambda_gan: f64, lambda_cyc: f64, lambda_mi: f64) -> Result<Self> {
        let w = Self {
            lambda_gan,
            lambda_cyc,
            lambda_mi,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_gan", self.lambda_gan),
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_mi", self.lambda_mi),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Drops the mutual-information term, keeping the other weights.
    pub fn without_mi(self) -> Self {
        Self {
            lambda_mi: 0.0,
            ..self
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_gan: 10.0,
            lambda_cyc: 0.5,
            lambda_mi: 1.0,
        }
    }
}
