//! Mutual information between ground-truth depth and translated-image
//! intensity, plus the loss term built on it.
//!
//! Two implementations live here on purpose:
//!
//! * a hard-binned histogram estimator ([`hard_joint_histogram`] +
//!   [`mutual_information`]) used for evaluation, reporting and as the
//!   reference the differentiable path is tested against;
//! * a soft-binned estimator ([`soft_mi_graph`]) where intensity samples are
//!   spread over bins with Gaussian weights so gradients flow back into the
//!   generator. Depth is the supervision signal, not a learned quantity, so
//!   its binning stays hard.
//!
//! MI is computed as `sum_ij p_ij * ln(p_ij / (p_i * p_j))` in nats, where
//! `p_i` and `p_j` are the per-bin marginal probabilities (row and column
//! sums of the joint). Equivalently, with raw counts `n_ij` and total `N`,
//! each log term is `ln(N * n_ij / (n_i * n_j))`: the denominator is the
//! product of per-bin marginal counts, not of whole-map cardinalities.
//! Training minimizes the negative of this quantity, so a larger
//! `lambda_mi` pushes the generator toward translations whose intensities
//! remain predictive of depth.

use candle_core::{DType, Device, Tensor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::types::{DepthMap, Image};
use crate::{Error, Result};

/// Guard added inside logarithms of the differentiable estimator.
pub const LOG_EPS: f64 = 1e-12;

/// Binning layout shared by the hard and soft estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    /// Number of bins per axis.
    pub n_bins: usize,
    /// Depth range in millimeters; values outside are clamped to edge bins.
    pub depth_min: f64,
    pub depth_max: f64,
    /// Intensity range; the natural one for normalized images is `[0,1]`.
    pub intensity_min: f64,
    pub intensity_max: f64,
    /// Gaussian bandwidth of the soft estimator, in units of one bin width.
    pub soft_bandwidth: f64,
}

impl HistogramSpec {
    pub const DEFAULT_BINS: usize = 256;
    pub const DEFAULT_BANDWIDTH: f64 = 0.5;

    pub fn new(n_bins: usize, depth_min: f64, depth_max: f64) -> Result<Self> {
        let spec = Self {
            n_bins,
            depth_min,
            depth_max,
            intensity_min: 0.0,
            intensity_max: 1.0,
            soft_bandwidth: Self::DEFAULT_BANDWIDTH,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_bandwidth(mut self, soft_bandwidth: f64) -> Result<Self> {
        self.soft_bandwidth = soft_bandwidth;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 2 {
            return Err(Error::InvalidArgument(format!(
                "histogram needs at least 2 bins, got {}",
                self.n_bins
            )));
        }
        for (name, lo, hi) in [
            ("depth", self.depth_min, self.depth_max),
            ("intensity", self.intensity_min, self.intensity_max),
        ] {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::InvalidArgument(format!(
                    "{name} range [{lo}, {hi}] must be finite and increasing"
                )));
            }
        }
        if !self.soft_bandwidth.is_finite() || self.soft_bandwidth <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "soft bandwidth must be positive, got {}",
                self.soft_bandwidth
            )));
        }
        Ok(())
    }

    /// Bin index for a depth value, clamping out-of-range values to the edges.
    pub fn depth_bin(&self, v: f64) -> usize {
        bin_index(v, self.depth_min, self.depth_max, self.n_bins)
    }

    /// Bin index for an intensity value, clamping to the edges.
    pub fn intensity_bin(&self, v: f64) -> usize {
        bin_index(v, self.intensity_min, self.intensity_max, self.n_bins)
    }
}

fn bin_index(v: f64, lo: f64, hi: f64, n_bins: usize) -> usize {
    let t = (v - lo) / (hi - lo);
    let idx = (t * n_bins as f64).floor();
    if idx < 0.0 {
        0
    } else if idx >= n_bins as f64 {
        n_bins - 1
    } else {
        idx as usize
    }
}

/// Joint depth/intensity histogram with cached marginals.
///
/// Counts are kept as `f64` so the same structure serves both integer-count
/// hard histograms and fractional-mass soft histograms.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHistogram {
    counts: Array2<f64>,
    depth_marginal: Vec<f64>,
    intensity_marginal: Vec<f64>,
    total: f64,
}

impl JointHistogram {
    /// Wraps a count matrix, deriving marginals and the total.
    pub fn from_counts(counts: Array2<f64>) -> Result<Self> {
        let (rows, cols) = counts.dim();
        if rows != cols {
            return Err(Error::InvalidArgument(format!(
                "joint histogram must be square, got {rows}x{cols}"
            )));
        }
        if rows < 2 {
            return Err(Error::InvalidArgument(
                "joint histogram needs at least 2 bins".into(),
            ));
        }
        let mut depth_marginal = vec![0.0; rows];
        let mut intensity_marginal = vec![0.0; cols];
        let mut total = 0.0;
        for ((i, j), &c) in counts.indexed_iter() {
            if !c.is_finite() || c < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "histogram count at ({i},{j}) is {c}; counts must be finite and non-negative"
                )));
            }
            depth_marginal[i] += c;
            intensity_marginal[j] += c;
            total += c;
        }
        if total <= 0.0 {
            return Err(Error::NoValidPixels);
        }
        Ok(Self {
            counts,
            depth_marginal,
            intensity_marginal,
            total,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.counts.dim().0
    }

    pub fn counts(&self) -> &Array2<f64> {
        &self.counts
    }

    /// Row sums: mass per depth bin.
    pub fn depth_marginal(&self) -> &[f64] {
        &self.depth_marginal
    }

    /// Column sums: mass per intensity bin.
    pub fn intensity_marginal(&self) -> &[f64] {
        &self.intensity_marginal
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Swaps the roles of the two axes.
    pub fn transposed(&self) -> Self {
        Self {
            counts: self.counts.t().to_owned(),
            depth_marginal: self.intensity_marginal.clone(),
            intensity_marginal: self.depth_marginal.clone(),
            total: self.total,
        }
    }
}

/// Per-pixel intensity: the mean of the three channels.
pub fn intensity(image: &Image) -> Array2<f32> {
    let data = image.data();
    let (h, w, _) = data.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        (data[(r, c, 0)] + data[(r, c, 1)] + data[(r, c, 2)]) / 3.0
    })
}

/// Accumulates the hard-binned joint histogram over valid depth pixels.
///
/// Out-of-range values on either axis land in the corresponding edge bin;
/// pixels where the depth mask is unset contribute nothing.
pub fn hard_joint_histogram(
    depth: &DepthMap,
    intensity: &Array2<f32>,
    spec: &HistogramSpec,
) -> Result<JointHistogram> {
    spec.validate()?;
    if depth.values().dim() != intensity.dim() {
        let (gh, gw) = intensity.dim();
        return Err(Error::DimensionMismatch {
            what: "intensity plane",
            expected_h: depth.height(),
            expected_w: depth.width(),
            got_h: gh,
            got_w: gw,
        });
    }
    if depth.valid_count() == 0 {
        return Err(Error::NoValidPixels);
    }
    let mut counts = Array2::zeros((spec.n_bins, spec.n_bins));
    for (v, r, c) in depth.valid_values() {
        let i = spec.depth_bin(v);
        let j = spec.intensity_bin(f64::from(intensity[(r, c)]));
        counts[(i, j)] += 1.0;
    }
    JointHistogram::from_counts(counts)
}

/// Shannon entropy (nats) of a marginal given as raw masses.
pub fn marginal_entropy(marginal: &[f64], total: f64) -> f64 {
    let mut h = 0.0;
    for &m in marginal {
        if m > 0.0 {
            let p = m / total;
            h -= p * p.ln();
        }
    }
    h
}

/// Mutual information (nats) of a joint histogram.
///
/// Zero-count cells contribute nothing; the result is non-negative up to
/// floating-point roundoff and bounded by the smaller marginal entropy.
pub fn mutual_information(hist: &JointHistogram) -> f64 {
    let n = hist.total();
    let mut mi = 0.0;
    for ((i, j), &c) in hist.counts().indexed_iter() {
        if c > 0.0 {
            let p = c / n;
            let pd = hist.depth_marginal()[i] / n;
            let pi = hist.intensity_marginal()[j] / n;
            mi += p * (p / (pd * pi)).ln();
        }
    }
    mi
}

/// Upper bound on [`mutual_information`] for the same histogram:
/// `min(H(depth), H(intensity))`.
pub fn mi_upper_bound(hist: &JointHistogram) -> f64 {
    let hd = marginal_entropy(hist.depth_marginal(), hist.total());
    let hi = marginal_entropy(hist.intensity_marginal(), hist.total());
    hd.min(hi)
}

/// Hard-binned MI between a depth map and an image, in nats.
pub fn hard_mi(depth: &DepthMap, image: &Image, spec: &HistogramSpec) -> Result<f64> {
    let hist = hard_joint_histogram(depth, &intensity(image), spec)?;
    Ok(mutual_information(&hist))
}

/// Precomputed hard binning of a depth map for the differentiable estimator.
///
/// Holds a one-hot matrix `[n_valid, n_bins]` over valid pixels plus the flat
/// indices used to gather the matching intensity samples. Build once per
/// sample; it is reused every step because depth never changes.
pub struct DepthBinning {
    onehot: Tensor,
    flat_indices: Tensor,
    n_valid: usize,
    height: usize,
    width: usize,
}

impl DepthBinning {
    pub fn n_valid(&self) -> usize {
        self.n_valid
    }
}

/// Bins a depth map and lifts the result onto a device as constants.
pub fn bin_depth(
    depth: &DepthMap,
    spec: &HistogramSpec,
    dtype: DType,
    device: &Device,
) -> Result<DepthBinning> {
    spec.validate()?;
    let (h, w) = depth.values().dim();
    let n_valid = depth.valid_count();
    if n_valid == 0 {
        return Err(Error::NoValidPixels);
    }
    let mut onehot = vec![0f32; n_valid * spec.n_bins];
    let mut flat_indices = Vec::with_capacity(n_valid);
    for (row, (v, r, c)) in depth.valid_values().enumerate() {
        onehot[row * spec.n_bins + spec.depth_bin(v)] = 1.0;
        flat_indices.push((r * w + c) as u32);
    }
    let onehot = Tensor::from_vec(onehot, (n_valid, spec.n_bins), device)?.to_dtype(dtype)?;
    let flat_indices = Tensor::from_vec(flat_indices, n_valid, device)?;
    Ok(DepthBinning {
        onehot,
        flat_indices,
        n_valid,
        height: h,
        width: w,
    })
}

/// Soft-binned MI (nats) between pre-binned depth and an intensity plane,
/// differentiable with respect to the intensities.
///
/// Each intensity sample is distributed over bins with weights
/// `softmax_k(-(p - c_k)^2 / (2 sigma^2))` where `p` is the sample position
/// in bin units, `c_k` the bin centers and `sigma` the bandwidth. The joint
/// is the product of the hard depth one-hot with these weights, and MI is
/// evaluated from the normalized joint with `ln(x + 1e-12)` guards.
pub fn soft_mi_graph(
    binning: &DepthBinning,
    intensity_plane: &Tensor,
    spec: &HistogramSpec,
) -> Result<Tensor> {
    spec.validate()?;
    let dims = intensity_plane.dims();
    if dims != [binning.height, binning.width] {
        return Err(Error::InvalidArgument(format!(
            "intensity plane is {dims:?}, depth binning was built for [{}, {}]",
            binning.height, binning.width
        )));
    }
    let device = intensity_plane.device();
    let dtype = intensity_plane.dtype();
    let n_bins = spec.n_bins;

    let flat = intensity_plane.flatten_all()?;
    let samples = flat.index_select(&binning.flat_indices, 0)?;
    let samples = samples.clamp(spec.intensity_min, spec.intensity_max)?;

    // Position of each sample in bin units, in [0, n_bins].
    let span = spec.intensity_max - spec.intensity_min;
    let pos = ((samples - spec.intensity_min)? * (n_bins as f64 / span))?;

    let centers: Vec<f32> = (0..n_bins).map(|k| k as f32 + 0.5).collect();
    let centers = Tensor::from_vec(centers, (1, n_bins), device)?.to_dtype(dtype)?;

    let delta = pos.reshape((binning.n_valid, 1))?.broadcast_sub(&centers)?;
    let logits = (delta.sqr()? * (-0.5 / (spec.soft_bandwidth * spec.soft_bandwidth)))?;
    let weights = candle_nn::ops::softmax(&logits, 1)?;

    let onehot = binning.onehot.to_dtype(dtype)?;
    let joint = (onehot.t()?.matmul(&weights)? / binning.n_valid as f64)?;

    let p_depth = joint.sum_keepdim(1)?; // [n_bins, 1]
    let p_intensity = joint.sum_keepdim(0)?; // [1, n_bins]

    let log_joint = (joint.clone() + LOG_EPS)?.log()?;
    let log_pd = (p_depth + LOG_EPS)?.log()?;
    let log_pi = (p_intensity + LOG_EPS)?.log()?;

    let ratio = log_joint
        .broadcast_sub(&log_pd)?
        .broadcast_sub(&log_pi)?;
    Ok((joint * ratio)?.sum_all()?)
}

/// Loss form of the soft estimator: the negative of [`soft_mi_graph`], so
/// that minimizing it maximizes depth/intensity mutual information.
pub fn mi_loss_graph(
    binning: &DepthBinning,
    intensity_plane: &Tensor,
    spec: &HistogramSpec,
) -> Result<Tensor> {
    Ok(soft_mi_graph(binning, intensity_plane, spec)?.neg()?)
}

/// Mean of the three channels of a `[3, H, W]` tensor, differentiable.
pub fn intensity_graph(image_chw: &Tensor) -> Result<Tensor> {
    let dims = image_chw.dims();
    if dims.len() != 3 || dims[0] != 3 {
        return Err(Error::InvalidArgument(format!(
            "expected a [3, H, W] image tensor, got {dims:?}"
        )));
    }
    Ok(image_chw.mean(0)?)
}

/// Convenience scalar version of the soft estimator, evaluated in `f64`.
pub fn soft_mi(depth: &DepthMap, image: &Image, spec: &HistogramSpec) -> Result<f64> {
    let device = Device::Cpu;
    let plane = intensity(image).mapv(f64::from);
    let (h, w) = plane.dim();
    let tensor = Tensor::from_vec(plane.into_raw_vec_and_offset().0, (h, w), &device)?;
    let binning = bin_depth(depth, spec, DType::F64, &device)?;
    let mi = soft_mi_graph(&binning, &tensor, spec)?;
    Ok(mi.to_scalar::<f64>()?)
}

/// Scalar loss form of [`soft_mi`].
pub fn soft_mi_loss(depth: &DepthMap, image: &Image, spec: &HistogramSpec) -> Result<f64> {
    Ok(-soft_mi(depth, image, spec)?)
}
