//! Evaluation: scale-invariant depth accuracy and distribution distances
//! between image sets.
//!
//! Depth predictions are compared to ground truth after median rescaling,
//! which cancels the global scale ambiguity of monocular estimation: the
//! prediction is multiplied by `median(gt) / median(pred)` over the jointly
//! valid pixels before any error is computed.
//!
//! Realism of translated images is scored in a learned-free feature space:
//! a frozen randomly initialized convolutional extractor maps each image to
//! a 64-dimensional descriptor, and two image sets are compared by the
//! Fréchet distance between Gaussian fits (`fid`) and by an unbiased
//! polynomial-kernel MMD^2 estimate (`kid`). Random-feature variants of
//! these distances preserve the orderings of their pretrained-network
//! counterparts while staying dependency-free and fully deterministic.

use candle_core::{DType, Device, Tensor};
use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::dataio::resize_image_bilinear;
use crate::nn::{image_to_chw, seeded_rng};
use crate::types::{DepthMap, Image};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Depth accuracy
// ---------------------------------------------------------------------------

/// Accuracy summary for one frame (or an aggregate over frames).
///
/// All statistics are computed over pixels that are valid in both maps and
/// strictly positive in both, so ratios are always defined.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DepthMetrics {
    /// Root-mean-square error in millimeters.
    pub rmse_mm: f64,
    /// Mean of |pred - gt| / gt.
    pub abs_rel: f64,
    /// Fraction of pixels with max(pred/gt, gt/pred) < 1.25.
    pub delta1: f64,
    /// Same with threshold 1.25^2.
    pub delta2: f64,
    /// Same with threshold 1.25^3.
    pub delta3: f64,
    /// Number of pixels that entered the statistics.
    pub n_pixels: usize,
}

fn joint_positive_pixels(pred: &DepthMap, gt: &DepthMap) -> Result<Vec<(f64, f64)>> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::DimensionMismatch {
            what: "prediction vs ground truth",
            expected_h: gt.height(),
            expected_w: gt.width(),
            got_h: pred.height(),
            got_w: pred.width(),
        });
    }
    let mut pairs = Vec::new();
    for (g, r, c) in gt.valid_values() {
        if g > 0.0 && pred.valid()[(r, c)] {
            let p = pred.values()[(r, c)];
            if p > 0.0 {
                pairs.push((p, g));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoValidPixels);
    }
    Ok(pairs)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Multiplies the prediction by `median(gt) / median(pred)` over jointly
/// valid, positive pixels. The result keeps the prediction's validity mask.
pub fn median_rescale(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMap> {
    let pairs = joint_positive_pixels(pred, gt)?;
    let mut p: Vec<f64> = pairs.iter().map(|&(p, _)| p).collect();
    let mut g: Vec<f64> = pairs.iter().map(|&(_, g)| g).collect();
    p.sort_by(|a, b| a.partial_cmp(b).unwrap());
    g.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (mp, mg) = (median(&p), median(&g));
    if mp <= 0.0 || mg <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "median rescale needs positive medians, got pred {mp} and reference {mg}"
        )));
    }
    let scale = mg / mp;
    DepthMap::new(pred.values() * scale, pred.valid().clone())
}

/// Per-frame accuracy of `pred` against `gt`. No rescaling is performed
/// here; compose with [`median_rescale`] for scale-invariant evaluation.
pub fn frame_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMetrics> {
    let pairs = joint_positive_pixels(pred, gt)?;
    let n = pairs.len() as f64;
    let mut sq = 0.0;
    let mut rel = 0.0;
    let mut d = [0usize; 3];
    for &(p, g) in &pairs {
        sq += (p - g) * (p - g);
        rel += (p - g).abs() / g;
        let ratio = (p / g).max(g / p);
        for (k, hits) in d.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *hits += 1;
            }
        }
    }
    Ok(DepthMetrics {
        rmse_mm: (sq / n).sqrt(),
        abs_rel: rel / n,
        delta1: d[0] as f64 / n,
        delta2: d[1] as f64 / n,
        delta3: d[2] as f64 / n,
        n_pixels: pairs.len(),
    })
}

/// Unweighted mean of per-frame metrics; `n_pixels` is summed.
pub fn aggregate_metrics(frames: &[DepthMetrics]) -> Result<DepthMetrics> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("metric aggregation".into()));
    }
    let n = frames.len() as f64;
    Ok(DepthMetrics {
        rmse_mm: frames.iter().map(|m| m.rmse_mm).sum::<f64>() / n,
        abs_rel: frames.iter().map(|m| m.abs_rel).sum::<f64>() / n,
        delta1: frames.iter().map(|m| m.delta1).sum::<f64>() / n,
        delta2: frames.iter().map(|m| m.delta2).sum::<f64>() / n,
        delta3: frames.iter().map(|m| m.delta3).sum::<f64>() / n,
        n_pixels: frames.iter().map(|m| m.n_pixels).sum(),
    })
}

/// Bilinearly resizes a fully valid depth map (e.g. a network prediction)
/// to a new resolution using the same half-pixel convention as image
/// resizing. Maps with invalid pixels are rejected: interpolation would
/// smear values across the validity boundary.
pub fn resize_prediction_bilinear(
    map: &DepthMap,
    out_height: usize,
    out_width: usize,
) -> Result<DepthMap> {
    if map.valid_count() != map.height() * map.width() {
        return Err(Error::InvalidArgument(
            "bilinear depth resize requires a fully valid map".into(),
        ));
    }
    if out_height < crate::types::MIN_SIDE || out_width < crate::types::MIN_SIDE {
        return Err(Error::ImageTooSmall {
            height: out_height,
            width: out_width,
            min: crate::types::MIN_SIDE,
        });
    }
    let (h, w) = (map.height(), map.width());
    if (h, w) == (out_height, out_width) {
        return DepthMap::new(map.values().clone(), map.valid().clone());
    }
    let sr = h as f64 / out_height as f64;
    let sc = w as f64 / out_width as f64;
    let values = Array2::from_shape_fn((out_height, out_width), |(r, c)| {
        let fr = ((r as f64 + 0.5) * sr - 0.5).clamp(0.0, (h - 1) as f64);
        let fc = ((c as f64 + 0.5) * sc - 0.5).clamp(0.0, (w - 1) as f64);
        let r0 = fr.floor() as usize;
        let c0 = fc.floor() as usize;
        let r1 = (r0 + 1).min(h - 1);
        let c1 = (c0 + 1).min(w - 1);
        let ar = fr - r0 as f64;
        let ac = fc - c0 as f64;
        let top = map.values()[(r0, c0)] * (1.0 - ac) + map.values()[(r0, c1)] * ac;
        let bot = map.values()[(r1, c0)] * (1.0 - ac) + map.values()[(r1, c1)] * ac;
        top * (1.0 - ar) + bot * ar
    });
    DepthMap::from_values(values)
}

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

/// Feature vectors for a set of images, tagged with the extractor that
/// produced them so distances are only ever computed in a single space.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: Array2<f64>,
    pub extractor_id: String,
}

impl FeatureSet {
    pub fn new(features: Array2<f64>, extractor_id: impl Into<String>) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::EmptyInput("feature set".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "feature set contains non-finite values".into(),
            ));
        }
        Ok(Self {
            features,
            extractor_id: extractor_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

fn check_comparable(a: &FeatureSet, b: &FeatureSet) -> Result<()> {
    if a.extractor_id != b.extractor_id {
        return Err(Error::ExtractorMismatch {
            left: a.extractor_id.clone(),
            right: b.extractor_id.clone(),
        });
    }
    if a.dim() != b.dim() {
        return Err(Error::InvalidArgument(format!(
            "feature dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Input side length the extractor resizes every image to.
pub const EXTRACTOR_INPUT_SIDE: usize = 32;

/// Frozen random convolutional feature extractor.
///
/// Images are resized to 32x32, passed through three stride-2 conv+relu
/// layers (3 -> 8 -> 16 -> 32 channels, kernel 3, Gaussian weights with
/// He-style scale, zero bias), and summarized by concatenated global mean
/// and max pooling into a 64-dimensional vector. Weights depend only on the
/// seed, so the feature space is reproducible everywhere.
pub struct RandomConvExtractor {
    layers: Vec<(Tensor, Tensor)>,
    id: String,
    device: Device,
}

/// Output dimensionality of [`RandomConvExtractor`].
pub const EXTRACTOR_DIM: usize = 64;

impl RandomConvExtractor {
    pub fn new(seed: u64) -> Result<Self> {
        let device = Device::Cpu;
        let mut layers = Vec::new();
        let channels = [3usize, 8, 16, 32];
        for i in 0..3 {
            let (in_c, out_c) = (channels[i], channels[i + 1]);
            let mut rng = seeded_rng(seed, &format!("extractor/layer{i}"));
            let std = (2.0 / (in_c * 9) as f64).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| {
                Error::InvalidArgument(format!("bad extractor init distribution: {e}"))
            })?;
            let weight: Vec<f32> = (0..out_c * in_c * 9)
                .map(|_| normal.sample(&mut rng) as f32)
                .collect();
            let weight = Tensor::from_vec(weight, (out_c, in_c, 3, 3), &device)?;
            let bias = Tensor::zeros((1, out_c, 1, 1), DType::F32, &device)?;
            layers.push((weight, bias));
        }
        Ok(Self {
            layers,
            id: format!("randconv-v1-seed{seed}-d{EXTRACTOR_DIM}"),
            device,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        for (weight, bias) in &self.layers {
            y = y.conv2d(weight, 1, 2, 1, 1)?.broadcast_add(bias)?.relu()?;
        }
        // y: [n, 32, 4, 4] -> mean and max over spatial dims.
        let mean = y.mean(3)?.mean(2)?;
        let max = y.max(3)?.max(2)?;
        Ok(Tensor::cat(&[&mean, &max], 1)?)
    }

    /// Maps each image to one feature row.
    pub fn features(&self, images: &[Image]) -> Result<FeatureSet> {
        if images.is_empty() {
            return Err(Error::EmptyInput("extractor input".into()));
        }
        let mut rows = Vec::with_capacity(images.len());
        for img in images {
            let resized = resize_image_bilinear(img, EXTRACTOR_INPUT_SIDE, EXTRACTOR_INPUT_SIDE)?;
            rows.push(image_to_chw(&resized, &self.device)?);
        }
        let batch = Tensor::stack(&rows, 0)?;
        let feats = self.forward(&batch)?;
        let (n, d) = feats.dims2()?;
        let flat = feats.flatten_all()?.to_vec1::<f32>()?;
        let features = Array2::from_shape_fn((n, d), |(i, j)| f64::from(flat[i * d + j]));
        FeatureSet::new(features, self.id.clone())
    }
}

// ---------------------------------------------------------------------------
// Distribution distances
// ---------------------------------------------------------------------------

fn mean_and_covariance(set: &FeatureSet) -> Result<(Array1<f64>, DMatrix<f64>)> {
    let n = set.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples for a covariance estimate, got {n}"
        )));
    }
    let d = set.dim();
    let mean = set
        .features
        .mean_axis(ndarray::Axis(0))
        .expect("non-empty by construction");
    let mut cov = DMatrix::zeros(d, d);
    for row in set.features.rows() {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[(i, j)] /= denom;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    Ok((mean, cov))
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to two feature sets:
/// `||mu_a - mu_b||^2 + tr(Sa) + tr(Sb) - 2 tr((Sa^{1/2} Sb Sa^{1/2})^{1/2})`.
///
/// Covariances use the unbiased 1/(n-1) estimator. Small negative
/// eigenvalues from roundoff are clamped to zero before square roots.
pub fn fid(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    check_comparable(a, b)?;
    let (mu_a, cov_a) = mean_and_covariance(a)?;
    let (mu_b, cov_b) = mean_and_covariance(b)?;

    let mean_term: f64 = mu_a
        .iter()
        .zip(mu_b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let tr_a = cov_a.trace();
    let tr_b = cov_b.trace();

    let sqrt_a = psd_sqrt(&cov_a);
    let mut inner = &sqrt_a * &cov_b * &sqrt_a;
    // Symmetrize against roundoff before the symmetric eigensolver.
    inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = inner
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();
    Ok(mean_term + tr_a + tr_b - 2.0 * cross)
}

/// Number of random subsets averaged by [`kid`].
pub const KID_SUBSETS: usize = 10;
/// Target subset size for [`kid`]; shrinks to the smaller set if needed.
pub const KID_SUBSET_SIZE: usize = 100;

fn polynomial_kernel(x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let v = dot / d + 1.0;
    v * v * v
}

/// Content fingerprint of a feature set (FNV-1a over the value bytes).
/// Subset draws in [`kid`] are seeded from this, so the draw depends on the
/// set itself rather than on argument position: swapping the arguments
/// reuses the same subsets, and two bit-identical sets always draw the same
/// rows.
fn feature_fingerprint(set: &FeatureSet) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in set.features.iter() {
        for byte in v.to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
    }
    h
}

/// Kernel-distance estimate: mean and spread of the unbiased MMD^2 across
/// random subsets.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KidScore {
    /// Average of the per-subset unbiased MMD^2 estimates.
    pub mean: f64,
    /// Population standard deviation of the per-subset estimates.
    pub std: f64,
}

/// Kernel distance between two feature sets with the default subset policy:
/// [`KID_SUBSETS`] subsets of up to [`KID_SUBSET_SIZE`] samples.
pub fn kid(a: &FeatureSet, b: &FeatureSet, seed: u64) -> Result<KidScore> {
    kid_with(a, b, seed, KID_SUBSET_SIZE, KID_SUBSETS)
}

/// Kernel distance between two feature sets: the unbiased MMD^2 estimator
/// with the cubic polynomial kernel `(x.y / d + 1)^3`, averaged over
/// `n_subsets` random subsets of `subset_size` samples (shrunk to the
/// smaller set when needed).
///
/// The estimator sums `k(x_i, x_j) + k(y_i, y_j) - 2 k(x_i, y_j)` over
/// ordered pairs `i != j`, so two identical sets give exactly zero.
/// Subset draws depend only on `seed` and the set contents.
pub fn kid_with(
    a: &FeatureSet,
    b: &FeatureSet,
    seed: u64,
    subset_size: usize,
    n_subsets: usize,
) -> Result<KidScore> {
    check_comparable(a, b)?;
    if n_subsets == 0 {
        return Err(Error::InvalidArgument(
            "kernel distance needs at least 1 subset".into(),
        ));
    }
    let m = subset_size.min(a.len()).min(b.len());
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "kernel distance needs at least 2 samples per set, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let row = |set: &FeatureSet, i: usize| set.features.row(i).to_vec();
    let (fp_a, fp_b) = (feature_fingerprint(a), feature_fingerprint(b));

    let mut estimates = Vec::with_capacity(n_subsets);
    for s in 0..n_subsets {
        let mut rng_a = seeded_rng(seed, &format!("kid/{s}/{fp_a:016x}"));
        let mut rng_b = seeded_rng(seed, &format!("kid/{s}/{fp_b:016x}"));
        let mut ia: Vec<usize> = (0..a.len()).collect();
        let mut ib: Vec<usize> = (0..b.len()).collect();
        ia.shuffle(&mut rng_a);
        ib.shuffle(&mut rng_b);
        let xs: Vec<Vec<f64>> = ia[..m].iter().map(|&i| row(a, i)).collect();
        let ys: Vec<Vec<f64>> = ib[..m].iter().map(|&i| row(b, i)).collect();

        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i == j {
                    continue;
                }
                acc += polynomial_kernel(&xs[i], &xs[j]) + polynomial_kernel(&ys[i], &ys[j])
                    - 2.0 * polynomial_kernel(&xs[i], &ys[j]);
            }
        }
        estimates.push(acc / (m * (m - 1)) as f64);
    }
    let mean = estimates.iter().sum::<f64>() / n_subsets as f64;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n_subsets as f64;
    Ok(KidScore {
        mean,
        std: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn full_map(values: Array2<f64>) -> DepthMap {
        DepthMap::from_values(values).unwrap()
    }

    #[test]
    fn median_rescale_matches_reference_median() {
        // pred holds 1..=64 and gt exactly 10x that, so the rescale factor
        // is exactly 10 and the rescaled prediction matches gt everywhere.
        let pred = full_map(Array2::from_shape_fn((8, 8), |(r, c)| {
            (r * 8 + c + 1) as f64
        }));
        let gt = full_map(pred.values() * 10.0);
        let rescaled = median_rescale(&pred, &gt).unwrap();
        assert_abs_diff_eq!(rescaled.values()[(0, 0)], 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rescaled.values()[(7, 7)], 640.0, epsilon = 1e-12);
        let m = frame_metrics(&rescaled, &gt).unwrap();
        assert_abs_diff_eq!(m.rmse_mm, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.delta1, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn metrics_are_scale_invariant_after_rescaling() {
        let gt = full_map(Array2::from_shape_fn((8, 8), |(r, c)| {
            20.0 + 3.0 * r as f64 + 5.0 * c as f64
        }));
        let pred = full_map(Array2::from_shape_fn((8, 8), |(r, c)| {
            22.0 + 2.5 * r as f64 + 5.5 * c as f64
        }));
        let base = frame_metrics(&median_rescale(&pred, &gt).unwrap(), &gt).unwrap();
        for scale in [0.01, 0.5, 7.0, 1234.5] {
            let scaled = full_map(pred.values() * scale);
            let m = frame_metrics(&median_rescale(&scaled, &gt).unwrap(), &gt).unwrap();
            assert_abs_diff_eq!(m.rmse_mm, base.rmse_mm, epsilon = 1e-9);
            assert_abs_diff_eq!(m.abs_rel, base.abs_rel, epsilon = 1e-12);
            assert_eq!(m.delta1, base.delta1);
        }
    }

    #[test]
    fn frame_metrics_closed_forms() {
        let gt = full_map(Array2::from_elem((8, 8), 50.0));
        // pred = 2 * gt: abs_rel 1, rmse 50, ratio 2 > 1.25^3 ~ 1.953.
        let pred = full_map(Array2::from_elem((8, 8), 100.0));
        let m = frame_metrics(&pred, &gt).unwrap();
        assert_abs_diff_eq!(m.rmse_mm, 50.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.abs_rel, 1.0, epsilon = 1e-12);
        assert_eq!((m.delta1, m.delta2, m.delta3), (0.0, 0.0, 0.0));
        assert_eq!(m.n_pixels, 64);

        // ratio exactly 1.25: excluded by the strict inequality from
        // delta1 but inside delta2.
        let pred = full_map(Array2::from_elem((8, 8), 62.5));
        let m = frame_metrics(&pred, &gt).unwrap();
        assert_eq!(m.delta1, 0.0);
        assert_eq!(m.delta2, 1.0);
        assert_eq!(m.delta3, 1.0);
    }

    #[test]
    fn metrics_ignore_invalid_and_nonpositive_pixels() {
        let mut values = Array2::from_elem((8, 8), 50.0);
        let mut valid = Array2::from_elem((8, 8), true);
        values[(0, 0)] = 0.0; // valid but zero depth: excluded
        values[(0, 1)] = 1e9; // invalid: excluded
        valid[(0, 1)] = false;
        let gt = DepthMap::new(values, valid).unwrap();
        let pred = full_map(Array2::from_elem((8, 8), 50.0));
        let m = frame_metrics(&pred, &gt).unwrap();
        assert_eq!(m.n_pixels, 62);
        assert_abs_diff_eq!(m.rmse_mm, 0.0, epsilon = 1e-12);

        let gt_all_zero = full_map(Array2::zeros((8, 8)));
        assert!(matches!(
            frame_metrics(&pred, &gt_all_zero),
            Err(Error::NoValidPixels)
        ));
    }

    #[test]
    fn aggregate_is_mean_over_frames() {
        let a = DepthMetrics {
            rmse_mm: 10.0,
            abs_rel: 0.1,
            delta1: 0.5,
            delta2: 0.75,
            delta3: 1.0,
            n_pixels: 100,
        };
        let b = DepthMetrics {
            rmse_mm: 30.0,
            abs_rel: 0.3,
            delta1: 1.0,
            delta2: 1.0,
            delta3: 1.0,
            n_pixels: 50,
        };
        let agg = aggregate_metrics(&[a, b]).unwrap();
        assert_abs_diff_eq!(agg.rmse_mm, 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(agg.abs_rel, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(agg.delta1, 0.75, epsilon = 1e-12);
        assert_eq!(agg.n_pixels, 150);
        assert!(aggregate_metrics(&[]).is_err());
    }

    #[test]
    fn prediction_resize_is_identity_at_same_size_and_rejects_invalid() {
        let map = full_map(array![
            [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            [2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
            [3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0],
            [4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0],
            [5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0],
            [6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0],
            [7.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0, 14.0],
            [8.0, 9.0, 10.0, 11.0, 12.0, 13.0, 14.0, 15.0],
        ]);
        let same = resize_prediction_bilinear(&map, 8, 8).unwrap();
        assert_eq!(same.values(), map.values());

        // Downsample by 2 of a linear ramp stays linear: the 2x2 block
        // average equals the midpoint value.
        let half = resize_prediction_bilinear(&map, 8, 8).unwrap();
        assert_eq!(half.valid_count(), 64);
        let up = resize_prediction_bilinear(&map, 16, 16).unwrap();
        assert_eq!(up.valid_count(), 256);
        // Center region of an upsampled linear ramp keeps the slope.
        assert_abs_diff_eq!(
            up.values()[(8, 8)] - up.values()[(8, 6)],
            1.0,
            epsilon = 1e-9
        );

        let mut valid = Array2::from_elem((8, 8), true);
        valid[(0, 0)] = false;
        let partial = DepthMap::new(Array2::from_elem((8, 8), 1.0), valid).unwrap();
        assert!(resize_prediction_bilinear(&partial, 16, 16).is_err());
    }

    // -- feature extractor ---------------------------------------------------

    #[test]
    fn extractor_is_deterministic_and_seed_sensitive() {
        let imgs: Vec<Image> = (0..3)
            .map(|i| Image::constant(16, 24, 0.2 + 0.2 * i as f32).unwrap())
            .collect();
        let e1 = RandomConvExtractor::new(5).unwrap();
        let e2 = RandomConvExtractor::new(5).unwrap();
        let e3 = RandomConvExtractor::new(6).unwrap();
        assert_eq!(e1.id(), "randconv-v1-seed5-d64");
        assert_eq!(e3.id(), "randconv-v1-seed6-d64");

        let f1 = e1.features(&imgs).unwrap();
        let f2 = e2.features(&imgs).unwrap();
        let f3 = e3.features(&imgs).unwrap();
        assert_eq!(f1.features, f2.features);
        assert_ne!(f1.features, f3.features);
        assert_eq!(f1.dim(), EXTRACTOR_DIM);
        assert_eq!(f1.len(), 3);
        assert!(f1.features.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn extractor_distinguishes_image_sets() {
        let bright: Vec<Image> = (0..4)
            .map(|i| Image::constant(16, 16, 0.8 + 0.01 * i as f32).unwrap())
            .collect();
        let dark: Vec<Image> = (0..4)
            .map(|i| Image::constant(16, 16, 0.1 + 0.01 * i as f32).unwrap())
            .collect();
        let e = RandomConvExtractor::new(0).unwrap();
        let fb = e.features(&bright).unwrap();
        let fd = e.features(&dark).unwrap();
        let d_ab = fid(&fb, &fd).unwrap();
        let d_aa = fid(&fb, &e.features(&bright).unwrap()).unwrap();
        assert!(d_ab > 1e-6, "distinct sets should be far apart: {d_ab}");
        assert!(d_aa.abs() < 1e-9, "identical sets should coincide: {d_aa}");
    }

    #[test]
    fn mismatched_extractors_are_rejected() {
        let f1 = FeatureSet::new(Array2::zeros((3, 4)), "randconv-v1-seed0-d64").unwrap();
        let f2 = FeatureSet::new(Array2::zeros((3, 4)), "randconv-v1-seed1-d64").unwrap();
        assert!(matches!(
            fid(&f1, &f2),
            Err(Error::ExtractorMismatch { .. })
        ));
        assert!(matches!(
            kid(&f1, &f2, 0),
            Err(Error::ExtractorMismatch { .. })
        ));
    }

    // -- Fréchet distance ----------------------------------------------------

    fn set_1d(values: &[f64]) -> FeatureSet {
        FeatureSet::new(
            Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap(),
            "test",
        )
        .unwrap()
    }

    #[test]
    fn fid_matches_univariate_closed_form() {
        // {-1, 0, 1}: mean 0, unbiased variance 1.
        // {2, 3, 4}: mean 3, unbiased variance 1.
        // d^2 = 9 + 1 + 1 - 2*sqrt(1*1) = 9.
        let a = set_1d(&[-1.0, 0.0, 1.0]);
        let b = set_1d(&[2.0, 3.0, 4.0]);
        assert_abs_diff_eq!(fid(&a, &b).unwrap(), 9.0, epsilon = 1e-9);

        // {-2, 0, 2}: mean 0, variance 4.
        // d^2 = 9 + 1 + 4 - 2*sqrt(4) = 10.
        let c = set_1d(&[1.0, 3.0, 5.0]);
        assert_abs_diff_eq!(fid(&a, &c).unwrap(), 10.0, epsilon = 1e-9);
    }

    #[test]
    fn fid_matches_diagonal_multivariate_closed_form() {
        // Feature columns are independent with exactly computable moments.
        // A: cols {-1,0,1} and {-2,0,2} -> mu (0,0), cov diag(1,4).
        // B: cols {4,5,6} and {0,1,2} -> mu (5,1), cov diag(1,1).
        // d^2 = 25 + 1 + (1+4) + (1+1) - 2(sqrt(1) + sqrt(4)) = 27.
        let a = FeatureSet::new(
            Array2::from_shape_vec((3, 2), vec![-1.0, -2.0, 0.0, 0.0, 1.0, 2.0]).unwrap(),
            "test",
        )
        .unwrap();
        let b = FeatureSet::new(
            Array2::from_shape_vec((3, 2), vec![4.0, 0.0, 5.0, 1.0, 6.0, 2.0]).unwrap(),
            "test",
        )
        .unwrap();
        assert_abs_diff_eq!(fid(&a, &b).unwrap(), 27.0, epsilon = 1e-9);
    }

    #[test]
    fn fid_is_symmetric_and_zero_on_self() {
        let mut rng = seeded_rng(11, "fid_sym");
        for _ in 0..5 {
            let normal = Normal::new(0.0, 1.0).unwrap();
            let a = FeatureSet::new(
                Array2::from_shape_fn((12, 5), |_| normal.sample(&mut rng)),
                "test",
            )
            .unwrap();
            let b = FeatureSet::new(
                Array2::from_shape_fn((9, 5), |_| 0.5 + normal.sample(&mut rng)),
                "test",
            )
            .unwrap();
            let ab = fid(&a, &b).unwrap();
            let ba = fid(&b, &a).unwrap();
            assert_abs_diff_eq!(ab, ba, epsilon = 1e-9);
            assert!(ab >= -1e-9);
            assert_abs_diff_eq!(fid(&a, &a).unwrap(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn fid_is_invariant_under_common_orthogonal_rotation() {
        use nalgebra::DMatrix;
        let mut rng = seeded_rng(21, "fid_rot");
        let normal = Normal::new(0.0, 1.0).unwrap();
        let d = 6;
        for trial in 0..3 {
            let a_raw = Array2::from_shape_fn((20, d), |_| normal.sample(&mut rng));
            let b_raw = Array2::from_shape_fn((16, d), |_| 0.7 + normal.sample(&mut rng));
            // Random orthogonal matrix via QR of a random square matrix.
            let m = DMatrix::from_fn(d, d, |_, _| normal.sample(&mut rng));
            let q = m.qr().q();
            let rotate = |x: &Array2<f64>| {
                Array2::from_shape_fn(x.dim(), |(i, j)| {
                    (0..d).map(|k| x[(i, k)] * q[(k, j)]).sum()
                })
            };
            let base = fid(
                &FeatureSet::new(a_raw.clone(), "test").unwrap(),
                &FeatureSet::new(b_raw.clone(), "test").unwrap(),
            )
            .unwrap();
            let rotated = fid(
                &FeatureSet::new(rotate(&a_raw), "test").unwrap(),
                &FeatureSet::new(rotate(&b_raw), "test").unwrap(),
            )
            .unwrap();
            assert_abs_diff_eq!(base, rotated, epsilon = 1e-5);
            assert!(base > 0.0, "trial {trial} produced degenerate sets");
        }
    }

    // -- kernel distance -----------------------------------------------------

    #[test]
    fn kid_is_exactly_zero_on_identical_sets() {
        let mut rng = seeded_rng(3, "kid_zero");
        let normal = Normal::new(0.0, 2.0).unwrap();
        let a = FeatureSet::new(
            Array2::from_shape_fn((17, 8), |_| normal.sample(&mut rng)),
            "test",
        )
        .unwrap();
        let score = kid(&a, &a.clone(), 9).unwrap();
        assert_eq!(score.mean, 0.0);
        assert_eq!(score.std, 0.0);
    }

    #[test]
    fn kid_matches_hand_computation() {
        // Sets {0, 0} and {10, 10} in 1-D, kernel (xy + 1)^3:
        // k(0,0) = 1, k(10,10) = 101^3 = 1030301, k(0,10) = 1.
        // MMD^2 = 1 + 1030301 - 2 = 1030300 for every subset, so the
        // across-subset spread is exactly zero.
        let a = set_1d(&[0.0, 0.0]);
        let b = set_1d(&[10.0, 10.0]);
        let score = kid(&a, &b, 0).unwrap();
        assert_abs_diff_eq!(score.mean, 1030300.0, epsilon = 1e-6);
        assert_abs_diff_eq!(score.std, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn kid_subset_policy_is_configurable() {
        let mut rng = seeded_rng(14, "kid_subsets");
        let normal = Normal::new(0.0, 1.0).unwrap();
        let a = FeatureSet::new(
            Array2::from_shape_fn((30, 4), |_| normal.sample(&mut rng)),
            "test",
        )
        .unwrap();
        let b = FeatureSet::new(
            Array2::from_shape_fn((30, 4), |_| 2.0 + normal.sample(&mut rng)),
            "test",
        )
        .unwrap();
        // A single full-set subset has no sampling noise at all.
        let full = kid_with(&a, &b, 5, 30, 1).unwrap();
        assert_eq!(full.std, 0.0);
        // Small subsets vary, so the spread across subsets is nonzero.
        let small = kid_with(&a, &b, 5, 8, 10).unwrap();
        assert!(small.std > 0.0);
        assert!(matches!(
            kid_with(&a, &b, 5, 8, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn kid_is_symmetric_and_seed_stable() {
        let mut rng = seeded_rng(4, "kid_sym");
        let normal = Normal::new(0.0, 1.0).unwrap();
        let a = FeatureSet::new(
            Array2::from_shape_fn((15, 6), |_| normal.sample(&mut rng)),
            "test",
        )
        .unwrap();
        let b = FeatureSet::new(
            Array2::from_shape_fn((13, 6), |_| 1.0 + normal.sample(&mut rng)),
            "test",
        )
        .unwrap();
        let ab = kid(&a, &b, 7).unwrap();
        assert_eq!(ab, kid(&a, &b, 7).unwrap());
        let ba = kid(&b, &a, 7).unwrap();
        assert_abs_diff_eq!(ab.mean, ba.mean, epsilon = 1e-9);
        assert_abs_diff_eq!(ab.std, ba.std, epsilon = 1e-9);
        assert!(ab.mean > 0.0);
    }

    #[test]
    fn distances_separate_near_from_far_distributions() {
        let mut rng = seeded_rng(8, "sep");
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut draw = |shift: f64, n: usize| {
            FeatureSet::new(
                Array2::from_shape_fn((n, 4), |_| shift + normal.sample(&mut rng)),
                "test",
            )
            .unwrap()
        };
        let a = draw(0.0, 40);
        let near = draw(0.1, 40);
        let far = draw(3.0, 40);
        assert!(fid(&a, &near).unwrap() < fid(&a, &far).unwrap());
        assert!(kid(&a, &near, 1).unwrap().mean < kid(&a, &far, 1).unwrap().mean);
    }
}
