//! Supervised monocular depth estimation.
//!
//! A residual encoder with four stages feeds a skip-connected decoder that
//! upsamples back to input resolution and emits per-pixel depth in
//! millimeters through a scaled softplus, so predictions are always
//! positive. Training minimizes mean squared error in millimeters over
//! valid ground-truth pixels; invalid pixels contribute nothing to loss or
//! gradient.
//!
//! The intended input is the translated synthetic set: images restyled
//! toward the real domain, still pixel-aligned with their rendered depth.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataio::{paired_augment, AugmentOptions};
use crate::nn::{
    image_to_chw, load_checkpoint, save_checkpoint, seeded_rng, softplus, Adam, Conv2d,
    InstanceNorm2d, ParamSet,
};
use crate::types::{DepthMap, Image, PairedSample};
use crate::{Error, Result};

/// Smallest depth the head can emit, in millimeters. Keeps medians and
/// ratios well-defined even for untrained networks.
pub const MIN_PREDICTED_DEPTH_MM: f64 = 1e-3;

/// Encoder/decoder size knobs. The default mirrors a 34-layer residual
/// encoder; shrink `base_width` and `stage_blocks` for fast experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthNetConfig {
    pub base_width: usize,
    pub stage_blocks: Vec<usize>,
    /// Multiplier applied to the softplus output to put the head's natural
    /// range near the scene scale.
    pub output_scale_mm: f64,
}

impl Default for DepthNetConfig {
    fn default() -> Self {
        Self {
            base_width: 64,
            stage_blocks: vec![3, 4, 6, 3],
            output_scale_mm: 50.0,
        }
    }
}

impl DepthNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 {
            return Err(Error::InvalidArgument(
                "depth net width must be positive".into(),
            ));
        }
        if self.stage_blocks.len() != 4 || self.stage_blocks.contains(&0) {
            return Err(Error::InvalidArgument(
                "depth net needs exactly 4 stages with at least one block each".into(),
            ));
        }
        if !(self.output_scale_mm.is_finite() && self.output_scale_mm > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "output scale must be positive, got {}",
                self.output_scale_mm
            )));
        }
        Ok(())
    }
}

struct EncoderBlock {
    conv1: Conv2d,
    norm1: InstanceNorm2d,
    conv2: Conv2d,
    norm2: InstanceNorm2d,
    shortcut: Option<Conv2d>,
}

impl EncoderBlock {
    #[allow(clippy::too_many_arguments)]
    fn new(
        ps: &mut ParamSet,
        name: &str,
        rng: &mut rand_chacha::ChaCha8Rng,
        in_c: usize,
        out_c: usize,
        stride: usize,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let conv1 = Conv2d::new(
            ps,
            &format!("{name}.conv1"),
            rng,
            in_c,
            out_c,
            3,
            stride,
            1,
            dtype,
            device,
        )?;
        let norm1 = InstanceNorm2d::new(ps, &format!("{name}.norm1"), out_c, dtype, device)?;
        let conv2 = Conv2d::new(
            ps,
            &format!("{name}.conv2"),
            rng,
            out_c,
            out_c,
            3,
            1,
            1,
            dtype,
            device,
        )?;
        let norm2 = InstanceNorm2d::new(ps, &format!("{name}.norm2"), out_c, dtype, device)?;
        let shortcut = if stride != 1 || in_c != out_c {
            Some(Conv2d::new(
                ps,
                &format!("{name}.shortcut"),
                rng,
                in_c,
                out_c,
                1,
                stride,
                0,
                dtype,
                device,
            )?)
        } else {
            None
        };
        Ok(Self {
            conv1,
            norm1,
            conv2,
            norm2,
            shortcut,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.norm1.forward(&self.conv1.forward(x)?)?.relu()?;
        let y = self.norm2.forward(&self.conv2.forward(&y)?)?;
        let skip = match &self.shortcut {
            Some(conv) => conv.forward(x)?,
            None => x.clone(),
        };
        Ok((y + skip)?.relu()?)
    }
}

struct DecoderStage {
    conv_up: Conv2d,
    norm_up: InstanceNorm2d,
    conv_fuse: Conv2d,
    norm_fuse: InstanceNorm2d,
}

impl DecoderStage {
    #[allow(clippy::too_many_arguments)]
    fn new(
        ps: &mut ParamSet,
        name: &str,
        rng: &mut rand_chacha::ChaCha8Rng,
        in_c: usize,
        skip_c: usize,
        out_c: usize,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let conv_up = Conv2d::new(
            ps,
            &format!("{name}.up"),
            rng,
            in_c,
            out_c,
            3,
            1,
            1,
            dtype,
            device,
        )?;
        let norm_up = InstanceNorm2d::new(ps, &format!("{name}.up_norm"), out_c, dtype, device)?;
        let conv_fuse = Conv2d::new(
            ps,
            &format!("{name}.fuse"),
            rng,
            out_c + skip_c,
            out_c,
            3,
            1,
            1,
            dtype,
            device,
        )?;
        let norm_fuse =
            InstanceNorm2d::new(ps, &format!("{name}.fuse_norm"), out_c, dtype, device)?;
        Ok(Self {
            conv_up,
            norm_up,
            conv_fuse,
            norm_fuse,
        })
    }

    fn forward(&self, x: &Tensor, skip: Option<&Tensor>) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let y = x.upsample_nearest2d(h * 2, w * 2)?;
        let y = self.norm_up.forward(&self.conv_up.forward(&y)?)?.relu()?;
        let y = match skip {
            Some(s) => Tensor::cat(&[&y, s], 1)?,
            None => y,
        };
        Ok(self
            .norm_fuse
            .forward(&self.conv_fuse.forward(&y)?)?
            .relu()?)
    }
}

pub struct DepthNet {
    stem: Conv2d,
    stem_norm: InstanceNorm2d,
    stages: Vec<Vec<EncoderBlock>>,
    decoder: Vec<DecoderStage>,
    head: Conv2d,
    output_scale_mm: f64,
}

impl DepthNet {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        rng: &mut rand_chacha::ChaCha8Rng,
        cfg: &DepthNetConfig,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.base_width;
        let stem = Conv2d::new(ps, &format!("{name}.stem"), rng, 3, w, 7, 2, 3, dtype, device)?;
        let stem_norm = InstanceNorm2d::new(ps, &format!("{name}.stem_norm"), w, dtype, device)?;

        // Stage channel plan: w, 2w, 4w, 8w with stride-2 entries.
        let widths = [w, 2 * w, 4 * w, 8 * w];
        let mut stages = Vec::new();
        let mut in_c = w;
        for (s, (&blocks, &out_c)) in cfg.stage_blocks.iter().zip(&widths).enumerate() {
            let mut stage = Vec::new();
            for b in 0..blocks {
                let stride = if b == 0 { 2 } else { 1 };
                stage.push(EncoderBlock::new(
                    ps,
                    &format!("{name}.stage{s}.block{b}"),
                    rng,
                    in_c,
                    out_c,
                    stride,
                    dtype,
                    device,
                )?);
                in_c = out_c;
            }
            stages.push(stage);
        }

        // Decoder mirrors the encoder: 8w -> 4w -> 2w -> w -> w, with skip
        // features concatenated at each scale, then one final upsample to
        // full resolution.
        let decoder = vec![
            DecoderStage::new(ps, &format!("{name}.dec3"), rng, 8 * w, 4 * w, 4 * w, dtype, device)?,
            DecoderStage::new(ps, &format!("{name}.dec2"), rng, 4 * w, 2 * w, 2 * w, dtype, device)?,
            DecoderStage::new(ps, &format!("{name}.dec1"), rng, 2 * w, w, w, dtype, device)?,
            DecoderStage::new(ps, &format!("{name}.dec0"), rng, w, w, w, dtype, device)?,
            DecoderStage::new(ps, &format!("{name}.dec_full"), rng, w, 0, w, dtype, device)?,
        ];
        let head = Conv2d::new(ps, &format!("{name}.head"), rng, w, 1, 3, 1, 1, dtype, device)?;
        Ok(Self {
            stem,
            stem_norm,
            stages,
            decoder,
            head,
            output_scale_mm: cfg.output_scale_mm,
        })
    }

    /// `[N, 3, H, W]` image to `[N, 1, H, W]` positive depth in mm.
    /// Spatial dimensions must be divisible by 32.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        if h % 32 != 0 || w % 32 != 0 {
            return Err(Error::InvalidArgument(format!(
                "depth net input must have sides divisible by 32, got {h}x{w}"
            )));
        }
        let s0 = self.stem_norm.forward(&self.stem.forward(x)?)?.relu()?; // H/2
        let mut feats = Vec::with_capacity(4);
        let mut y = s0.clone();
        for stage in &self.stages {
            for block in stage {
                y = block.forward(&y)?;
            }
            feats.push(y.clone()); // H/4, H/8, H/16, H/32
        }
        let mut d = feats[3].clone();
        d = self.decoder[0].forward(&d, Some(&feats[2]))?; // H/16
        d = self.decoder[1].forward(&d, Some(&feats[1]))?; // H/8
        d = self.decoder[2].forward(&d, Some(&feats[0]))?; // H/4
        d = self.decoder[3].forward(&d, Some(&s0))?; // H/2
        d = self.decoder[4].forward(&d, None)?; // H
        let raw = self.head.forward(&d)?;
        let depth = (softplus(&raw)? * self.output_scale_mm)?;
        Ok((depth + MIN_PREDICTED_DEPTH_MM)?)
    }
}

/// Mean squared error in mm^2 over valid pixels only.
///
/// `pred` and `target` are `[N, 1, H, W]`; `mask` holds 1.0 at valid pixels
/// and 0.0 elsewhere. Invalid pixels are multiplied out before the square,
/// so they produce neither loss nor gradient.
pub fn masked_mse(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let count = mask
        .sum_all()?
        .to_dtype(DType::F64)?
        .to_scalar::<f64>()?;
    if count <= 0.0 {
        return Err(Error::NoValidPixels);
    }
    let diff = ((pred - target)? * mask)?;
    Ok((diff.sqr()?.sum_all()? / count)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub model: DepthNetConfig,
    /// Random crop + flip; `None` trains on full frames.
    pub augment: Option<AugmentOptions>,
    pub seed: u64,
}

impl Default for DepthTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 4,
            learning_rate: 1e-4,
            model: DepthNetConfig::default(),
            augment: Some(AugmentOptions {
                crop_height: 256,
                crop_width: 256,
                hflip_probability: 0.5,
            }),
            seed: 0,
        }
    }
}

impl DepthTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        self.model.validate()
    }
}

/// One logged depth-training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthLossRow {
    pub epoch: usize,
    pub step: usize,
    pub mse: f64,
}

pub struct DepthTrainer {
    cfg: DepthTrainConfig,
    device: Device,
    net: DepthNet,
    params: ParamSet,
    opt: Adam,
    samples: Vec<PairedSample>,
    next_epoch: usize,
    rows: Vec<DepthLossRow>,
}

impl DepthTrainer {
    pub fn new(cfg: DepthTrainConfig, samples: &[PairedSample]) -> Result<Self> {
        cfg.validate()?;
        if samples.is_empty() {
            return Err(Error::EmptyInput("depth training set".into()));
        }
        let device = Device::Cpu;
        let mut params = ParamSet::new();
        let mut rng = seeded_rng(cfg.seed, "init/depth");
        let net = DepthNet::new(&mut params, "model", &mut rng, &cfg.model, DType::F32, &device)?;
        let opt = Adam::new(params.named_vars(), cfg.learning_rate, 0.9, 0.999)?;
        Ok(Self {
            cfg,
            device,
            net,
            params,
            opt,
            samples: samples.to_vec(),
            next_epoch: 0,
            rows: Vec::new(),
        })
    }

    pub fn config(&self) -> &DepthTrainConfig {
        &self.cfg
    }

    /// Retargets the total epoch count. A resumed run may ask for a longer
    /// (or shorter) schedule than the checkpoint recorded; the checkpoint
    /// written at the end should describe the schedule actually in force.
    pub fn set_target_epochs(&mut self, epochs: usize) {
        self.cfg.epochs = epochs;
    }

    pub fn completed_epochs(&self) -> usize {
        self.next_epoch
    }

    pub fn rows(&self) -> &[DepthLossRow] {
        &self.rows
    }

    pub fn net(&self) -> &DepthNet {
        &self.net
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn batch_tensors(&self, batch: &[PairedSample]) -> Result<(Tensor, Tensor, Tensor)> {
        let mut images = Vec::with_capacity(batch.len());
        let mut depths = Vec::with_capacity(batch.len());
        let mut masks = Vec::with_capacity(batch.len());
        for sample in batch {
            images.push(image_to_chw(&sample.image, &self.device)?);
            let (h, w) = (sample.depth.height(), sample.depth.width());
            let mut d = vec![0f32; h * w];
            let mut m = vec![0f32; h * w];
            for (v, r, c) in sample.depth.valid_values() {
                d[r * w + c] = v as f32;
                m[r * w + c] = 1.0;
            }
            depths.push(Tensor::from_vec(d, (1, h, w), &self.device)?);
            masks.push(Tensor::from_vec(m, (1, h, w), &self.device)?);
        }
        Ok((
            Tensor::stack(&images, 0)?,
            Tensor::stack(&depths, 0)?,
            Tensor::stack(&masks, 0)?,
        ))
    }

    pub fn run_epoch(&mut self) -> Result<Vec<DepthLossRow>> {
        let epoch = self.next_epoch;
        let mut order_rng = seeded_rng(self.cfg.seed, &format!("depth_order/{epoch}"));
        let mut aug_rng = seeded_rng(self.cfg.seed, &format!("depth_augment/{epoch}"));
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut order_rng);

        let batch_size = self.cfg.batch_size.min(self.samples.len());
        let mut epoch_rows = Vec::new();
        for (step, chunk) in order.chunks(batch_size).enumerate() {
            if chunk.len() < batch_size {
                break;
            }
            let batch: Vec<PairedSample> = chunk
                .iter()
                .map(|&i| match &self.cfg.augment {
                    Some(opts) => paired_augment(&self.samples[i], opts, &mut aug_rng),
                    None => Ok(self.samples[i].clone()),
                })
                .collect::<Result<_>>()?;
            let (images, targets, masks) = self.batch_tensors(&batch)?;
            let pred = self.net.forward(&images)?;
            let loss = masked_mse(&pred, &targets, &masks)?;
            let value = f64::from(loss.to_scalar::<f32>()?);
            if !value.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    step,
                    term: "mse".to_string(),
                });
            }
            let grads = loss.backward()?;
            self.opt.step(&grads)?;
            epoch_rows.push(DepthLossRow {
                epoch,
                step,
                mse: value,
            });
        }
        self.rows.extend_from_slice(&epoch_rows);
        self.next_epoch += 1;
        Ok(epoch_rows)
    }

    pub fn checkpoint_tensors(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut tensors = self.params.tensors()?;
        tensors.append(&mut self.opt.state_tensors("opt")?);
        Ok(tensors)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "depth",
            "format": 1,
            "epoch": self.next_epoch,
            "config": self.cfg,
        });
        save_checkpoint(path, &self.checkpoint_tensors()?, &meta)
    }

    pub fn resume(path: &Path, samples: &[PairedSample]) -> Result<Self> {
        let (tensors, meta) = load_checkpoint(path)?;
        let cfg = depth_config_from_meta(&meta, path)?;
        let epoch = meta["epoch"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint(format!("{}: missing epoch", path.display())))?
            as usize;
        let mut trainer = Self::new(cfg, samples)?;
        trainer.params.load(&tensors)?;
        trainer.opt.load_state("opt", &tensors)?;
        trainer.next_epoch = epoch;
        Ok(trainer)
    }
}

fn depth_config_from_meta(meta: &serde_json::Value, path: &Path) -> Result<DepthTrainConfig> {
    if meta["kind"] != "depth" {
        return Err(Error::Checkpoint(format!(
            "{}: expected a depth checkpoint, found kind {}",
            path.display(),
            meta["kind"]
        )));
    }
    let cfg: DepthTrainConfig = serde_json::from_value(meta["config"].clone())?;
    cfg.validate()?;
    Ok(cfg)
}

/// Depth net plus its training config, restored for inference.
pub struct LoadedDepthNet {
    pub net: DepthNet,
    pub config: DepthTrainConfig,
    pub epoch: usize,
}

pub fn load_depth_net(path: &Path) -> Result<LoadedDepthNet> {
    let (tensors, meta) = load_checkpoint(path)?;
    let cfg = depth_config_from_meta(&meta, path)?;
    let epoch = meta["epoch"].as_u64().unwrap_or(0) as usize;
    let mut ps = ParamSet::new();
    let mut rng = seeded_rng(0, "load");
    let net = DepthNet::new(&mut ps, "model", &mut rng, &cfg.model, DType::F32, &Device::Cpu)?;
    ps.load(&tensors)?;
    Ok(LoadedDepthNet {
        net,
        config: cfg,
        epoch,
    })
}

/// Predicts a fully valid depth map for one image. Inputs are zero-padded
/// to a multiple of 32 for the forward pass and cropped back.
pub fn predict_depth(net: &DepthNet, img: &Image, device: &Device) -> Result<DepthMap> {
    let (h, w) = (img.height(), img.width());
    let ph = h.div_ceil(32) * 32;
    let pw = w.div_ceil(32) * 32;
    let x = image_to_chw(img, device)?.unsqueeze(0)?;
    let x = if (ph, pw) != (h, w) {
        x.pad_with_zeros(2, 0, ph - h)?.pad_with_zeros(3, 0, pw - w)?
    } else {
        x
    };
    let y = net.forward(&x)?.squeeze(0)?.squeeze(0)?;
    let y = if (ph, pw) != (h, w) {
        y.narrow(0, 0, h)?.narrow(1, 0, w)?
    } else {
        y
    };
    let flat = y.flatten_all()?.to_vec1::<f32>()?;
    let values = ndarray::Array2::from_shape_fn((h, w), |(r, c)| f64::from(flat[r * w + c]));
    DepthMap::from_values(values)
}

/// Convenience wrapper: trains from scratch for `cfg.epochs` epochs.
pub fn train_depth(cfg: DepthTrainConfig, samples: &[PairedSample]) -> Result<DepthTrainer> {
    let mut trainer = DepthTrainer::new(cfg, samples)?;
    while trainer.completed_epochs() < trainer.config().epochs {
        trainer.run_epoch()?;
    }
    Ok(trainer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    fn tiny_model() -> DepthNetConfig {
        DepthNetConfig {
            base_width: 4,
            stage_blocks: vec![1, 1, 1, 1],
            output_scale_mm: 50.0,
        }
    }

    fn tiny_train_config() -> DepthTrainConfig {
        DepthTrainConfig {
            epochs: 1,
            batch_size: 2,
            learning_rate: 1e-3,
            model: tiny_model(),
            augment: None,
            seed: 7,
        }
    }

    fn toy_pairs(n: usize) -> Vec<PairedSample> {
        let cfg = crate::dataio::toygen::ToyConfig {
            resolution: 32,
            sequences: 1,
            frames_per_sequence: n,
            seed: 21,
        };
        crate::dataio::toygen::generate_domain_a(&cfg).unwrap()
    }

    #[test]
    fn forward_emits_positive_depth_at_input_resolution() {
        let device = Device::Cpu;
        let mut ps = ParamSet::new();
        let mut rng = seeded_rng(1, "m");
        let net = DepthNet::new(&mut ps, "m", &mut rng, &tiny_model(), DType::F32, &device).unwrap();
        let x = Tensor::rand(0f32, 1f32, (1, 3, 32, 64), &device).unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!(y.dims(), &[1, 1, 32, 64]);
        let flat = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(flat.iter().all(|&v| v > 0.0));

        let bad = Tensor::rand(0f32, 1f32, (1, 3, 48, 32), &device).unwrap();
        assert!(net.forward(&bad).is_err());
    }

    #[test]
    fn masked_mse_matches_hand_computation() {
        let device = Device::Cpu;
        let pred = Tensor::from_vec(vec![1f32, 2.0, 3.0, 4.0], (1, 1, 2, 2), &device).unwrap();
        let target = Tensor::from_vec(vec![1f32, 0.0, 0.0, 1.0], (1, 1, 2, 2), &device).unwrap();
        let mask = Tensor::from_vec(vec![1f32, 1.0, 0.0, 1.0], (1, 1, 2, 2), &device).unwrap();
        // Errors: 0, 4, (masked), 9 over 3 valid pixels.
        let v = masked_mse(&pred, &target, &mask)
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert_abs_diff_eq!(v, (0.0 + 4.0 + 9.0) / 3.0, epsilon = 1e-6);

        let zero_mask = Tensor::zeros((1, 1, 2, 2), DType::F32, &device).unwrap();
        assert!(matches!(
            masked_mse(&pred, &target, &zero_mask),
            Err(Error::NoValidPixels)
        ));
    }

    #[test]
    fn invalid_pixels_receive_no_gradient() {
        let device = Device::Cpu;
        let var = candle_core::Var::from_vec(vec![5f32, 5.0, 5.0, 5.0], (1, 1, 2, 2), &device)
            .unwrap();
        let target = Tensor::from_vec(vec![1f32, 2.0, 3.0, 4.0], (1, 1, 2, 2), &device).unwrap();
        let mask = Tensor::from_vec(vec![1f32, 0.0, 1.0, 0.0], (1, 1, 2, 2), &device).unwrap();
        let loss = masked_mse(var.as_tensor(), &target, &mask).unwrap();
        let grads = loss.backward().unwrap();
        let g = grads
            .get(&var)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        assert_ne!(g[0], 0.0);
        assert_eq!(g[1], 0.0);
        assert_ne!(g[2], 0.0);
        assert_eq!(g[3], 0.0);
    }

    #[test]
    fn training_reduces_loss_on_a_tiny_set() {
        let samples = toy_pairs(4);
        let cfg = DepthTrainConfig {
            epochs: 8,
            ..tiny_train_config()
        };
        let mut trainer = DepthTrainer::new(cfg, &samples).unwrap();
        let mut first = f64::NAN;
        let mut last = f64::NAN;
        for _ in 0..8 {
            let rows = trainer.run_epoch().unwrap();
            if first.is_nan() {
                first = rows[0].mse;
            }
            last = rows.last().unwrap().mse;
        }
        assert!(
            last < first,
            "loss should decrease: first={first}, last={last}"
        );
    }

    #[test]
    fn depth_training_is_deterministic() {
        let samples = toy_pairs(4);
        let run = || {
            let mut t = DepthTrainer::new(tiny_train_config(), &samples).unwrap();
            t.run_epoch().unwrap();
            t.rows().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_resume_replays_identically() {
        let dir = tempfile::tempdir().unwrap();
        let samples = toy_pairs(4);
        let cfg = DepthTrainConfig {
            epochs: 2,
            ..tiny_train_config()
        };

        let mut full = DepthTrainer::new(cfg.clone(), &samples).unwrap();
        full.run_epoch().unwrap();
        full.run_epoch().unwrap();

        let mut first = DepthTrainer::new(cfg, &samples).unwrap();
        first.run_epoch().unwrap();
        let ckpt = dir.path().join("epoch1.safetensors");
        first.save_checkpoint(&ckpt).unwrap();
        let mut resumed = DepthTrainer::resume(&ckpt, &samples).unwrap();
        resumed.run_epoch().unwrap();

        let full_epoch1: Vec<_> = full.rows().iter().filter(|r| r.epoch == 1).collect();
        let resumed_rows: Vec<_> = resumed.rows().iter().collect();
        assert_eq!(full_epoch1, resumed_rows);
        let t1 = full.checkpoint_tensors().unwrap();
        let t2 = resumed.checkpoint_tensors().unwrap();
        for (name, a) in &t1 {
            if a.dtype() == DType::F32 {
                assert_eq!(
                    a.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
                    t2[name].flatten_all().unwrap().to_vec1::<f32>().unwrap(),
                    "{name}"
                );
            }
        }
    }

    #[test]
    fn predict_depth_round_trips_through_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let samples = toy_pairs(2);
        let mut trainer = DepthTrainer::new(tiny_train_config(), &samples).unwrap();
        trainer.run_epoch().unwrap();
        let ckpt = dir.path().join("model.safetensors");
        trainer.save_checkpoint(&ckpt).unwrap();

        let loaded = load_depth_net(&ckpt).unwrap();
        let img = &samples[0].image;
        let before = predict_depth(trainer.net(), img, trainer.device()).unwrap();
        let after = predict_depth(&loaded.net, img, &Device::Cpu).unwrap();
        assert_eq!(before.values(), after.values());
        assert_eq!(before.valid_count(), 32 * 32);
    }

    #[test]
    fn predict_depth_pads_odd_sizes() {
        let device = Device::Cpu;
        let mut ps = ParamSet::new();
        let mut rng = seeded_rng(3, "m");
        let net = DepthNet::new(&mut ps, "m", &mut rng, &tiny_model(), DType::F32, &device).unwrap();
        let img = Image::constant(40, 52, 0.5).unwrap();
        let d = predict_depth(&net, &img, &device).unwrap();
        assert_eq!((d.height(), d.width()), (40, 52));
        assert!(d.values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn augmented_training_runs() {
        let samples = toy_pairs(4);
        let cfg = DepthTrainConfig {
            augment: Some(AugmentOptions {
                crop_height: 32,
                crop_width: 32,
                hflip_probability: 0.5,
            }),
            ..tiny_train_config()
        };
        let mut trainer = DepthTrainer::new(cfg, &samples).unwrap();
        let rows = trainer.run_epoch().unwrap();
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r.mse.is_finite()));
    }

    #[test]
    fn depth_values_survive_mask_round_trip() {
        // batch_tensors packs valid values and zeros elsewhere.
        let mut values = Array2::zeros((32, 32));
        let mut mask = Array2::from_elem((32, 32), false);
        values[(3, 4)] = 123.0;
        mask[(3, 4)] = true;
        let sample = PairedSample::new(
            Image::constant(32, 32, 0.5).unwrap(),
            DepthMap::new(values, mask).unwrap(),
            "s",
            0,
        )
        .unwrap();
        let trainer = DepthTrainer::new(tiny_train_config(), &[sample]).unwrap();
        let (_, targets, masks) = trainer.batch_tensors(&trainer.samples).unwrap();
        assert_eq!(
            targets.flatten_all().unwrap().to_vec1::<f32>().unwrap()[3 * 32 + 4],
            123.0
        );
        assert_eq!(
            masks.sum_all().unwrap().to_scalar::<f32>().unwrap(),
            1.0
        );
    }
}
