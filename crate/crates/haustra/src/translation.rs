//! Unpaired image translation with cycle consistency and a
//! mutual-information structure constraint.
//!
//! Two generators learn opposite directions (`gen_ab`: synthetic to real,
//! `gen_ba`: real to synthetic) against per-domain discriminators. The
//! objective combines three terms:
//!
//! * adversarial cross-entropy for both direction pairs, reported as the
//!   game value `E[ln D(real)] + E[ln(1 - D(fake))]`; the generators
//!   themselves descend the non-saturating surrogate `-ln D(fake)`;
//! * an L1 cycle term pulling `gen_ba(gen_ab(a))` back to `a` and
//!   `gen_ab(gen_ba(b))` back to `b`;
//! * the negative soft-binned mutual information between each translated
//!   synthetic frame and its ground-truth depth, which is what keeps
//!   intensity structure attached to geometry.
//!
//! Training is bit-reproducible: parameter initialization, batch order and
//! every update are derived from named RNG streams of the configured seed,
//! and per-epoch state is derived statelessly so a resumed run replays the
//! remaining epochs exactly.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::miloss::{bin_depth, intensity_graph, mi_loss_graph, DepthBinning, HistogramSpec};
use crate::nn::{
    chw_to_image, image_to_chw, leaky_relu, load_checkpoint, save_checkpoint, seeded_rng,
    softplus, Adam, Conv2d, InstanceNorm2d, ParamSet,
};
use crate::types::{Image, LossWeights, PairedSample, UnpairedSample};
use crate::{Error, Result};

/// Generator architecture knobs. The shape is a small ResNet-style
/// encoder/decoder: 7x7 stem, two stride-2 downsamplings, `res_blocks`
/// residual blocks, two nearest-upsample stages, 7x7 head with a sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub base_width: usize,
    pub res_blocks: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            base_width: 32,
            res_blocks: 4,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.res_blocks == 0 {
            return Err(Error::InvalidArgument(
                "generator width and residual block count must be positive".into(),
            ));
        }
        Ok(())
    }
}

struct ResBlock {
    conv1: Conv2d,
    norm1: InstanceNorm2d,
    conv2: Conv2d,
}

impl ResBlock {
    fn new(
        ps: &mut ParamSet,
        name: &str,
        rng: &mut rand_chacha::ChaCha8Rng,
        width: usize,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let conv1 = Conv2d::new(
            ps,
            &format!("{name}.conv1"),
            rng,
            width,
            width,
            3,
            1,
            1,
            dtype,
            device,
        )?;
        let norm1 = InstanceNorm2d::new(ps, &format!("{name}.norm1"), width, dtype, device)?;
        // Zero-initialized closing convolution makes the whole block an
        // identity at the start of training.
        let conv2 = Conv2d::new_zeroed(
            ps,
            &format!("{name}.conv2"),
            width,
            width,
            3,
            1,
            1,
            dtype,
            device,
        )?;
        Ok(Self {
            conv1,
            norm1,
            conv2,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv1.forward(x)?;
        let y = self.norm1.forward(&y)?.relu()?;
        let y = self.conv2.forward(&y)?;
        Ok((x + y)?)
    }
}

pub struct Generator {
    stem: Conv2d,
    stem_norm: InstanceNorm2d,
    down1: Conv2d,
    down1_norm: InstanceNorm2d,
    down2: Conv2d,
    down2_norm: InstanceNorm2d,
    blocks: Vec<ResBlock>,
    up1: Conv2d,
    up1_norm: InstanceNorm2d,
    up2: Conv2d,
    up2_norm: InstanceNorm2d,
    head: Conv2d,
}

impl Generator {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        rng: &mut rand_chacha::ChaCha8Rng,
        cfg: &GeneratorConfig,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.base_width;
        let stem = Conv2d::new(ps, &format!("{name}.stem"), rng, 3, w, 7, 1, 3, dtype, device)?;
        let stem_norm = InstanceNorm2d::new(ps, &format!("{name}.stem_norm"), w, dtype, device)?;
        let down1 = Conv2d::new(
            ps,
            &format!("{name}.down1"),
            rng,
            w,
            2 * w,
            3,
            2,
            1,
            dtype,
            device,
        )?;
        let down1_norm =
            InstanceNorm2d::new(ps, &format!("{name}.down1_norm"), 2 * w, dtype, device)?;
        let down2 = Conv2d::new(
            ps,
            &format!("{name}.down2"),
            rng,
            2 * w,
            4 * w,
            3,
            2,
            1,
            dtype,
            device,
        )?;
        let down2_norm =
            InstanceNorm2d::new(ps, &format!("{name}.down2_norm"), 4 * w, dtype, device)?;
        let blocks = (0..cfg.res_blocks)
            .map(|i| {
                ResBlock::new(
                    ps,
                    &format!("{name}.block{i}"),
                    rng,
                    4 * w,
                    dtype,
                    device,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let up1 = Conv2d::new(
            ps,
            &format!("{name}.up1"),
            rng,
            4 * w,
            2 * w,
            3,
            1,
            1,
            dtype,
            device,
        )?;
        let up1_norm = InstanceNorm2d::new(ps, &format!("{name}.up1_norm"), 2 * w, dtype, device)?;
        let up2 = Conv2d::new(
            ps,
            &format!("{name}.up2"),
            rng,
            2 * w,
            w,
            3,
            1,
            1,
            dtype,
            device,
        )?;
        let up2_norm = InstanceNorm2d::new(ps, &format!("{name}.up2_norm"), w, dtype, device)?;
        let head = Conv2d::new(ps, &format!("{name}.head"), rng, w, 3, 7, 1, 3, dtype, device)?;
        Ok(Self {
            stem,
            stem_norm,
            down1,
            down1_norm,
            down2,
            down2_norm,
            blocks,
            up1,
            up1_norm,
            up2,
            up2_norm,
            head,
        })
    }

    /// `[N, 3, H, W]` to `[N, 3, H, W]`, output in `(0,1)` via sigmoid.
    /// Spatial dimensions must be divisible by 4.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::InvalidArgument(format!(
                "generator input must have sides divisible by 4, got {h}x{w}"
            )));
        }
        let y = self.stem_norm.forward(&self.stem.forward(x)?)?.relu()?;
        let y = self.down1_norm.forward(&self.down1.forward(&y)?)?.relu()?;
        let mut y = self.down2_norm.forward(&self.down2.forward(&y)?)?.relu()?;
        for block in &self.blocks {
            y = block.forward(&y)?;
        }
        let (_, _, hq, wq) = y.dims4()?;
        let y = y.upsample_nearest2d(hq * 2, wq * 2)?;
        let y = self.up1_norm.forward(&self.up1.forward(&y)?)?.relu()?;
        let y = y.upsample_nearest2d(hq * 4, wq * 4)?;
        let y = self.up2_norm.forward(&self.up2.forward(&y)?)?.relu()?;
        Ok(candle_nn::ops::sigmoid(&self.head.forward(&y)?)?)
    }
}

/// Patch discriminator: stride-2 convolution stack emitting a logit map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub base_width: usize,
    pub layers: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            base_width: 32,
            layers: 3,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.layers == 0 {
            return Err(Error::InvalidArgument(
                "discriminator width and layer count must be positive".into(),
            ));
        }
        Ok(())
    }
}

pub struct Discriminator {
    convs: Vec<Conv2d>,
    norms: Vec<Option<InstanceNorm2d>>,
    head: Conv2d,
}

impl Discriminator {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        rng: &mut rand_chacha::ChaCha8Rng,
        cfg: &DiscriminatorConfig,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut in_c = 3;
        for i in 0..cfg.layers {
            let out_c = cfg.base_width << i.min(3);
            convs.push(Conv2d::new(
                ps,
                &format!("{name}.conv{i}"),
                rng,
                in_c,
                out_c,
                4,
                2,
                1,
                dtype,
                device,
            )?);
            norms.push(if i == 0 {
                None
            } else {
                Some(InstanceNorm2d::new(
                    ps,
                    &format!("{name}.norm{i}"),
                    out_c,
                    dtype,
                    device,
                )?)
            });
            in_c = out_c;
        }
        let head = Conv2d::new(ps, &format!("{name}.head"), rng, in_c, 1, 4, 1, 1, dtype, device)?;
        Ok(Self { convs, norms, head })
    }

    /// `[N, 3, H, W]` to a patch logit map `[N, 1, h, w]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            y = conv.forward(&y)?;
            if let Some(n) = norm {
                y = n.forward(&y)?;
            }
            y = leaky_relu(&y, 0.2)?;
        }
        self.head.forward(&y)
    }
}

/// Cross-entropy discriminator loss from logits:
/// `mean softplus(-real) + mean softplus(fake)`.
///
/// Its negative is the adversarial game value
/// `E[ln D(real)] + E[ln(1 - D(fake))]`.
pub fn discriminator_loss(real_logits: &Tensor, fake_logits: &Tensor) -> Result<Tensor> {
    let real = softplus(&real_logits.neg()?)?.mean_all()?;
    let fake = softplus(fake_logits)?.mean_all()?;
    Ok((real + fake)?)
}

/// Non-saturating generator surrogate: `mean softplus(-fake)`, i.e.
/// `-E[ln D(fake)]`.
pub fn generator_adversarial_loss(fake_logits: &Tensor) -> Result<Tensor> {
    Ok(softplus(&fake_logits.neg()?)?.mean_all()?)
}

/// L1 cycle-consistency over both reconstruction directions.
pub fn cycle_loss(
    real_a: &Tensor,
    rec_a: &Tensor,
    real_b: &Tensor,
    rec_b: &Tensor,
) -> Result<Tensor> {
    let a = (rec_a - real_a)?.abs()?.mean_all()?;
    let b = (rec_b - real_b)?.abs()?.mean_all()?;
    Ok((a + b)?)
}

/// Per-term values of the full objective for one batch. Adversarial terms
/// are game values (larger means the discriminator separates better); `mi`
/// is the loss form, i.e. negative mutual information in nats, and is zero
/// when the term is disabled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub gan_g: f64,
    pub gan_f: f64,
    pub cyc: f64,
    pub mi: f64,
}

impl LossBreakdown {
    /// Weighted combination:
    /// `lambda_gan * (gan_g + gan_f) + lambda_cyc * cyc + lambda_mi * mi`.
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.lambda_gan * (self.gan_g + self.gan_f) + w.lambda_cyc * self.cyc + w.lambda_mi * self.mi
    }
}

/// One logged training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub step: usize,
    pub gan_g: f64,
    pub gan_f: f64,
    pub cyc: f64,
    pub mi: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub histogram: HistogramSpec,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub seed: u64,
    /// Optional identity term `0.5 * lambda_cyc * (|G(b)-b| + |F(a)-a|)`.
    pub identity_loss: bool,
    /// Optional history buffer of past fakes for discriminator updates.
    /// Resuming a run does not replay the buffer contents, so leave this
    /// off when bit-reproducible resumes matter.
    pub fake_pool: bool,
    pub fake_pool_size: usize,
    /// Linearly decay the learning rate to zero over the second half of
    /// training.
    pub lr_decay: bool,
}

impl Default for TranslationConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            learning_rate: 2e-4,
            weights: LossWeights::default(),
            histogram: HistogramSpec::new(
                HistogramSpec::DEFAULT_BINS,
                crate::dataio::toygen::TOY_DEPTH_MIN_MM,
                crate::dataio::toygen::TOY_DEPTH_MAX_MM,
            )
            .expect("default histogram spec is valid"),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            seed: 0,
            identity_loss: false,
            fake_pool: false,
            fake_pool_size: 50,
            lr_decay: false,
        }
    }
}

impl TranslationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.fake_pool && self.fake_pool_size == 0 {
            return Err(Error::InvalidArgument(
                "fake pool size must be positive when the pool is enabled".into(),
            ));
        }
        self.weights.validate()?;
        self.histogram.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()
    }
}

struct FakePool {
    capacity: usize,
    buffer: Vec<Tensor>,
    rng: rand_chacha::ChaCha8Rng,
}

impl FakePool {
    fn new(capacity: usize, seed: u64) -> Self {
        Self {
            capacity,
            buffer: Vec::new(),
            rng: seeded_rng(seed, "fake_pool"),
        }
    }

    /// Standard history trick: grow until full, then with probability 1/2
    /// swap the incoming fake for a stored one.
    fn query(&mut self, fake: Tensor) -> Tensor {
        use rand::Rng;
        if self.buffer.len() < self.capacity {
            self.buffer.push(fake.clone());
            return fake;
        }
        if self.rng.gen_bool(0.5) {
            let idx = self.rng.gen_range(0..self.buffer.len());
            std::mem::replace(&mut self.buffer[idx], fake)
        } else {
            fake
        }
    }
}

/// Full training session: both generators, both discriminators, their
/// optimizers, and the cached training tensors.
pub struct TranslationTrainer {
    cfg: TranslationConfig,
    device: Device,
    gen_ab: Generator,
    gen_ba: Generator,
    disc_a: Discriminator,
    disc_b: Discriminator,
    params_g: ParamSet,
    params_d: ParamSet,
    opt_g: Adam,
    opt_d: Adam,
    a_images: Vec<Tensor>,
    a_binnings: Vec<DepthBinning>,
    b_images: Vec<Tensor>,
    next_epoch: usize,
    pool_a: Option<FakePool>,
    pool_b: Option<FakePool>,
    rows: Vec<LossRow>,
}

impl TranslationTrainer {
    pub fn new(
        cfg: TranslationConfig,
        paired_a: &[PairedSample],
        unpaired_b: &[UnpairedSample],
    ) -> Result<Self> {
        cfg.validate()?;
        if paired_a.is_empty() {
            return Err(Error::EmptyInput("domain A training set".into()));
        }
        if unpaired_b.is_empty() {
            return Err(Error::EmptyInput("domain B training set".into()));
        }
        let device = Device::Cpu;
        let dtype = DType::F32;

        let mut params_g = ParamSet::new();
        let mut rng_g = seeded_rng(cfg.seed, "init/generators");
        let gen_ab = Generator::new(&mut params_g, "gen_ab", &mut rng_g, &cfg.generator, dtype, &device)?;
        let gen_ba = Generator::new(&mut params_g, "gen_ba", &mut rng_g, &cfg.generator, dtype, &device)?;

        let mut params_d = ParamSet::new();
        let mut rng_d = seeded_rng(cfg.seed, "init/discriminators");
        let disc_a = Discriminator::new(
            &mut params_d,
            "disc_a",
            &mut rng_d,
            &cfg.discriminator,
            dtype,
            &device,
        )?;
        let disc_b = Discriminator::new(
            &mut params_d,
            "disc_b",
            &mut rng_d,
            &cfg.discriminator,
            dtype,
            &device,
        )?;

        let opt_g = Adam::new(params_g.named_vars(), cfg.learning_rate, 0.5, 0.999)?;
        let opt_d = Adam::new(params_d.named_vars(), cfg.learning_rate, 0.5, 0.999)?;

        let mut a_images = Vec::with_capacity(paired_a.len());
        let mut a_binnings = Vec::with_capacity(paired_a.len());
        for sample in paired_a {
            a_images.push(image_to_chw(&sample.image, &device)?);
            a_binnings.push(bin_depth(&sample.depth, &cfg.histogram, dtype, &device)?);
        }
        let b_images = unpaired_b
            .iter()
            .map(|s| image_to_chw(&s.image, &device))
            .collect::<Result<Vec<_>>>()?;

        let pool_a = cfg
            .fake_pool
            .then(|| FakePool::new(cfg.fake_pool_size, cfg.seed ^ 0xa));
        let pool_b = cfg
            .fake_pool
            .then(|| FakePool::new(cfg.fake_pool_size, cfg.seed ^ 0xb));

        Ok(Self {
            cfg,
            device,
            gen_ab,
            gen_ba,
            disc_a,
            disc_b,
            params_g,
            params_d,
            opt_g,
            opt_d,
            a_images,
            a_binnings,
            b_images,
            next_epoch: 0,
            pool_a,
            pool_b,
            rows: Vec::new(),
        })
    }

    pub fn config(&self) -> &TranslationConfig {
        &self.cfg
    }

    /// Retargets the total epoch count. A resumed run may ask for a longer
    /// (or shorter) schedule than the checkpoint recorded; the checkpoint
    /// written at the end should describe the schedule actually in force.
    pub fn set_target_epochs(&mut self, epochs: usize) {
        self.cfg.epochs = epochs;
    }

    /// Index of the next epoch to run (also the number of completed epochs).
    pub fn completed_epochs(&self) -> usize {
        self.next_epoch
    }

    pub fn rows(&self) -> &[LossRow] {
        &self.rows
    }

    pub fn generator_ab(&self) -> &Generator {
        &self.gen_ab
    }

    pub fn generator_ba(&self) -> &Generator {
        &self.gen_ba
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn epoch_lr(&self, epoch: usize) -> f64 {
        if !self.cfg.lr_decay {
            return self.cfg.learning_rate;
        }
        let half = self.cfg.epochs / 2;
        if epoch < half {
            self.cfg.learning_rate
        } else {
            let remain = (self.cfg.epochs - epoch) as f64;
            let span = (self.cfg.epochs - half) as f64;
            self.cfg.learning_rate * (remain / span.max(1.0))
        }
    }

    fn stack(&self, tensors: &[Tensor], indices: &[usize]) -> Result<Tensor> {
        let views: Vec<Tensor> = indices.iter().map(|&i| tensors[i].clone()).collect();
        Ok(Tensor::stack(&views, 0)?)
    }

    /// Mean MI loss over the batch: each translated frame is scored against
    /// the pre-binned depth of its source sample.
    fn batch_mi_loss(&self, fake_b: &Tensor, a_indices: &[usize]) -> Result<Tensor> {
        let mut acc: Option<Tensor> = None;
        for (k, &idx) in a_indices.iter().enumerate() {
            let frame = fake_b.narrow(0, k, 1)?.squeeze(0)?;
            let plane = intensity_graph(&frame)?;
            let term = mi_loss_graph(&self.a_binnings[idx], &plane, &self.cfg.histogram)?;
            acc = Some(match acc {
                Some(t) => (t + term)?,
                None => term,
            });
        }
        Ok((acc.expect("non-empty batch") / a_indices.len() as f64)?)
    }

    /// Forward pass of all loss terms on one batch, without touching any
    /// parameters. The MI term is skipped entirely (reported as 0) when
    /// `lambda_mi` is zero, so disabling it cannot perturb the other terms.
    pub fn evaluate_batch(&self, a_indices: &[usize], b_indices: &[usize]) -> Result<LossBreakdown> {
        let real_a = self.stack(&self.a_images, a_indices)?;
        let real_b = self.stack(&self.b_images, b_indices)?;
        let fake_b = self.gen_ab.forward(&real_a)?;
        let fake_a = self.gen_ba.forward(&real_b)?;
        let rec_a = self.gen_ba.forward(&fake_b)?;
        let rec_b = self.gen_ab.forward(&fake_a)?;

        let gan_g = -scalar(&discriminator_loss(
            &self.disc_b.forward(&real_b)?,
            &self.disc_b.forward(&fake_b)?,
        )?)?;
        let gan_f = -scalar(&discriminator_loss(
            &self.disc_a.forward(&real_a)?,
            &self.disc_a.forward(&fake_a)?,
        )?)?;
        let cyc = scalar(&cycle_loss(&real_a, &rec_a, &real_b, &rec_b)?)?;
        let mi = if self.cfg.weights.lambda_mi > 0.0 {
            scalar(&self.batch_mi_loss(&fake_b, a_indices)?)?
        } else {
            0.0
        };
        Ok(LossBreakdown {
            gan_g,
            gan_f,
            cyc,
            mi,
        })
    }

    /// Runs one epoch of alternating generator/discriminator updates and
    /// returns the logged rows.
    pub fn run_epoch(&mut self) -> Result<Vec<LossRow>> {
        let epoch = self.next_epoch;
        let lr = self.epoch_lr(epoch);
        self.opt_g.set_learning_rate(lr);
        self.opt_d.set_learning_rate(lr);

        // Stateless per-epoch shuffles make resumed runs identical.
        let mut order_rng = seeded_rng(self.cfg.seed, &format!("order/{epoch}"));
        let mut a_order: Vec<usize> = (0..self.a_images.len()).collect();
        let mut b_order: Vec<usize> = (0..self.b_images.len()).collect();
        a_order.shuffle(&mut order_rng);
        b_order.shuffle(&mut order_rng);

        let batch = self.cfg.batch_size.min(self.a_images.len());
        let mut b_cursor = 0usize;
        let mut epoch_rows = Vec::new();

        for (step, chunk) in a_order.chunks(batch).enumerate() {
            if chunk.len() < batch {
                break;
            }
            let b_indices: Vec<usize> = (0..chunk.len())
                .map(|k| b_order[(b_cursor + k) % b_order.len()])
                .collect();
            b_cursor = (b_cursor + chunk.len()) % b_order.len();

            let row = self.train_step(epoch, step, chunk, &b_indices)?;
            epoch_rows.push(row);
        }

        self.rows.extend_from_slice(&epoch_rows);
        self.next_epoch += 1;
        Ok(epoch_rows)
    }

    fn train_step(
        &mut self,
        epoch: usize,
        step: usize,
        a_indices: &[usize],
        b_indices: &[usize],
    ) -> Result<LossRow> {
        let w = self.cfg.weights;
        let real_a = self.stack(&self.a_images, a_indices)?;
        let real_b = self.stack(&self.b_images, b_indices)?;

        // Generator update.
        let fake_b = self.gen_ab.forward(&real_a)?;
        let fake_a = self.gen_ba.forward(&real_b)?;
        let rec_a = self.gen_ba.forward(&fake_b)?;
        let rec_b = self.gen_ab.forward(&fake_a)?;

        let adv_g = generator_adversarial_loss(&self.disc_b.forward(&fake_b)?)?;
        let adv_f = generator_adversarial_loss(&self.disc_a.forward(&fake_a)?)?;
        let cyc = cycle_loss(&real_a, &rec_a, &real_b, &rec_b)?;

        let mut g_total = ((adv_g + adv_f)? * w.lambda_gan)?;
        g_total = (g_total + (cyc.clone() * w.lambda_cyc)?)?;
        if self.cfg.identity_loss {
            let idt_b = (self.gen_ab.forward(&real_b)? - &real_b)?.abs()?.mean_all()?;
            let idt_a = (self.gen_ba.forward(&real_a)? - &real_a)?.abs()?.mean_all()?;
            g_total = (g_total + ((idt_a + idt_b)? * (0.5 * w.lambda_cyc))?)?;
        }
        let mi_value = if w.lambda_mi > 0.0 {
            let mi = self.batch_mi_loss(&fake_b, a_indices)?;
            let v = scalar(&mi)?;
            g_total = (g_total + (mi * w.lambda_mi)?)?;
            v
        } else {
            0.0
        };
        let g_grads = g_total.backward()?;
        self.opt_g.step(&g_grads)?;

        // Discriminator update on detached fakes.
        let mut fake_b_d = fake_b.detach();
        let mut fake_a_d = fake_a.detach();
        if let Some(pool) = &mut self.pool_b {
            fake_b_d = pool.query(fake_b_d);
        }
        if let Some(pool) = &mut self.pool_a {
            fake_a_d = pool.query(fake_a_d);
        }
        let d_b_loss = discriminator_loss(
            &self.disc_b.forward(&real_b)?,
            &self.disc_b.forward(&fake_b_d)?,
        )?;
        let d_a_loss = discriminator_loss(
            &self.disc_a.forward(&real_a)?,
            &self.disc_a.forward(&fake_a_d)?,
        )?;
        let d_total = ((d_b_loss.clone() + d_a_loss.clone())? * 0.5)?;
        let d_grads = d_total.backward()?;
        self.opt_d.step(&d_grads)?;

        let breakdown = LossBreakdown {
            gan_g: -scalar(&d_b_loss)?,
            gan_f: -scalar(&d_a_loss)?,
            cyc: scalar(&cyc)?,
            mi: mi_value,
        };
        let row = LossRow {
            epoch,
            step,
            gan_g: breakdown.gan_g,
            gan_f: breakdown.gan_f,
            cyc: breakdown.cyc,
            mi: breakdown.mi,
            total: breakdown.total(&w),
        };
        for (term, v) in [
            ("gan_G", row.gan_g),
            ("gan_F", row.gan_f),
            ("cyc", row.cyc),
            ("mi", row.mi),
            ("total", row.total),
        ] {
            if !v.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    step,
                    term: term.to_string(),
                });
            }
        }
        Ok(row)
    }

    /// Serializable state: all network parameters plus both optimizers.
    pub fn checkpoint_tensors(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut tensors = self.params_g.tensors()?;
        tensors.append(&mut self.params_d.tensors()?);
        tensors.append(&mut self.opt_g.state_tensors("opt_g")?);
        tensors.append(&mut self.opt_d.state_tensors("opt_d")?);
        Ok(tensors)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "translation",
            "format": 1,
            "epoch": self.next_epoch,
            "config": self.cfg,
        });
        save_checkpoint(path, &self.checkpoint_tensors()?, &meta)
    }

    /// Restores a trainer from a checkpoint to continue training on the
    /// given data. The configuration is taken from the checkpoint.
    pub fn resume(
        path: &Path,
        paired_a: &[PairedSample],
        unpaired_b: &[UnpairedSample],
    ) -> Result<Self> {
        let (tensors, meta) = load_checkpoint(path)?;
        let cfg = translation_config_from_meta(&meta, path)?;
        let epoch = meta["epoch"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint(format!("{}: missing epoch", path.display())))?
            as usize;
        let mut trainer = Self::new(cfg, paired_a, unpaired_b)?;
        trainer.params_g.load(&tensors)?;
        trainer.params_d.load(&tensors)?;
        trainer.opt_g.load_state("opt_g", &tensors)?;
        trainer.opt_d.load_state("opt_d", &tensors)?;
        trainer.next_epoch = epoch;
        Ok(trainer)
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(f64::from(t.to_scalar::<f32>()?))
}

fn translation_config_from_meta(meta: &serde_json::Value, path: &Path) -> Result<TranslationConfig> {
    if meta["kind"] != "translation" {
        return Err(Error::Checkpoint(format!(
            "{}: expected a translation checkpoint, found kind {}",
            path.display(),
            meta["kind"]
        )));
    }
    let cfg: TranslationConfig = serde_json::from_value(meta["config"].clone())?;
    cfg.validate()?;
    Ok(cfg)
}

/// Generators recovered from a checkpoint for inference.
pub struct LoadedTranslation {
    pub gen_ab: Generator,
    pub gen_ba: Generator,
    pub config: TranslationConfig,
    pub epoch: usize,
}

/// Loads both generators (and the recorded config) from a translation
/// checkpoint. Discriminator and optimizer tensors are ignored.
pub fn load_translation(path: &Path) -> Result<LoadedTranslation> {
    let (tensors, meta) = load_checkpoint(path)?;
    let cfg = translation_config_from_meta(&meta, path)?;
    let epoch = meta["epoch"].as_u64().unwrap_or(0) as usize;
    let device = Device::Cpu;
    let mut ps = ParamSet::new();
    let mut rng = seeded_rng(0, "load");
    let gen_ab = Generator::new(&mut ps, "gen_ab", &mut rng, &cfg.generator, DType::F32, &device)?;
    let gen_ba = Generator::new(&mut ps, "gen_ba", &mut rng, &cfg.generator, DType::F32, &device)?;
    ps.load(&tensors)?;
    Ok(LoadedTranslation {
        gen_ab,
        gen_ba,
        config: cfg,
        epoch,
    })
}

/// Applies a generator to a single image. Inputs whose sides are not
/// divisible by 4 are zero-padded on the bottom/right for the forward pass
/// and cropped back afterwards.
pub fn translate(gen: &Generator, img: &Image, device: &Device) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    let ph = h.div_ceil(4) * 4;
    let pw = w.div_ceil(4) * 4;
    let x = image_to_chw(img, device)?.unsqueeze(0)?;
    let x = if (ph, pw) != (h, w) {
        x.pad_with_zeros(2, 0, ph - h)?.pad_with_zeros(3, 0, pw - w)?
    } else {
        x
    };
    let y = gen.forward(&x)?.squeeze(0)?;
    let y = if (ph, pw) != (h, w) {
        y.narrow(1, 0, h)?.narrow(2, 0, w)?
    } else {
        y
    };
    chw_to_image(&y)
}

/// Convenience wrapper: trains from scratch for `cfg.epochs` epochs.
pub fn train_translation(
    cfg: TranslationConfig,
    paired_a: &[PairedSample],
    unpaired_b: &[UnpairedSample],
) -> Result<TranslationTrainer> {
    let mut trainer = TranslationTrainer::new(cfg, paired_a, unpaired_b)?;
    while trainer.completed_epochs() < trainer.config().epochs {
        trainer.run_epoch()?;
    }
    Ok(trainer)
}
