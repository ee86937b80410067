//! Small neural-network toolkit on top of candle: named parameter sets,
//! the layers the generators and regressors are built from, an Adam
//! optimizer whose state can be checkpointed, and a deterministic
//! checkpoint container.
//!
//! Everything here runs on CPU in `f32` and is bit-reproducible: parameter
//! initialization draws from an explicitly seeded stream in registration
//! order, and optimizer updates use plain tensor arithmetic.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::types::Image;
use crate::{Error, Result};

/// Derives an independent, platform-stable RNG for a named stream.
pub fn seeded_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}

/// Ordered collection of named trainable variables.
///
/// Registration order is the initialization-draw order, and names double as
/// checkpoint keys, so a fixed architecture always produces the same layout.
#[derive(Default)]
pub struct ParamSet {
    entries: Vec<(String, Var)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<Var> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name {name:?}"
            )));
        }
        let var = Var::from_tensor(&value)?;
        self.entries.push((name, var.clone()));
        Ok(var)
    }

    pub fn entries(&self) -> &[(String, Var)] {
        &self.entries
    }

    pub fn vars(&self) -> Vec<Var> {
        self.entries.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn named_vars(&self) -> Vec<(String, Var)> {
        self.entries.clone()
    }

    pub fn param_count(&self) -> usize {
        self.entries
            .iter()
            .map(|(_, v)| v.as_tensor().elem_count())
            .sum()
    }

    /// Snapshot of all parameters keyed by name. Values are deep copies:
    /// later optimizer steps write into variable storage in place, so a
    /// shallow clone would silently track future updates.
    pub fn tensors(&self) -> Result<BTreeMap<String, Tensor>> {
        self.entries
            .iter()
            .map(|(n, v)| Ok((n.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    /// Overwrites every parameter from a name-to-tensor map. Missing or
    /// shape-mismatched entries are errors; extra map entries are ignored.
    pub fn load(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.entries {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))?;
            if t.dims() != var.as_tensor().dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    t.dims(),
                    var.as_tensor().dims()
                )));
            }
            var.set(&t.to_dtype(var.as_tensor().dtype())?)?;
        }
        Ok(())
    }
}

fn uniform_tensor(
    rng: &mut ChaCha8Rng,
    bound: f64,
    shape: &[usize],
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    // Draw in f32 regardless of the target dtype so the f64 variant of a
    // network starts from exactly the same weights.
    let data: Vec<f32> = (0..n)
        .map(|_| rng.gen_range(-bound..bound) as f32)
        .collect();
    Ok(Tensor::from_vec(data, shape, device)?.to_dtype(dtype)?)
}

/// 2D convolution with zero padding.
pub struct Conv2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        rng: &mut ChaCha8Rng,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let fan_in = (in_c * kernel * kernel) as f64;
        let bound = fan_in.sqrt().recip();
        let weight = ps.add(
            format!("{name}.weight"),
            uniform_tensor(rng, bound, &[out_c, in_c, kernel, kernel], dtype, device)?,
        )?;
        let bias = ps.add(
            format!("{name}.bias"),
            uniform_tensor(rng, bound, &[out_c], dtype, device)?,
        )?;
        Ok(Self {
            weight,
            bias: Some(bias),
            stride,
            padding,
        })
    }

    /// Like [`Conv2d::new`] but with zero-initialized weights, so the layer
    /// starts as a no-op. Used for the closing convolution of residual
    /// blocks to make the block an identity at initialization.
    #[allow(clippy::too_many_arguments)]
    pub fn new_zeroed(
        ps: &mut ParamSet,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let weight = ps.add(
            format!("{name}.weight"),
            Tensor::zeros((out_c, in_c, kernel, kernel), dtype, device)?,
        )?;
        let bias = ps.add(format!("{name}.bias"), Tensor::zeros(out_c, dtype, device)?)?;
        Ok(Self {
            weight,
            bias: Some(bias),
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        match &self.bias {
            Some(b) => {
                let b = b.as_tensor().reshape((1, b.as_tensor().dim(0)?, 1, 1))?;
                Ok(y.broadcast_add(&b)?)
            }
            None => Ok(y),
        }
    }
}

/// Instance normalization with learned affine parameters.
///
/// Statistics are computed per sample and per channel over the spatial
/// dimensions, which keeps single-image inference identical to batched
/// training.
pub struct InstanceNorm2d {
    gamma: Var,
    beta: Var,
    eps: f64,
}

impl InstanceNorm2d {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        channels: usize,
        dtype: DType,
        device: &Device,
    ) -> Result<Self> {
        let gamma = ps.add(
            format!("{name}.gamma"),
            Tensor::ones(channels, dtype, device)?,
        )?;
        let beta = ps.add(
            format!("{name}.beta"),
            Tensor::zeros(channels, dtype, device)?,
        )?;
        Ok(Self {
            gamma,
            beta,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, _, _) = x.dims4()?;
        let mean = x.mean_keepdim(3)?.mean_keepdim(2)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(3)?.mean_keepdim(2)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let gamma = self.gamma.as_tensor().reshape((1, c, 1, 1))?;
        let beta = self.beta.as_tensor().reshape((1, c, 1, 1))?;
        Ok(normed.broadcast_mul(&gamma)?.broadcast_add(&beta)?)
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    // softplus(x) = max(x, 0) + ln(1 + e^{-|x|})
    let zeros = x.zeros_like()?;
    let pos = x.maximum(&zeros)?;
    let neg_abs = x.abs()?.neg()?;
    Ok((pos + (neg_abs.exp()? + 1.0)?.log()?)?)
}

/// Adam with bias correction. State (first and second moments plus the step
/// counter) can be exported and restored, so training resumes exactly.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    slots: Vec<AdamSlot>,
}

struct AdamSlot {
    name: String,
    var: Var,
    m: Tensor,
    v: Tensor,
}

impl Adam {
    pub fn new(params: Vec<(String, Var)>, lr: f64, beta1: f64, beta2: f64) -> Result<Self> {
        let slots = params
            .into_iter()
            .map(|(name, var)| {
                let m = var.as_tensor().zeros_like()?;
                let v = var.as_tensor().zeros_like()?;
                Ok(AdamSlot { name, var, m, v })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            slots,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for slot in &mut self.slots {
            let Some(grad) = grads.get(&slot.var) else {
                continue;
            };
            // Detach the updated moments: `grad` carries the whole backward
            // graph of this step, and chaining it into persistent state would
            // keep every step's graph alive for the length of the run.
            slot.m = ((&slot.m * self.beta1)? + (grad * (1.0 - self.beta1))?)?.detach();
            slot.v = ((&slot.v * self.beta2)? + (grad.sqr()? * (1.0 - self.beta2))?)?.detach();
            let m_hat = (&slot.m / bc1)?;
            let v_hat = (&slot.v / bc2)?;
            let update = ((m_hat * self.lr)? / (v_hat.sqrt()? + self.eps)?)?;
            slot.var.set(&(slot.var.as_tensor() - update)?)?;
        }
        Ok(())
    }

    /// Exports optimizer state under `{prefix}.m.*`, `{prefix}.v.*` and
    /// `{prefix}.t`.
    pub fn state_tensors(&self, prefix: &str) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for slot in &self.slots {
            out.insert(format!("{prefix}.m.{}", slot.name), slot.m.copy()?);
            out.insert(format!("{prefix}.v.{}", slot.name), slot.v.copy()?);
        }
        out.insert(
            format!("{prefix}.t"),
            Tensor::from_vec(vec![self.t as f64], 1, &Device::Cpu)?,
        );
        Ok(out)
    }

    pub fn load_state(&mut self, prefix: &str, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let t_key = format!("{prefix}.t");
        let t = tensors
            .get(&t_key)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {t_key:?}")))?;
        self.t = t.to_vec1::<f64>()?[0] as u64;
        for slot in &mut self.slots {
            for (field, target) in [("m", &mut slot.m), ("v", &mut slot.v)] {
                let key = format!("{prefix}.{field}.{}", slot.name);
                let t = tensors
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key:?}")))?;
                if t.dims() != target.dims() {
                    return Err(Error::Checkpoint(format!(
                        "tensor {key:?} has shape {:?}, expected {:?}",
                        t.dims(),
                        target.dims()
                    )));
                }
                *target = t.clone();
            }
        }
        Ok(())
    }
}

struct RawTensor {
    dtype: safetensors::Dtype,
    shape: Vec<usize>,
    bytes: Vec<u8>,
}

impl safetensors::tensor::View for RawTensor {
    fn dtype(&self) -> safetensors::Dtype {
        self.dtype
    }

    fn shape(&self) -> &[usize] {
        &self.shape
    }

    fn data(&self) -> std::borrow::Cow<'_, [u8]> {
        std::borrow::Cow::Borrowed(&self.bytes)
    }

    fn data_len(&self) -> usize {
        self.bytes.len()
    }
}

fn raw_tensor(t: &Tensor) -> Result<RawTensor> {
    let shape = t.dims().to_vec();
    let flat = t.flatten_all()?;
    let (dtype, bytes) = match t.dtype() {
        DType::F32 => {
            let v = flat.to_vec1::<f32>()?;
            let mut bytes = Vec::with_capacity(v.len() * 4);
            for x in v {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            (safetensors::Dtype::F32, bytes)
        }
        DType::F64 => {
            let v = flat.to_vec1::<f64>()?;
            let mut bytes = Vec::with_capacity(v.len() * 8);
            for x in v {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            (safetensors::Dtype::F64, bytes)
        }
        other => {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint dtype {other:?}"
            )))
        }
    };
    Ok(RawTensor {
        dtype,
        shape,
        bytes,
    })
}

/// Writes tensors plus a JSON metadata document to a safetensors file.
///
/// Tensor order and the single metadata key are both canonical, so the same
/// inputs always produce byte-identical files.
pub fn save_checkpoint(
    path: &Path,
    tensors: &BTreeMap<String, Tensor>,
    meta: &serde_json::Value,
) -> Result<()> {
    let mut views = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        views.push((name.clone(), raw_tensor(t)?));
    }
    let mut header = std::collections::HashMap::new();
    header.insert("meta".to_string(), serde_json::to_string(meta)?);
    safetensors::tensor::serialize_to_file(views, &Some(header), path)
        .map_err(|e| Error::Checkpoint(format!("write {}: {e}", path.display())))?;
    Ok(())
}

/// Reads back tensors and the metadata document written by
/// [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(BTreeMap<String, Tensor>, serde_json::Value)> {
    let bytes = std::fs::read(path)?;
    let loaded = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
    let tensors: BTreeMap<String, Tensor> = loaded.into_iter().collect();
    let (_, meta_block) = safetensors::tensor::SafeTensors::read_metadata(&bytes)
        .map_err(|e| Error::Checkpoint(format!("read {}: {e}", path.display())))?;
    let meta = match meta_block.metadata() {
        Some(m) => {
            let raw = m.get("meta").ok_or_else(|| {
                Error::Checkpoint(format!("{} has no meta entry", path.display()))
            })?;
            serde_json::from_str(raw)?
        }
        None => {
            return Err(Error::Checkpoint(format!(
                "{} has no metadata header",
                path.display()
            )))
        }
    };
    Ok((tensors, meta))
}

/// `[H, W, 3]` image to a `[3, H, W]` `f32` tensor.
pub fn image_to_chw(img: &Image, device: &Device) -> Result<Tensor> {
    let (h, w, _) = img.data().dim();
    let mut chw = vec![0f32; 3 * h * w];
    for ((r, c, ch), &v) in img.data().indexed_iter() {
        chw[ch * h * w + r * w + c] = v;
    }
    Ok(Tensor::from_vec(chw, (3, h, w), device)?)
}

/// `[3, H, W]` tensor back to an image, clamping into `[0,1]`.
pub fn chw_to_image(t: &Tensor) -> Result<Image> {
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(Error::InvalidArgument(format!(
            "expected 3 channels, got {c}"
        )));
    }
    let flat = t.flatten_all()?.to_vec1::<f32>()?;
    let data = Array3::from_shape_fn((h, w, 3), |(r, col, ch)| {
        flat[ch * h * w + r * w + col].clamp(0.0, 1.0)
    });
    Image::new(data)
}
