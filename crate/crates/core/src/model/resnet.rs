//! 18-layer residual network with a single-logit head.
//!
//! Parameter names follow the torchvision layout (`conv1.weight`,
//! `layer2.0.downsample.1.running_mean`, `fc.bias`, ...) so an ImageNet
//! checkpoint exported to safetensors loads without renaming.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, ModuleT, Tensor, Var};
use candle_nn::{
    batch_norm, conv2d_no_bias, linear, BatchNorm, Conv2d, Conv2dConfig, Linear, VarBuilder, VarMap,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Shape knobs for the backbone. The defaults are the standard network on
/// full-resolution input; narrower widths and input downsampling exist for
/// quick desk-scale runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    /// Channels of the first stage; later stages use 2×, 4×, 8×.
    pub base_width: usize,
    /// Integer average-pooling factor applied to the input image.
    pub input_downsample: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            base_width: 64,
            input_downsample: 1,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.input_downsample == 0 {
            return Err(Error::Config(
                "base_width and input_downsample must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn feature_width(&self) -> usize {
        self.base_width * 8
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WeightSource {
    /// Backbone tensors read from a safetensors file; the head is freshly
    /// initialized.
    Pretrained { path: PathBuf },
    /// Seeded random initialization of every parameter.
    Random,
}

struct BasicBlock {
    conv1: PaddedConv,
    bn1: BatchNorm,
    conv2: PaddedConv,
    bn2: BatchNorm,
    downsample: Option<(PaddedConv, BatchNorm)>,
}

/// Convolution with explicit zero padding. The padded input is trimmed so
/// that `(len - k)` is a multiple of the stride; the trimmed rows are never
/// read by any window, so outputs match an ordinary padded convolution.
/// Trimming keeps the backward pass on the path where candle derives the
/// transposed-convolution output padding correctly for non-square inputs.
struct PaddedConv {
    conv: Conv2d,
    k: usize,
    stride: usize,
    padding: usize,
}

impl PaddedConv {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mut x = if self.padding > 0 {
            x.pad_with_zeros(2, self.padding, self.padding)?
                .pad_with_zeros(3, self.padding, self.padding)?
        } else {
            x.clone()
        };
        for dim in [2, 3] {
            let len = x.dim(dim)?;
            let used = self.k + (len - self.k) / self.stride * self.stride;
            if used != len {
                x = x.narrow(dim, 0, used)?;
            }
        }
        x.apply(&self.conv)
    }
}

fn conv(
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    padding: usize,
    vb: VarBuilder,
) -> candle_core::Result<PaddedConv> {
    let cfg = Conv2dConfig {
        stride,
        ..Default::default()
    };
    Ok(PaddedConv {
        conv: conv2d_no_bias(in_c, out_c, k, cfg, vb)?,
        k,
        stride,
        padding,
    })
}

/// 3×3/2 max pool with one pixel of padding, written as the maximum of nine
/// strided views (candle only differentiates pools with kernel == stride).
/// Inputs are post-ReLU, so zero padding is equivalent to −∞ padding.
fn max_pool_3x3_s2(x: &Tensor) -> candle_core::Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = ((h + 2 - 3) / 2 + 1, (w + 2 - 3) / 2 + 1);
    // One extra trailing pixel so every offset view spans 2·o elements.
    let x = x.pad_with_zeros(2, 1, 2)?.pad_with_zeros(3, 1, 2)?;
    let mut out: Option<Tensor> = None;
    for dy in 0..3 {
        for dx in 0..3 {
            let view = x
                .narrow(2, dy, 2 * oh)?
                .narrow(3, dx, 2 * ow)?
                .reshape((n, c, oh, 2, ow, 2))?
                .narrow(3, 0, 1)?
                .narrow(5, 0, 1)?
                .reshape((n, c, oh, ow))?;
            out = Some(match out {
                Some(m) => m.maximum(&view)?,
                None => view,
            });
        }
    }
    Ok(out.expect("nine views"))
}

impl BasicBlock {
    fn new(in_c: usize, out_c: usize, stride: usize, vb: VarBuilder) -> candle_core::Result<Self> {
        let downsample = if stride != 1 || in_c != out_c {
            Some((
                conv(in_c, out_c, 1, stride, 0, vb.pp("downsample.0"))?,
                batch_norm(out_c, 1e-5, vb.pp("downsample.1"))?,
            ))
        } else {
            None
        };
        Ok(BasicBlock {
            conv1: conv(in_c, out_c, 3, stride, 1, vb.pp("conv1"))?,
            bn1: batch_norm(out_c, 1e-5, vb.pp("bn1"))?,
            conv2: conv(out_c, out_c, 3, 1, 1, vb.pp("conv2"))?,
            bn2: batch_norm(out_c, 1e-5, vb.pp("bn2"))?,
            downsample,
        })
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let out = self.conv1.forward(x)?.apply_t(&self.bn1, train)?.relu()?;
        let out = self.conv2.forward(&out)?.apply_t(&self.bn2, train)?;
        let identity = match &self.downsample {
            Some((c, bn)) => c.forward(x)?.apply_t(bn, train)?,
            None => x.clone(),
        };
        (out + identity)?.relu()
    }
}

struct ResNet18 {
    input_downsample: usize,
    conv1: PaddedConv,
    bn1: BatchNorm,
    layers: Vec<Vec<BasicBlock>>,
    fc: Linear,
}

impl ResNet18 {
    fn new(cfg: &BackboneConfig, vb: VarBuilder) -> candle_core::Result<Self> {
        let w = cfg.base_width;
        let mut layers = Vec::with_capacity(4);
        let mut in_c = w;
        for (i, mult) in [1usize, 2, 4, 8].into_iter().enumerate() {
            let out_c = w * mult;
            let stride = if i == 0 { 1 } else { 2 };
            let lvb = vb.pp(format!("layer{}", i + 1));
            layers.push(vec![
                BasicBlock::new(in_c, out_c, stride, lvb.pp("0"))?,
                BasicBlock::new(out_c, out_c, 1, lvb.pp("1"))?,
            ]);
            in_c = out_c;
        }
        Ok(ResNet18 {
            input_downsample: cfg.input_downsample,
            conv1: conv(3, w, 7, 2, 3, vb.pp("conv1"))?,
            bn1: batch_norm(w, 1e-5, vb.pp("bn1"))?,
            layers,
            fc: linear(cfg.feature_width(), 1, vb.pp("fc"))?,
        })
    }
}

impl ModuleT for ResNet18 {
    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let x = if self.input_downsample > 1 {
            x.avg_pool2d(self.input_downsample)?
        } else {
            x.clone()
        };
        let x = self.conv1.forward(&x)?.apply_t(&self.bn1, train)?.relu()?;
        let mut x = max_pool_3x3_s2(&x)?;
        for layer in &self.layers {
            for block in layer {
                x = block.forward_t(&x, train)?;
            }
        }
        // Global average pooling accepts any spatial size.
        x.mean(3)?.mean(2)?.apply(&self.fc)
    }
}

/// Backbone + single-logit head, owning its variables.
pub struct Classifier {
    net: ResNet18,
    varmap: VarMap,
    config: BackboneConfig,
    device: Device,
}

fn is_running_stat(name: &str) -> bool {
    name.ends_with("running_mean") || name.ends_with("running_var")
}

fn is_head(name: &str) -> bool {
    name.starts_with("fc.")
}

fn var_seed(seed: u64, name: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}:{name}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest"))
}

/// Initial value for a named variable: Kaiming-normal (fan-out) convs,
/// unit/zero batch-norm affine and statistics, uniform ±1/√fan_in head.
fn init_tensor(
    name: &str,
    dims: &[usize],
    head_fan_in: usize,
    seed: u64,
    device: &Device,
) -> Result<Tensor> {
    let n: usize = dims.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(var_seed(seed, name));
    let values: Vec<f32> = if is_head(name) {
        let bound = 1.0 / (head_fan_in as f32).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    } else if dims.len() == 4 {
        let fan_out = dims[0] * dims[2] * dims[3];
        let dist = Normal::new(0.0f32, (2.0 / fan_out as f32).sqrt()).expect("positive std");
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    } else if name.ends_with("running_var") || name.ends_with("weight") {
        vec![1.0; n]
    } else {
        vec![0.0; n]
    };
    Ok(Tensor::from_vec(values, dims, device)?)
}

impl Classifier {
    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// `(N, 3, H, W)` normalized images → `(N, 1)` logits.
    pub fn forward_t(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        Ok(self.net.forward_t(x, train)?)
    }

    fn vars_sorted(&self) -> Vec<(String, Var)> {
        let data = self.varmap.data().lock().expect("varmap lock");
        let mut vars: Vec<(String, Var)> =
            data.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        vars.sort_by(|a, b| a.0.cmp(&b.0));
        vars
    }

    /// Every learnable tensor (all layers), in name order. Batch-norm
    /// running statistics are state, not parameters.
    pub fn trainable_vars(&self) -> Vec<Var> {
        self.vars_sorted()
            .into_iter()
            .filter(|(n, _)| !is_running_stat(n))
            .map(|(_, v)| v)
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable_vars().iter().map(|v| v.elem_count()).sum()
    }

    /// Deep copy of every variable, including running statistics.
    pub fn state(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars_sorted()
            .into_iter()
            .map(|(n, v)| Ok((n, v.as_tensor().copy()?)))
            .collect()
    }

    /// Overwrites variables from `state`. Every variable must be present
    /// unless `skip` says otherwise.
    fn assign(&self, state: &HashMap<String, Tensor>, skip: impl Fn(&str) -> bool) -> Result<()> {
        for (name, var) in self.vars_sorted() {
            if skip(&name) {
                continue;
            }
            let src = state.get(&name).ok_or_else(|| {
                Error::WeightsUnavailable(format!("tensor '{name}' missing from weight file"))
            })?;
            if src.dims() != var.dims() {
                return Err(Error::Shape {
                    expected: format!("{name} {:?}", var.dims()),
                    actual: format!("{:?}", src.dims()),
                });
            }
            var.set(&src.to_dtype(DType::F32)?.to_device(&self.device)?)?;
        }
        Ok(())
    }

    pub fn restore(&self, state: &BTreeMap<String, Tensor>) -> Result<()> {
        let map: HashMap<String, Tensor> =
            state.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        self.assign(&map, |_| false)
    }

    /// Writes every variable to a safetensors file (temp file + rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        let state: HashMap<String, Tensor> = self.state()?.into_iter().collect();
        let tmp = path.with_extension("safetensors.tmp");
        candle_core::safetensors::save(&state, &tmp)?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Loads a full parameter set written by [`Classifier::save`].
    pub fn load_weights(&self, path: &Path) -> Result<()> {
        let state = candle_core::safetensors::load(path, &self.device)?;
        self.assign(&state, |_| false)
    }
}

/// Builds the classifier. With [`WeightSource::Pretrained`] the backbone is
/// read from the file (an error if it is missing or incomplete) and only the
/// head is seeded; otherwise all parameters are seeded from `seed`.
pub fn build_model(cfg: &BackboneConfig, weights: &WeightSource, seed: u64) -> Result<Classifier> {
    cfg.validate()?;
    let device = Device::Cpu;
    let varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
    let net = ResNet18::new(cfg, vb)?;
    let model = Classifier {
        net,
        varmap,
        config: *cfg,
        device,
    };

    let mut fresh = HashMap::new();
    for (name, var) in model.vars_sorted() {
        let init = init_tensor(&name, var.dims(), cfg.feature_width(), seed, &model.device)?;
        fresh.insert(name, init);
    }
    model.assign(&fresh, |_| false)?;

    if let WeightSource::Pretrained { path } = weights {
        if !path.is_file() {
            return Err(Error::WeightsUnavailable(format!(
                "no weight file at {}",
                path.display()
            )));
        }
        let state = candle_core::safetensors::load(path, &model.device)
            .map_err(|e| Error::WeightsUnavailable(format!("{}: {e}", path.display())))?;
        model.assign(&state, is_head)?;
    }
    Ok(model)
}
