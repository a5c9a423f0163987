use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv2d_same;

const CLIP_MEAN: [f64; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
const CLIP_STD: [f64; 3] = [0.268_629_54, 0.261_302_58, 0.275_777_11];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMode {
    /// Fixed-seed random conv encoder (128 channels, stride 8).
    #[default]
    Fallback,
    /// Pretrained CLIP RN50 up to `layer3` (1024 channels, stride 16).
    ClipRn50,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceConfig {
    pub mode: ReferenceMode,
    pub weights: Option<PathBuf>,
    /// Use the random encoder when CLIP weights are requested but absent.
    pub allow_fallback: bool,
    pub seed: u64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            mode: ReferenceMode::Fallback,
            weights: None,
            allow_fallback: true,
            seed: 0x5EED_C11F,
        }
    }
}

/// Frozen feature extractor whose parameters never receive gradients.
/// Gradients still flow to the input image.
pub enum ReferenceEncoder {
    Fallback(RandomConvEncoder),
    Clip(ClipRn50),
}

impl ReferenceEncoder {
    pub fn new(cfg: &ReferenceConfig, dtype: DType) -> Result<Self> {
        match cfg.mode {
            ReferenceMode::Fallback => Ok(Self::Fallback(RandomConvEncoder::new(cfg.seed, dtype)?)),
            ReferenceMode::ClipRn50 => match &cfg.weights {
                Some(path) if path.exists() => Ok(Self::Clip(ClipRn50::load(path, dtype)?)),
                _ if cfg.allow_fallback => Ok(Self::Fallback(RandomConvEncoder::new(cfg.seed, dtype)?)),
                other => Err(Error::MissingWeights(format!(
                    "CLIP RN50 weights not found ({other:?}) and fallback disabled"
                ))),
            },
        }
    }

    pub fn fallback(dtype: DType) -> Result<Self> {
        Self::new(&ReferenceConfig::default(), dtype)
    }

    /// `(B, 3, H, W)` in `[0, 1]` → feature map.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = clip_normalize(x)?;
        match self {
            Self::Fallback(m) => m.forward(&x),
            Self::Clip(m) => m.forward(&x),
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Self::Fallback(_) => RandomConvEncoder::CHANNELS,
            Self::Clip(_) => ClipRn50::CHANNELS,
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            Self::Fallback(_) => "random-conv-fallback",
            Self::Clip(_) => "clip-rn50-layer3",
        }
    }
}

fn clip_normalize(x: &Tensor) -> Result<Tensor> {
    let dev = x.device();
    let mean = Tensor::new(&CLIP_MEAN, dev)?.to_dtype(x.dtype())?.reshape((1, 3, 1, 1))?;
    let std = Tensor::new(&CLIP_STD, dev)?.to_dtype(x.dtype())?.reshape((1, 3, 1, 1))?;
    Ok(x.broadcast_sub(&mean)?.broadcast_div(&std)?)
}

/// Four random 3×3 conv layers, three of them followed by 2× average pooling.
pub struct RandomConvEncoder {
    layers: Vec<(Tensor, Tensor)>,
}

impl RandomConvEncoder {
    pub const CHANNELS: usize = 128;
    const WIDTHS: [usize; 5] = [3, 32, 64, 128, 128];

    pub fn new(seed: u64, dtype: DType) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        for pair in Self::WIDTHS.windows(2) {
            let (cin, cout) = (pair[0], pair[1]);
            let std = (2.0 / (cin * 9) as f64).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| Error::Invalid(e.to_string()))?;
            let mut w: Vec<f64> = (0..cout * cin * 9).map(|_| normal.sample(&mut rng)).collect();
            if cin == 3 {
                // Flat color would otherwise dominate every statistic.
                for k in w.chunks_mut(9) {
                    let m = k.iter().sum::<f64>() / 9.0;
                    k.iter_mut().for_each(|v| *v -= m);
                }
            }
            let w = Tensor::from_vec(w, (cout, cin, 3, 3), &Device::Cpu)?.to_dtype(dtype)?;
            let b = Tensor::zeros(cout, dtype, &Device::Cpu)?;
            layers.push((w, b));
        }
        Ok(Self { layers })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = conv2d_same(&h, w, Some(b), 1)?.relu()?;
            if i < last {
                h = h.avg_pool2d(2)?;
            }
        }
        Ok(h)
    }
}

struct FoldedConv {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
}

impl FoldedConv {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let k = self.weight.dim(2)?;
        if self.stride == 1 {
            conv2d_same(x, &self.weight, Some(&self.bias), 1)
        } else {
            let y = x.conv2d(&self.weight, k / 2, self.stride, 1, 1)?;
            Ok(y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?)
        }
    }
}

struct Bottleneck {
    conv1: FoldedConv,
    conv2: FoldedConv,
    conv3: FoldedConv,
    downsample: Option<FoldedConv>,
    stride: usize,
}

impl Bottleneck {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.conv1.forward(x)?.relu()?;
        h = self.conv2.forward(&h)?.relu()?;
        if self.stride > 1 {
            h = h.avg_pool2d(self.stride)?;
        }
        h = self.conv3.forward(&h)?;
        let identity = match &self.downsample {
            Some(ds) => {
                let pooled = if self.stride > 1 {
                    x.avg_pool2d(self.stride)?
                } else {
                    x.clone()
                };
                ds.forward(&pooled)?
            }
            None => x.clone(),
        };
        Ok((h + identity)?.relu()?)
    }
}

/// CLIP's modified ResNet-50 visual trunk through `layer3`, with batch norms
/// folded into the convolutions at load time.
pub struct ClipRn50 {
    stem: Vec<FoldedConv>,
    layers: Vec<Bottleneck>,
}

impl ClipRn50 {
    pub const CHANNELS: usize = 1024;
    /// `(planes, blocks, stride)` of layer1..layer3.
    pub const LAYERS: [(usize, usize, usize); 3] = [(64, 3, 1), (128, 4, 2), (256, 6, 2)];
    const BN_EPS: f64 = 1e-5;

    /// Loads a safetensors export of the OpenAI state dict; a leading
    /// `visual.` on the key names is optional.
    pub fn load(path: &Path, dtype: DType) -> Result<Self> {
        let raw = candle_core::safetensors::load(path, &Device::Cpu)?;
        let weights: BTreeMap<String, Tensor> = raw
            .into_iter()
            .map(|(k, v)| (k.strip_prefix("visual.").unwrap_or(&k).to_string(), v))
            .collect();
        Self::from_weights(&weights, dtype)
    }

    pub fn from_weights(w: &BTreeMap<String, Tensor>, dtype: DType) -> Result<Self> {
        let get = |name: &str| -> Result<Tensor> {
            Ok(w.get(name)
                .ok_or_else(|| Error::MissingWeights(format!("CLIP RN50 tensor `{name}`")))?
                .to_dtype(DType::F64)?)
        };
        let fold = |conv: &str, bn: &str, stride: usize| -> Result<FoldedConv> {
            let weight = get(&format!("{conv}.weight"))?;
            let gamma = get(&format!("{bn}.weight"))?;
            let beta = get(&format!("{bn}.bias"))?;
            let mean = get(&format!("{bn}.running_mean"))?;
            let var = get(&format!("{bn}.running_var"))?;
            let k = (var + Self::BN_EPS)?.sqrt()?.recip()?.mul(&gamma)?;
            let weight = weight.broadcast_mul(&k.reshape(((), 1, 1, 1))?)?;
            let bias = (beta - mean.mul(&k)?)?;
            Ok(FoldedConv {
                weight: weight.to_dtype(dtype)?,
                bias: bias.to_dtype(dtype)?,
                stride,
            })
        };
        let stem = vec![
            fold("conv1", "bn1", 2)?,
            fold("conv2", "bn2", 1)?,
            fold("conv3", "bn3", 1)?,
        ];
        let mut layers = Vec::new();
        let mut inplanes = 64;
        for (li, &(planes, blocks, stride)) in Self::LAYERS.iter().enumerate() {
            for bi in 0..blocks {
                let p = format!("layer{}.{bi}", li + 1);
                let s = if bi == 0 { stride } else { 1 };
                let needs_ds = s > 1 || inplanes != planes * 4;
                layers.push(Bottleneck {
                    conv1: fold(&format!("{p}.conv1"), &format!("{p}.bn1"), 1)?,
                    conv2: fold(&format!("{p}.conv2"), &format!("{p}.bn2"), 1)?,
                    conv3: fold(&format!("{p}.conv3"), &format!("{p}.bn3"), 1)?,
                    downsample: if needs_ds {
                        Some(fold(&format!("{p}.downsample.1"), &format!("{p}.downsample.2"), 1)?)
                    } else {
                        None
                    },
                    stride: s,
                });
                inplanes = planes * 4;
            }
        }
        Ok(Self { stem, layers })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for conv in &self.stem {
            h = conv.forward(&h)?.relu()?;
        }
        h = h.avg_pool2d(2)?;
        for block in &self.layers {
            h = block.forward(&h)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Random tensors laid out like the CLIP RN50 state dict (through layer3).
    pub(crate) fn random_clip_weights(seed: u64) -> BTreeMap<String, Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = BTreeMap::new();
        let mut conv = |w: &mut BTreeMap<String, Tensor>, name: &str, cout: usize, cin: usize, k: usize| {
            let std = (1.0 / (cin * k * k) as f64).sqrt();
            let n = Normal::new(0.0, std).unwrap();
            let v: Vec<f32> = (0..cout * cin * k * k).map(|_| n.sample(&mut rng) as f32).collect();
            w.insert(
                format!("visual.{name}.weight"),
                Tensor::from_vec(v, (cout, cin, k, k), &Device::Cpu).unwrap(),
            );
        };
        let bn = |w: &mut BTreeMap<String, Tensor>, name: &str, c: usize| {
            let ones = Tensor::ones(c, DType::F32, &Device::Cpu).unwrap();
            let zeros = Tensor::zeros(c, DType::F32, &Device::Cpu).unwrap();
            w.insert(format!("visual.{name}.weight"), ones.clone());
            w.insert(format!("visual.{name}.bias"), zeros.clone());
            w.insert(format!("visual.{name}.running_mean"), zeros);
            w.insert(format!("visual.{name}.running_var"), ones);
        };
        conv(&mut w, "conv1", 32, 3, 3);
        bn(&mut w, "bn1", 32);
        conv(&mut w, "conv2", 32, 32, 3);
        bn(&mut w, "bn2", 32);
        conv(&mut w, "conv3", 64, 32, 3);
        bn(&mut w, "bn3", 64);
        let mut inplanes = 64;
        for (li, &(planes, blocks, stride)) in ClipRn50::LAYERS.iter().enumerate() {
            for bi in 0..blocks {
                let p = format!("layer{}.{bi}", li + 1);
                conv(&mut w, &format!("{p}.conv1"), planes, inplanes, 1);
                bn(&mut w, &format!("{p}.bn1"), planes);
                conv(&mut w, &format!("{p}.conv2"), planes, planes, 3);
                bn(&mut w, &format!("{p}.bn2"), planes);
                conv(&mut w, &format!("{p}.conv3"), planes * 4, planes, 1);
                bn(&mut w, &format!("{p}.bn3"), planes * 4);
                let s = if bi == 0 { stride } else { 1 };
                if s > 1 || inplanes != planes * 4 {
                    conv(&mut w, &format!("{p}.downsample.1"), planes * 4, inplanes, 1);
                    bn(&mut w, &format!("{p}.downsample.2"), planes * 4);
                }
                inplanes = planes * 4;
            }
        }
        w
    }

    #[test]
    fn fallback_shape_and_determinism() {
        let enc = ReferenceEncoder::fallback(DType::F32).unwrap();
        let x = Tensor::rand(0f32, 1.0, (1, 3, 64, 64), &Device::Cpu).unwrap();
        let a = enc.forward(&x).unwrap();
        assert_eq!(a.dims(), &[1, 128, 8, 8]);
        let b = ReferenceEncoder::fallback(DType::F32).unwrap().forward(&x).unwrap();
        let d = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(enc.channels(), 128);
    }

    #[test]
    fn missing_clip_weights() {
        let cfg = ReferenceConfig {
            mode: ReferenceMode::ClipRn50,
            weights: Some("/nonexistent/rn50.safetensors".into()),
            allow_fallback: false,
            ..Default::default()
        };
        assert!(matches!(ReferenceEncoder::new(&cfg, DType::F32), Err(Error::MissingWeights(_))));
        let cfg = ReferenceConfig {
            allow_fallback: true,
            ..cfg
        };
        assert_eq!(ReferenceEncoder::new(&cfg, DType::F32).unwrap().mode_name(), "random-conv-fallback");
    }

    #[test]
    fn clip_layer3_shape_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rn50.safetensors");
        let w: std::collections::HashMap<String, Tensor> = random_clip_weights(1).into_iter().collect();
        candle_core::safetensors::save(&w, &path).unwrap();
        let cfg = ReferenceConfig {
            mode: ReferenceMode::ClipRn50,
            weights: Some(path),
            allow_fallback: false,
            ..Default::default()
        };
        let enc = ReferenceEncoder::new(&cfg, DType::F32).unwrap();
        let x = Tensor::rand(0f32, 1.0, (1, 3, 64, 64), &Device::Cpu).unwrap();
        let f = enc.forward(&x).unwrap();
        assert_eq!(f.dims(), &[1, 1024, 4, 4]);
        assert_eq!(enc.channels(), 1024);
    }
}
