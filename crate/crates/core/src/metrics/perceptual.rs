use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagedata::ImageTensor;
use crate::nn::conv2d_same;

pub const FALLBACK_NAME: &str = "random-conv-cosine";
pub const LPIPS_NAME: &str = "lpips-alex";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerceptualBackend {
    /// Cosine distance of fixed random convolution features.
    #[default]
    Fallback,
    /// LPIPS with the AlexNet trunk and learned linear heads.
    LpipsAlex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptualConfig {
    pub backend: PerceptualBackend,
    pub weights: Option<PathBuf>,
    pub allow_fallback: bool,
    pub seed: u64,
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        Self {
            backend: PerceptualBackend::Fallback,
            weights: None,
            allow_fallback: true,
            seed: 0x1195_0001,
        }
    }
}

/// Differentiable perceptual distance in `[0, 1]`.
pub enum Perceptual {
    Fallback(RandomFeatureDistance),
    Lpips(AlexLpips),
}

impl Perceptual {
    pub fn new(cfg: &PerceptualConfig, dtype: DType) -> Result<Self> {
        match cfg.backend {
            PerceptualBackend::Fallback => Ok(Self::Fallback(RandomFeatureDistance::new(cfg.seed, dtype)?)),
            PerceptualBackend::LpipsAlex => match &cfg.weights {
                Some(p) if p.exists() => Ok(Self::Lpips(AlexLpips::load(p, dtype)?)),
                _ if cfg.allow_fallback => Ok(Self::Fallback(RandomFeatureDistance::new(cfg.seed, dtype)?)),
                other => Err(Error::MissingWeights(format!(
                    "LPIPS weights not found ({other:?}) and fallback disabled"
                ))),
            },
        }
    }

    pub fn fallback(dtype: DType) -> Result<Self> {
        Self::new(&PerceptualConfig::default(), dtype)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Fallback(_) => FALLBACK_NAME,
            Self::Lpips(_) => LPIPS_NAME,
        }
    }

    /// Per-sample distance `(B,)` between two `(B, 3, H, W)` batches in `[0, 1]`.
    pub fn distance(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.dims() != b.dims() {
            return Err(Error::Shape(format!("perceptual distance of {:?} vs {:?}", a.dims(), b.dims())));
        }
        let d = match self {
            Self::Fallback(m) => m.distance(a, b)?,
            Self::Lpips(m) => m.distance(a, b)?,
        };
        Ok(d.clamp(0.0, 1.0)?)
    }

    pub fn distance_images(&self, a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
        a.ensure_same_shape(b)?;
        let dtype = self.dtype();
        let d = self.distance(&a.to_tensor(dtype)?, &b.to_tensor(dtype)?)?;
        Ok(d.to_dtype(DType::F64)?.to_vec1::<f64>()?[0])
    }

    pub fn dtype(&self) -> DType {
        match self {
            Self::Fallback(m) => m.dtype,
            Self::Lpips(m) => m.dtype,
        }
    }
}

/// `a / sqrt(Σ_c a² + ε²)` per pixel.
fn unit_normalize(a: &Tensor, eps: f64) -> Result<Tensor> {
    let n = (a.sqr()?.sum_keepdim(1)? + eps * eps)?.sqrt()?;
    Ok(a.broadcast_div(&n)?)
}

/// Fixed random conv features tapped before each activation; the distance is
/// `(1 − cos)/2` between per-pixel feature directions, averaged over pixels
/// and taps.
pub struct RandomFeatureDistance {
    layers: Vec<(Tensor, Tensor)>,
    dtype: DType,
}

impl RandomFeatureDistance {
    const WIDTHS: [usize; 4] = [3, 16, 32, 32];
    const EPS: f64 = 1e-4;

    pub fn new(seed: u64, dtype: DType) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        for pair in Self::WIDTHS.windows(2) {
            let (cin, cout) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (1.0 / (cin * 9) as f64).sqrt()).map_err(|e| Error::Invalid(e.to_string()))?;
            let mut w: Vec<f64> = (0..cout * cin * 9).map(|_| normal.sample(&mut rng)).collect();
            if cin == 3 {
                // Zero-sum first-layer kernels ignore flat color and respond
                // only to structure.
                for k in w.chunks_mut(9) {
                    let m = k.iter().sum::<f64>() / 9.0;
                    k.iter_mut().for_each(|v| *v -= m);
                }
            }
            layers.push((
                Tensor::from_vec(w, (cout, cin, 3, 3), &Device::Cpu)?.to_dtype(dtype)?,
                Tensor::zeros(cout, dtype, &Device::Cpu)?,
            ));
        }
        Ok(Self { layers, dtype })
    }

    fn taps(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut h = ((x * 2.0)? - 1.0)?;
        let mut taps = Vec::new();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            if i > 0 {
                let (_, _, hh, ww) = h.dims4()?;
                if hh < 2 || ww < 2 {
                    break;
                }
                h = h.relu()?.avg_pool2d(2)?;
            }
            h = conv2d_same(&h, w, Some(b), 1)?;
            taps.push(h.clone());
        }
        Ok(taps)
    }

    pub fn distance(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ta, tb) = (self.taps(a)?, self.taps(b)?);
        let n = ta.len() as f64;
        let mut total: Option<Tensor> = None;
        for (fa, fb) in ta.iter().zip(&tb) {
            let d = (unit_normalize(fa, Self::EPS)? - unit_normalize(fb, Self::EPS)?)?
                .sqr()?
                .sum(1)?
                .flatten_from(1)?
                .mean(1)?;
            let d = (d * 0.25)?;
            total = Some(match total {
                Some(t) => (t + d)?,
                None => d,
            });
        }
        Ok((total.expect("at least one tap") / n)?)
    }
}

struct AlexConv {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

/// LPIPS (v0.1) with the AlexNet trunk.
pub struct AlexLpips {
    convs: Vec<AlexConv>,
    lins: Vec<Tensor>,
    shift: Tensor,
    scale: Tensor,
    dtype: DType,
}

impl AlexLpips {
    /// `(out, in, kernel, stride, padding)` of the five convolutions.
    pub const CONVS: [(usize, usize, usize, usize, usize); 5] = [
        (64, 3, 11, 4, 2),
        (192, 64, 5, 1, 2),
        (384, 192, 3, 1, 1),
        (256, 384, 3, 1, 1),
        (256, 256, 3, 1, 1),
    ];
    /// Indices of the convolutions inside the torchvision `features` stack.
    pub const FEATURE_INDEX: [usize; 5] = [0, 3, 6, 8, 10];
    pub const MIN_SIZE: usize = 32;
    const SHIFT: [f64; 3] = [-0.030, -0.088, -0.188];
    const SCALE: [f64; 3] = [0.458, 0.448, 0.450];
    const EPS: f64 = 1e-10;

    /// Loads a safetensors file holding the AlexNet convolutions (named
    /// `net.slice<k>.<i>.*` or `features.<i>.*`) and the heads `lin<k>.model.1.weight`.
    pub fn load(path: &Path, dtype: DType) -> Result<Self> {
        let raw = candle_core::safetensors::load(path, &Device::Cpu)?;
        Self::from_weights(&raw.into_iter().collect(), dtype)
    }

    pub fn from_weights(raw: &BTreeMap<String, Tensor>, dtype: DType) -> Result<Self> {
        let mut by_index: BTreeMap<String, Tensor> = BTreeMap::new();
        for (k, v) in raw {
            let parts: Vec<&str> = k.split('.').collect();
            let key = match parts.as_slice() {
                ["net", slice, idx, kind] if slice.starts_with("slice") => format!("features.{idx}.{kind}"),
                ["features", idx, kind] => format!("features.{idx}.{kind}"),
                _ => k.clone(),
            };
            by_index.insert(key, v.clone());
        }
        let get = |name: &str| -> Result<Tensor> {
            Ok(by_index
                .get(name)
                .ok_or_else(|| Error::MissingWeights(format!("LPIPS tensor `{name}`")))?
                .to_dtype(dtype)?)
        };
        let mut convs = Vec::new();
        for (&(cout, cin, k, stride, padding), idx) in Self::CONVS.iter().zip(Self::FEATURE_INDEX) {
            let weight = get(&format!("features.{idx}.weight"))?;
            if weight.dims() != [cout, cin, k, k] {
                return Err(Error::MissingWeights(format!(
                    "LPIPS conv {idx}: shape {:?}, expected {:?}",
                    weight.dims(),
                    [cout, cin, k, k]
                )));
            }
            convs.push(AlexConv {
                weight,
                bias: get(&format!("features.{idx}.bias"))?,
                stride,
                padding,
            });
        }
        let lins = (0..5)
            .map(|k| get(&format!("lin{k}.model.1.weight")))
            .collect::<Result<Vec<_>>>()?;
        let shift = Tensor::new(&Self::SHIFT, &Device::Cpu)?.to_dtype(dtype)?.reshape((1, 3, 1, 1))?;
        let scale = Tensor::new(&Self::SCALE, &Device::Cpu)?.to_dtype(dtype)?.reshape((1, 3, 1, 1))?;
        Ok(Self {
            convs,
            lins,
            shift,
            scale,
            dtype,
        })
    }

    fn taps(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut h = ((x * 2.0)? - 1.0)?.broadcast_sub(&self.shift)?.broadcast_div(&self.scale)?;
        let mut taps = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            if i == 1 || i == 2 {
                h = max_pool_3s2(&h)?;
            }
            h = if c.stride == 1 && c.padding == c.weight.dim(2)? / 2 {
                conv2d_same(&h, &c.weight, Some(&c.bias), 1)?
            } else {
                h.conv2d(&c.weight, c.padding, c.stride, 1, 1)?
                    .broadcast_add(&c.bias.reshape((1, (), 1, 1))?)?
            };
            h = h.relu()?;
            taps.push(h.clone());
        }
        Ok(taps)
    }

    pub fn distance(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = a.dims4()?;
        if h < Self::MIN_SIZE || w < Self::MIN_SIZE {
            return Err(Error::Shape(format!(
                "LPIPS-alex needs at least {0}x{0} inputs, got {h}x{w}",
                Self::MIN_SIZE
            )));
        }
        let (ta, tb) = (self.taps(a)?, self.taps(b)?);
        let mut total: Option<Tensor> = None;
        for ((fa, fb), lin) in ta.iter().zip(&tb).zip(&self.lins) {
            let d = (unit_normalize(fa, Self::EPS)? - unit_normalize(fb, Self::EPS)?)?.sqr()?;
            let d = d.conv2d(lin, 0, 1, 1, 1)?.flatten_from(1)?.mean(1)?;
            total = Some(match total {
                Some(t) => (t + d)?,
                None => d,
            });
        }
        Ok(total.expect("five taps"))
    }
}

/// 3×3 max pooling with stride 2 built from shifted slices so that it is
/// differentiable.
fn max_pool_3s2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h < 3 || w < 3 {
        return Err(Error::Shape(format!("max pool 3/2 of {h}x{w}")));
    }
    let (oh, ow) = ((h - 3) / 2 + 1, (w - 3) / 2 + 1);
    let dev = x.device();
    let rows = Tensor::arange_step(0u32, (2 * oh) as u32, 2, dev)?;
    let cols = Tensor::arange_step(0u32, (2 * ow) as u32, 2, dev)?;
    let mut out: Option<Tensor> = None;
    for dy in 0..3 {
        for dx in 0..3 {
            let s = x
                .narrow(2, dy, 2 * (oh - 1) + 1)?
                .narrow(3, dx, 2 * (ow - 1) + 1)?
                .contiguous()?
                .index_select(&rows, 2)?
                .contiguous()?
                .index_select(&cols, 3)?;
            out = Some(match out {
                Some(o) => o.maximum(&s)?,
                None => s,
            });
        }
    }
    Ok(out.expect("nine taps"))
}
