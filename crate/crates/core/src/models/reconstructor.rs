use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::blocks::SLOPE;
use super::{check_nonzero, check_scale};
use crate::error::{Error, Result};
use crate::nn::{leaky_relu, Conv2d, ModulatedConv2d, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructorConfig {
    pub channels: usize,
    pub blocks: usize,
}

impl Default for ReconstructorConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            blocks: 16,
        }
    }
}

impl ReconstructorConfig {
    pub fn desk() -> Self {
        Self {
            channels: 16,
            blocks: 2,
        }
    }
}

struct ModBlock {
    conv1: ModulatedConv2d,
    conv2: ModulatedConv2d,
}

impl ModBlock {
    fn forward(&self, x: &Tensor, style: &Tensor) -> Result<Tensor> {
        let h = leaky_relu(&self.conv1.forward(x, style)?, SLOPE)?;
        let h = self.conv2.forward(&h, style)?;
        Ok((x + (h * 0.5)?)?)
    }
}

/// Reproduces an LR image from HR image features, conditioned on a
/// (controller-scaled) degradation embedding.
///
/// Residual trunk whose convolutions are modulated by the embedding, followed
/// by an average-pool + convolution stage per factor of two and an RGB output
/// convolution. The output is not squashed; losses clamp where needed.
pub struct Reconstructor {
    store: ParamStore,
    head: Conv2d,
    blocks: Vec<ModBlock>,
    downs: Vec<Conv2d>,
    out: Conv2d,
    scale: usize,
}

impl Reconstructor {
    pub fn new(
        cfg: &ReconstructorConfig,
        in_channels: usize,
        style_dim: usize,
        scale: usize,
        dtype: DType,
        seed: u64,
    ) -> Result<Self> {
        check_scale(scale, &[1, 2, 4])?;
        check_nonzero("recon.channels", cfg.channels)?;
        let store = ParamStore::new(dtype, seed);
        let vb = store.root();
        let c = cfg.channels;
        let head = Conv2d::new(&vb.pp("head"), in_channels, c, 3, 1)?;
        let blocks = (0..cfg.blocks)
            .map(|i| {
                let b = vb.pp("blocks").pp(i);
                Ok(ModBlock {
                    conv1: ModulatedConv2d::new(&b.pp("conv1"), style_dim, c, c, 3)?,
                    conv2: ModulatedConv2d::new(&b.pp("conv2"), style_dim, c, c, 3)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let downs = (0..scale.trailing_zeros())
            .map(|i| Conv2d::new(&vb.pp("down").pp(i), c, c, 3, 1))
            .collect::<Result<Vec<_>>>()?;
        let out = Conv2d::new(&vb.pp("out"), c, 3, 3, 1)?;
        Ok(Self {
            store,
            head,
            blocks,
            downs,
            out,
            scale,
        })
    }

    /// `embedding: (B, style_dim)`, `features: (B, C_i, H, W)` → `(B, 3, H/a, W/a)`.
    pub fn forward(&self, embedding: &Tensor, features: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = features.dims4()?;
        if h % self.scale != 0 || w % self.scale != 0 {
            return Err(Error::Shape(format!(
                "feature map {h}x{w} not divisible by scale {}",
                self.scale
            )));
        }
        let mut x = leaky_relu(&self.head.forward(features)?, SLOPE)?;
        for block in &self.blocks {
            x = block.forward(&x, embedding)?;
        }
        for down in &self.downs {
            x = leaky_relu(&down.forward(&x.avg_pool2d(2)?)?, SLOPE)?;
        }
        self.out.forward(&x)
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }
}
