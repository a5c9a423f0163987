use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::blocks::{ResBlock, SLOPE};
use super::check_nonzero;
use crate::error::Result;
use crate::nn::{leaky_relu, Conv2d, Linear, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationEncoderConfig {
    pub channels: usize,
    pub blocks: usize,
    pub embed_dim: usize,
    /// A stride-2 convolution follows every this many blocks.
    pub downsample_every: usize,
}

impl Default for DegradationEncoderConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            blocks: 16,
            embed_dim: 512,
            downsample_every: 4,
        }
    }
}

impl DegradationEncoderConfig {
    pub fn desk() -> Self {
        Self {
            channels: 16,
            blocks: 4,
            embed_dim: 128,
            downsample_every: 4,
        }
    }
}

/// LR image → global degradation embedding `(B, embed_dim)`.
pub struct DegradationEncoder {
    store: ParamStore,
    head: Conv2d,
    blocks: Vec<ResBlock>,
    downs: Vec<Conv2d>,
    proj: Linear,
    cfg: DegradationEncoderConfig,
}

impl DegradationEncoder {
    pub fn new(cfg: &DegradationEncoderConfig, dtype: DType, seed: u64) -> Result<Self> {
        check_nonzero("e_deg.channels", cfg.channels)?;
        check_nonzero("e_deg.blocks", cfg.blocks)?;
        check_nonzero("e_deg.embed_dim", cfg.embed_dim)?;
        check_nonzero("e_deg.downsample_every", cfg.downsample_every)?;
        let store = ParamStore::new(dtype, seed);
        let vb = store.root();
        let c = cfg.channels;
        let head = Conv2d::new(&vb.pp("head"), 3, c, 3, 1)?;
        let blocks = (0..cfg.blocks)
            .map(|i| ResBlock::new(&vb.pp("blocks").pp(i), c))
            .collect::<Result<Vec<_>>>()?;
        let downs = (0..cfg.blocks / cfg.downsample_every)
            .map(|i| Conv2d::new(&vb.pp("down").pp(i), c, c, 3, 2))
            .collect::<Result<Vec<_>>>()?;
        let proj = Linear::new(&vb.pp("proj"), c, cfg.embed_dim)?;
        Ok(Self {
            store,
            head,
            blocks,
            downs,
            proj,
            cfg: cfg.clone(),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = leaky_relu(&self.head.forward(x)?, SLOPE)?;
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(&h)?;
            if (i + 1) % self.cfg.downsample_every == 0 {
                let down = &self.downs[i / self.cfg.downsample_every];
                // Stop shrinking once the map is a single pixel.
                if h.dim(2)? > 1 && h.dim(3)? > 1 {
                    h = leaky_relu(&down.forward(&h)?, SLOPE)?;
                }
            }
        }
        let pooled = h.mean(3)?.mean(2)?;
        self.proj.forward(&pooled)
    }

    pub fn embed_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    pub fn config(&self) -> &DegradationEncoderConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }
}
