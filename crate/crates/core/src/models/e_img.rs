use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::blocks::{ResBlock, SLOPE};
use super::check_nonzero;
use crate::error::Result;
use crate::nn::{leaky_relu, Conv2d, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageEncoderConfig {
    pub channels: usize,
    pub blocks: usize,
}

impl Default for ImageEncoderConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            blocks: 6,
        }
    }
}

impl ImageEncoderConfig {
    pub fn desk() -> Self {
        Self {
            channels: 16,
            blocks: 2,
        }
    }
}

/// Full-resolution image features `(B, channels, H, W)`.
pub struct ImageEncoder {
    store: ParamStore,
    head: Conv2d,
    blocks: Vec<ResBlock>,
    cfg: ImageEncoderConfig,
}

impl ImageEncoder {
    pub fn new(cfg: &ImageEncoderConfig, dtype: DType, seed: u64) -> Result<Self> {
        check_nonzero("e_img.channels", cfg.channels)?;
        let store = ParamStore::new(dtype, seed);
        let vb = store.root();
        let head = Conv2d::new(&vb.pp("head"), 3, cfg.channels, 3, 1)?;
        let blocks = (0..cfg.blocks)
            .map(|i| ResBlock::new(&vb.pp("blocks").pp(i), cfg.channels))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            store,
            head,
            blocks,
            cfg: cfg.clone(),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = leaky_relu(&self.head.forward(x)?, SLOPE)?;
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        Ok(h)
    }

    pub fn channels(&self) -> usize {
        self.cfg.channels
    }

    pub fn config(&self) -> &ImageEncoderConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }
}
