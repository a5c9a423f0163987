use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::blocks::{ResBlock, SLOPE};
use super::{check_nonzero, check_scale};
use crate::error::{Error, Result};
use crate::imagedata::ImageTensor;
use crate::nn::{Checkpoint, leaky_relu, pixel_shuffle, BicubicUpsample, Conv2d, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SrConfig {
    pub channels: usize,
    pub blocks: usize,
    pub scale: usize,
}

impl Default for SrConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            blocks: 8,
            scale: 4,
        }
    }
}

impl SrConfig {
    pub fn desk() -> Self {
        Self {
            channels: 16,
            blocks: 5,
            scale: 4,
        }
    }
}

/// Small SRResNet-style model predicting a residual over bicubic upsampling.
pub struct SrModel {
    store: ParamStore,
    head: Conv2d,
    blocks: Vec<ResBlock>,
    body: Conv2d,
    ups: Vec<Conv2d>,
    out: Conv2d,
    cfg: SrConfig,
}

impl SrModel {
    pub const ARCH: &'static str = "sr-resnet";

    pub fn new(cfg: &SrConfig, dtype: DType, seed: u64) -> Result<Self> {
        check_scale(cfg.scale, &[2, 4])?;
        check_nonzero("sr.channels", cfg.channels)?;
        let store = ParamStore::new(dtype, seed);
        let vb = store.root();
        let c = cfg.channels;
        let head = Conv2d::new(&vb.pp("head"), 3, c, 3, 1)?;
        let blocks = (0..cfg.blocks)
            .map(|i| ResBlock::new(&vb.pp("blocks").pp(i), c))
            .collect::<Result<Vec<_>>>()?;
        let body = Conv2d::new(&vb.pp("body"), c, c, 3, 1)?;
        let ups = (0..cfg.scale.trailing_zeros())
            .map(|i| Conv2d::new(&vb.pp("up").pp(i), c, 4 * c, 3, 1))
            .collect::<Result<Vec<_>>>()?;
        let out = Conv2d::with_gain(&vb.pp("out"), c, 3, 3, 1, 0.1)?;
        Ok(Self {
            store,
            head,
            blocks,
            body,
            ups,
            out,
            cfg: cfg.clone(),
        })
    }

    /// `(B, 3, h, w)` → `(B, 3, a·h, a·w)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let a = self.cfg.scale;
        let feat = self.head.forward(x)?;
        let mut y = feat.clone();
        for block in &self.blocks {
            y = block.forward(&y)?;
        }
        let mut y = (self.body.forward(&y)? + feat)?;
        for up in &self.ups {
            y = leaky_relu(&pixel_shuffle(&up.forward(&y)?, 2)?, SLOPE)?;
        }
        let residual = self.out.forward(&y)?;
        let base = BicubicUpsample::new(h, w, a * h, a * w, x.dtype())?.forward(x)?;
        Ok((base + residual)?)
    }

    /// Super-resolves one image, clamped to `[0, 1]`.
    pub fn upscale(&self, img: &ImageTensor) -> Result<ImageTensor> {
        let x = img.to_tensor(self.store.dtype())?;
        let y = self.forward(&x)?.detach().clamp(0.0, 1.0)?;
        ImageTensor::from_tensor(&y)
    }

    pub fn scale(&self) -> usize {
        self.cfg.scale
    }

    pub fn config(&self) -> &SrConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Writes `model.*` (and `ema.*` when given) plus the config.
    pub fn save(&self, path: impl AsRef<Path>, step: u64, ema: Option<&BTreeMap<String, Tensor>>) -> Result<()> {
        let mut ck = Checkpoint::new(Self::ARCH, step);
        ck.insert_all("model", self.store.snapshot());
        if let Some(ema) = ema {
            ck.insert_all("ema", ema.clone());
        }
        let cfg = serde_json::to_string(&self.cfg).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ck.meta.insert("config".into(), cfg);
        ck.save(path)
    }

    /// Loads a model, taking the EMA section when present and `prefer_ema`.
    pub fn load(path: impl AsRef<Path>, dtype: DType, prefer_ema: bool) -> Result<Self> {
        let ck = Checkpoint::load(path.as_ref())?;
        if ck.arch != Self::ARCH {
            return Err(Error::Checkpoint(format!(
                "{}: architecture `{}`, expected `{}`",
                path.as_ref().display(),
                ck.arch,
                Self::ARCH
            )));
        }
        let cfg: SrConfig = serde_json::from_str(
            ck.meta
                .get("config")
                .ok_or_else(|| Error::Checkpoint("SR checkpoint without config".into()))?,
        )
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let m = Self::new(&cfg, dtype, 0)?;
        let section = if prefer_ema && ck.has_section("ema") { "ema" } else { "model" };
        m.store.load(&ck.section(section))?;
        Ok(m)
    }

    /// A new model with the same layout and values.
    pub fn duplicate(&self) -> Result<Self> {
        let m = Self::new(&self.cfg, self.store.dtype(), 0)?;
        m.store.copy_from(&self.store)?;
        for (a, b) in m.store.params().iter().zip(self.store.params()) {
            a.set_trainable(b.is_trainable());
        }
        Ok(m)
    }
}
