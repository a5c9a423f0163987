use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::{
    check_scale, DegradationEncoder, DegradationEncoderConfig, ImageEncoder, ImageEncoderConfig, Reconstructor,
    ReconstructorConfig, ReferenceConfig, ReferenceEncoder,
};
use crate::degrade::derive_seed;
use crate::error::{Error, Result};
use crate::far::AlignmentMaps;
use crate::nn::{Checkpoint, Param, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrnConfig {
    pub scale: usize,
    pub e_deg: DegradationEncoderConfig,
    pub e_img: ImageEncoderConfig,
    pub recon: ReconstructorConfig,
    pub reference: ReferenceConfig,
}

impl Default for LrnConfig {
    fn default() -> Self {
        Self {
            scale: 4,
            e_deg: DegradationEncoderConfig::default(),
            e_img: ImageEncoderConfig::default(),
            recon: ReconstructorConfig::default(),
            reference: ReferenceConfig::default(),
        }
    }
}

impl LrnConfig {
    pub fn desk() -> Self {
        Self {
            scale: 4,
            e_deg: DegradationEncoderConfig::desk(),
            e_img: ImageEncoderConfig::desk(),
            recon: ReconstructorConfig::desk(),
            reference: ReferenceConfig::default(),
        }
    }
}

/// LR-reconstruction network: `X̂ = R(s ⊙ E_deg(X), E_img(Y))`, together with
/// the alignment maps of the feature regularizer and the frozen reference
/// encoder they align to.
pub struct Lrn {
    cfg: LrnConfig,
    e_deg: DegradationEncoder,
    e_img: ImageEncoder,
    recon: Reconstructor,
    maps: AlignmentMaps,
    reference: ReferenceEncoder,
}

impl Lrn {
    pub const ARCH: &'static str = "lrn";
    pub const COMPONENTS: [&'static str; 4] = ["e_deg", "e_img", "recon", "maps"];

    pub fn new(cfg: &LrnConfig, dtype: DType, seed: u64) -> Result<Self> {
        check_scale(cfg.scale, &[1, 2, 4])?;
        let e_deg = DegradationEncoder::new(&cfg.e_deg, dtype, derive_seed(seed, 1))?;
        let e_img = ImageEncoder::new(&cfg.e_img, dtype, derive_seed(seed, 2))?;
        let recon = Reconstructor::new(
            &cfg.recon,
            e_img.channels(),
            e_deg.embed_dim(),
            cfg.scale,
            dtype,
            derive_seed(seed, 3),
        )?;
        let reference = ReferenceEncoder::new(&cfg.reference, dtype)?;
        let maps = AlignmentMaps::new(e_img.channels(), reference.channels(), dtype, derive_seed(seed, 4))?;
        Ok(Self {
            cfg: cfg.clone(),
            e_deg,
            e_img,
            recon,
            maps,
            reference,
        })
    }

    pub fn config(&self) -> &LrnConfig {
        &self.cfg
    }

    pub fn scale(&self) -> usize {
        self.cfg.scale
    }

    pub fn embed_dim(&self) -> usize {
        self.e_deg.embed_dim()
    }

    pub fn e_deg(&self) -> &DegradationEncoder {
        &self.e_deg
    }

    pub fn e_img(&self) -> &ImageEncoder {
        &self.e_img
    }

    pub fn recon(&self) -> &Reconstructor {
        &self.recon
    }

    pub fn maps(&self) -> &AlignmentMaps {
        &self.maps
    }

    pub fn reference(&self) -> &ReferenceEncoder {
        &self.reference
    }

    pub fn dtype(&self) -> DType {
        self.e_deg.store().dtype()
    }

    pub fn stores(&self) -> [(&'static str, &ParamStore); 4] {
        [
            ("e_deg", self.e_deg.store()),
            ("e_img", self.e_img.store()),
            ("recon", self.recon.store()),
            ("maps", self.maps.store()),
        ]
    }

    pub fn params(&self) -> Vec<Param> {
        self.stores().iter().flat_map(|(_, s)| s.params()).collect()
    }

    pub fn set_trainable(&self, on: bool) {
        for (_, s) in self.stores() {
            s.set_all_trainable(on);
        }
    }

    pub fn num_params(&self) -> usize {
        self.stores().iter().map(|(_, s)| s.num_params()).sum()
    }

    /// Hash of every parameter of every component.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, s) in self.stores() {
            h.update(name.as_bytes());
            h.update(s.hash().as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// `(B, 3, h, w)` → `(B, C_d)`.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        self.e_deg.forward(x)
    }

    /// Reconstructs the LR image from `y`; `s` (shape `(B, C_d)`) scales the
    /// embedding when given. Returns `X̂` and `E_img(y)`.
    pub fn reconstruct(&self, x: &Tensor, y: &Tensor, s: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let (_, _, h, w) = x.dims4()?;
        let (_, _, hy, wy) = y.dims4()?;
        if hy != h * self.cfg.scale || wy != w * self.cfg.scale {
            return Err(Error::Shape(format!(
                "LR {h}x{w} and HR {hy}x{wy} do not match scale {}",
                self.cfg.scale
            )));
        }
        let mut e_d = self.e_deg.forward(x)?;
        if let Some(s) = s {
            e_d = e_d.mul(&s.detach())?;
        }
        let e_im = self.e_img.forward(y)?;
        let x_hat = self.recon.forward(&e_d, &e_im)?;
        Ok((x_hat, e_im))
    }

    /// Per-sample `Φ_far` given precomputed `E_img(y)`.
    pub fn far_from_features(&self, e_im: &Tensor, y: &Tensor) -> Result<Tensor> {
        let e_cl = self.reference.forward(y)?;
        self.maps.loss_per_sample(e_im, &e_cl)
    }

    /// Per-sample `Φ_far(y)`.
    pub fn phi_far(&self, y: &Tensor) -> Result<Tensor> {
        self.far_from_features(&self.e_img.forward(y)?, y)
    }

    /// All parameter values under `<component>.<name>`.
    pub fn snapshot(&self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (prefix, s) in self.stores() {
            for (k, v) in s.snapshot() {
                out.insert(format!("{prefix}.{k}"), v);
            }
        }
        out
    }

    pub fn load_snapshot(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        for (prefix, s) in self.stores() {
            let head = format!("{prefix}.");
            let part: BTreeMap<String, Tensor> = values
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&head).map(|r| (r.to_string(), v.clone())))
                .collect();
            s.load(&part)?;
        }
        Ok(())
    }

    /// Writes `model.*` (and `ema.*` when given) plus the config.
    pub fn save(&self, path: impl AsRef<Path>, step: u64, ema: Option<&BTreeMap<String, Tensor>>) -> Result<()> {
        let mut ck = Checkpoint::new(Self::ARCH, step);
        ck.insert_all("model", self.snapshot());
        if let Some(ema) = ema {
            ck.insert_all("ema", ema.clone());
        }
        let cfg = serde_json::to_string(&self.cfg).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ck.meta.insert("config".into(), cfg);
        ck.save(path)
    }

    /// Rebuilds an LRN from a checkpoint, taking EMA weights when present and
    /// `prefer_ema` is set. `reference` overrides the stored reference
    /// encoder settings (weights paths are machine-local).
    pub fn load(
        path: impl AsRef<Path>,
        dtype: DType,
        prefer_ema: bool,
        reference: Option<&ReferenceConfig>,
    ) -> Result<Self> {
        let ck = Checkpoint::load(path.as_ref())?;
        if ck.arch != Self::ARCH {
            return Err(Error::Checkpoint(format!(
                "{}: architecture `{}`, expected `{}`",
                path.as_ref().display(),
                ck.arch,
                Self::ARCH
            )));
        }
        let mut cfg: LrnConfig = serde_json::from_str(
            ck.meta
                .get("config")
                .ok_or_else(|| Error::Checkpoint("LRN checkpoint without config".into()))?,
        )
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if let Some(r) = reference {
            cfg.reference = r.clone();
        }
        let lrn = Self::new(&cfg, dtype, 0)?;
        let section = if prefer_ema && ck.has_section("ema") { "ema" } else { "model" };
        lrn.load_snapshot(&ck.section(section))?;
        Ok(lrn)
    }
}
