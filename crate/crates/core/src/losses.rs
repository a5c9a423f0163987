//! Reconstruction loss and the two stage objectives.

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{controller_batch, hqi_batch, ControllerConfig, Stage};
use crate::error::{Error, Result};
use crate::imagedata::{hf_weight_map, unstack_images};
use crate::metrics::Perceptual;
use crate::models::{Lrn, SrModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_l1: f64,
    pub lambda_lpips: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_l1: 1.0,
            lambda_lpips: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_l1 < 0.0 || self.lambda_lpips < 0.0 || !self.lambda_l1.is_finite() || !self.lambda_lpips.is_finite() {
            return Err(Error::Config(format!("loss weights must be finite and >= 0, got {self:?}")));
        }
        Ok(())
    }
}

/// Haar weight maps `(B, 1, H, W)` of a batch, computed on the clamped,
/// detached values.
pub fn weight_maps(x_hat: &Tensor) -> Result<Tensor> {
    let (b, _, h, w) = x_hat.dims4()?;
    let images = unstack_images(&x_hat.detach().clamp(0.0, 1.0)?)?;
    let data: Vec<f32> = images.iter().flat_map(|img| hf_weight_map(img).data).collect();
    Ok(Tensor::from_vec(data, (b, 1, h, w), &Device::Cpu)?.to_dtype(x_hat.dtype())?)
}

/// Per-sample `λ₁·mean|x̂ − x| + λ₂·d(x̂, x)`, shape `(B,)`.
///
/// The ℓ1 term sees the raw output, the perceptual term the clamped one.
/// With `hf_weighting` both terms compare `W ⊙ x̂` with `W ⊙ x`, where `W` is
/// the weight map of `x̂` without gradient.
pub fn rec_loss_per_sample(
    x_hat: &Tensor,
    x: &Tensor,
    w: &LossWeights,
    perceptual: &Perceptual,
    hf_weighting: bool,
) -> Result<Tensor> {
    let wm = if hf_weighting { Some(weight_maps(x_hat)?) } else { None };
    rec_loss_with_map(x_hat, x, w, perceptual, wm.as_ref())
}

/// [`rec_loss_per_sample`] with a given weight map `(B, 1, H, W)`, or none.
pub fn rec_loss_with_map(
    x_hat: &Tensor,
    x: &Tensor,
    w: &LossWeights,
    perceptual: &Perceptual,
    weight_map: Option<&Tensor>,
) -> Result<Tensor> {
    if x_hat.dims() != x.dims() {
        return Err(Error::Shape(format!("reconstruction {:?} vs target {:?}", x_hat.dims(), x.dims())));
    }
    let (mut a, mut b) = (x_hat.clone(), x.clone());
    if let Some(wm) = weight_map {
        a = a.broadcast_mul(wm)?;
        b = b.broadcast_mul(wm)?;
    }
    let mut loss = ((&a - &b)?.abs()?.flatten_from(1)?.mean(1)? * w.lambda_l1)?;
    if w.lambda_lpips > 0.0 {
        let d = perceptual.distance(&a.clamp(0.0, 1.0)?, &b)?;
        loss = (loss + (d * w.lambda_lpips)?)?;
    }
    Ok(loss)
}

/// Batch mean of [`rec_loss_per_sample`].
pub fn rec_loss(x_hat: &Tensor, x: &Tensor, w: &LossWeights, perceptual: &Perceptual, hf_weighting: bool) -> Result<Tensor> {
    Ok(rec_loss_per_sample(x_hat, x, w, perceptual, hf_weighting)?.mean_all()?)
}

/// Scalar loss with its parts.
pub struct LossTerms {
    pub total: Tensor,
    pub rec: Tensor,
    pub far: Tensor,
    pub hqi: Vec<f64>,
}

impl LossTerms {
    pub fn values(&self) -> Result<(f64, f64, f64)> {
        let v = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
        Ok((v(&self.total)?, v(&self.rec)?, v(&self.far)?))
    }
}

/// Everything a stage objective needs besides the data.
pub struct ObjectiveCtx<'a> {
    pub lrn: &'a Lrn,
    pub perceptual: &'a Perceptual,
    pub controller: ControllerConfig,
    pub weights: LossWeights,
    pub lambda_far: f64,
}

fn zero(dtype: DType) -> Result<Tensor> {
    Ok(Tensor::zeros((), dtype, &Device::Cpu)?)
}

/// `L_rec(R(s ⊙ E_deg(Xˢ), E_img(Yˢ)), Xˢ) + λ_pt·Φ_far(Yˢ)` with the
/// pretraining controller `s = n + (1 − HQI)`.
pub fn pretrain_loss<R: Rng + ?Sized>(ctx: &ObjectiveCtx, x_s: &Tensor, y_gt: &Tensor, rng: &mut R) -> Result<LossTerms> {
    let dtype = x_s.dtype();
    let hqi = if ctx.controller.enabled {
        hqi_batch(x_s, y_gt, ctx.perceptual)?
    } else {
        Vec::new()
    };
    let s = controller_batch(&ctx.controller, Stage::Pretrain, &hqi, ctx.lrn.embed_dim(), rng, dtype)?;
    let (x_hat, e_im) = ctx.lrn.reconstruct(x_s, y_gt, s.as_ref())?;
    let rec = rec_loss(&x_hat, x_s, &ctx.weights, ctx.perceptual, false)?;
    let far = if ctx.lambda_far > 0.0 {
        ctx.lrn.far_from_features(&e_im, y_gt)?.mean_all()?
    } else {
        zero(dtype)?
    };
    let total = (&rec + (&far * ctx.lambda_far)?)?;
    Ok(LossTerms { total, rec, far, hqi })
}

/// `L_rec(R(s ⊙ E_deg(Xʳ), E_img(M(Xʳ))), Xʳ) + λ_ft·Φ_far(M(Xʳ))` with the
/// finetuning controller and high-frequency weighting.
pub fn finetune_loss<R: Rng + ?Sized>(ctx: &ObjectiveCtx, sr: &SrModel, x_r: &Tensor, rng: &mut R) -> Result<LossTerms> {
    let y = sr.forward(x_r)?;
    finetune_loss_from_output(ctx, x_r, &y, rng)
}

/// [`finetune_loss`] given the SR output `y = M(Xʳ)`.
pub fn finetune_loss_from_output<R: Rng + ?Sized>(
    ctx: &ObjectiveCtx,
    x_r: &Tensor,
    y: &Tensor,
    rng: &mut R,
) -> Result<LossTerms> {
    let dtype = x_r.dtype();
    let hqi = if ctx.controller.enabled {
        hqi_batch(x_r, y, ctx.perceptual)?
    } else {
        Vec::new()
    };
    let s = controller_batch(&ctx.controller, Stage::Finetune, &hqi, ctx.lrn.embed_dim(), rng, dtype)?;
    let (x_hat, e_im) = ctx.lrn.reconstruct(x_r, y, s.as_ref())?;
    let rec = rec_loss(&x_hat, x_r, &ctx.weights, ctx.perceptual, true)?;
    let far = if ctx.lambda_far > 0.0 {
        ctx.lrn.far_from_features(&e_im, y)?.mean_all()?
    } else {
        zero(dtype)?
    };
    let total = (&rec + (&far * ctx.lambda_far)?)?;
    Ok(LossTerms { total, rec, far, hqi })
}
