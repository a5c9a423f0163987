//! High-resolution quality indicator and the controller vector that rescales
//! the degradation embedding.

use std::fmt;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::degrade::derive_seed;
use crate::error::{Error, Result};
use crate::imagedata::{bicubic_resize, ImageTensor};
use crate::metrics::Perceptual;
use crate::nn::BicubicUpsample;
use crate::par::{map_indexed, Exec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "finetune" => Ok(Stage::Finetune),
            other => Err(Error::Invalid(format!("unknown controller stage `{other}`"))),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        })
    }
}

/// Finetuning offset rule. `Inverted` uses `1 − HQI`, the alternative the
/// controller comparison runs against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneRule {
    #[default]
    Hqi,
    Inverted,
}

impl FromStr for FinetuneRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hqi" | "n+hqi" => Ok(Self::Hqi),
            "inverted" | "n+1-hqi" => Ok(Self::Inverted),
            other => Err(Error::Invalid(format!("unknown controller rule `{other}`"))),
        }
    }
}

impl FinetuneRule {
    pub fn label(self) -> &'static str {
        match self {
            Self::Hqi => "n+HQI",
            Self::Inverted => "n+1-HQI",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub enabled: bool,
    pub noise: bool,
    pub finetune_rule: FinetuneRule,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            noise: true,
            finetune_rule: FinetuneRule::Hqi,
        }
    }
}

/// `s = n + c·1` together with the stage and indicator it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerVector {
    pub values: Vec<f64>,
    pub stage: Stage,
    pub hqi: f64,
}

fn check_hqi(h: f64) -> Result<()> {
    if (0.0..=1.0).contains(&h) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("HQI {h} outside [0, 1]")))
    }
}

/// Deterministic part `c` of the controller.
pub fn offset(stage: Stage, rule: FinetuneRule, hqi: f64) -> f64 {
    match (stage, rule) {
        (Stage::Pretrain, _) | (Stage::Finetune, FinetuneRule::Inverted) => 1.0 - hqi,
        (Stage::Finetune, FinetuneRule::Hqi) => hqi,
    }
}

/// `1 − d(f↑(x), y)` for one pair; no gradient is involved.
pub fn hqi(x_lr: &ImageTensor, y_hr: &ImageTensor, perceptual: &Perceptual) -> Result<f64> {
    let (h, w) = (x_lr.height(), x_lr.width());
    if y_hr.height() % h != 0
        || y_hr.width() % w != 0
        || y_hr.height() / h != y_hr.width() / w
        || x_lr.channels() != y_hr.channels()
    {
        return Err(Error::Shape(format!(
            "HR {}x{} is not an integer multiple of LR {h}x{w}",
            y_hr.height(),
            y_hr.width()
        )));
    }
    let up = bicubic_resize(x_lr, y_hr.height(), y_hr.width())?;
    Ok((1.0 - perceptual.distance_images(&up, y_hr)?).clamp(0.0, 1.0))
}

/// Batched, detached HQI: `(B, 3, h, w)`, `(B, 3, H, W)` → `(B,)` as `f64`s.
pub fn hqi_batch(x: &Tensor, y: &Tensor, perceptual: &Perceptual) -> Result<Vec<f64>> {
    let (_, _, h, w) = x.dims4()?;
    let (_, _, hy, wy) = y.dims4()?;
    if hy % h != 0 || wy % w != 0 || hy / h != wy / w {
        return Err(Error::Shape(format!("HR {hy}x{wy} is not an integer multiple of LR {h}x{w}")));
    }
    let x = x.detach();
    let up = BicubicUpsample::new(h, w, hy, wy, x.dtype())?.forward(&x)?.clamp(0.0, 1.0)?;
    let y = y.detach().clamp(0.0, 1.0)?;
    let d = perceptual.distance(&up, &y)?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    Ok(d.into_iter().map(|v| (1.0 - v).clamp(0.0, 1.0)).collect())
}

/// Draws `s = n + c·1`; `rng = None` gives the noise-free vector `c·1`.
pub fn make_controller<R: Rng + ?Sized>(
    stage: Stage,
    rule: FinetuneRule,
    hqi_value: f64,
    dim: usize,
    rng: Option<&mut R>,
) -> Result<ControllerVector> {
    check_hqi(hqi_value)?;
    let c = offset(stage, rule, hqi_value);
    let values = match rng {
        Some(rng) => (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) + c).collect(),
        None => vec![c; dim],
    };
    Ok(ControllerVector {
        values,
        stage,
        hqi: hqi_value,
    })
}

/// Elementwise `s ⊙ e_d`.
pub fn modulate(e_d: &[f64], s: &ControllerVector) -> Result<Vec<f64>> {
    if e_d.len() != s.values.len() {
        return Err(Error::Shape(format!(
            "embedding has {} entries, controller {}",
            e_d.len(),
            s.values.len()
        )));
    }
    Ok(e_d.iter().zip(&s.values).map(|(e, s)| e * s).collect())
}

/// Per-sample controller rows `(B, dim)`, or `None` when the controller is
/// disabled (the embedding is then used as is).
pub fn controller_batch<R: Rng + ?Sized>(
    cfg: &ControllerConfig,
    stage: Stage,
    hqis: &[f64],
    dim: usize,
    rng: &mut R,
    dtype: DType,
) -> Result<Option<Tensor>> {
    if !cfg.enabled {
        return Ok(None);
    }
    let mut rows = Vec::with_capacity(hqis.len() * dim);
    for &h in hqis {
        let v = if cfg.noise {
            make_controller(stage, cfg.finetune_rule, h, dim, Some(&mut *rng))?
        } else {
            make_controller::<R>(stage, cfg.finetune_rule, h, dim, None)?
        };
        rows.extend(v.values);
    }
    Ok(Some(Tensor::from_vec(rows, (hqis.len(), dim), &Device::Cpu)?.to_dtype(dtype)?))
}

/// Component-wise sample mean of `draws` controller vectors. Draws are split
/// into fixed chunks with their own seeds, so the result is independent of
/// the execution policy.
pub fn monte_carlo_mean(
    stage: Stage,
    rule: FinetuneRule,
    hqi_value: f64,
    dim: usize,
    draws: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<f64>> {
    check_hqi(hqi_value)?;
    const CHUNK: usize = 4096;
    let chunks = draws.div_ceil(CHUNK);
    let partial = map_indexed(exec, chunks, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let n = CHUNK.min(draws - i * CHUNK);
        let mut acc = vec![0.0f64; dim];
        for _ in 0..n {
            let s = make_controller(stage, rule, hqi_value, dim, Some(&mut rng)).expect("validated HQI");
            for (a, v) in acc.iter_mut().zip(s.values) {
                *a += v;
            }
        }
        acc
    });
    let mut mean = vec![0.0; dim];
    for acc in partial {
        for (m, a) in mean.iter_mut().zip(acc) {
            *m += a;
        }
    }
    Ok(mean.into_iter().map(|m| m / draws.max(1) as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets() {
        let s = make_controller::<ChaCha8Rng>(Stage::Pretrain, FinetuneRule::Hqi, 1.0, 4, None).unwrap();
        assert_eq!(s.values, vec![0.0; 4]);
        let s = make_controller::<ChaCha8Rng>(Stage::Finetune, FinetuneRule::Hqi, 0.4, 3, None).unwrap();
        assert_eq!(s.values, vec![0.4; 3]);
        let s = make_controller::<ChaCha8Rng>(Stage::Finetune, FinetuneRule::Inverted, 0.25, 2, None).unwrap();
        assert_eq!(s.values, vec![0.75; 2]);
        assert!(make_controller::<ChaCha8Rng>(Stage::Finetune, FinetuneRule::Hqi, 1.2, 2, None).is_err());
        assert!("midtrain".parse::<Stage>().is_err());
    }

    #[test]
    fn modulate_elementwise() {
        let s = ControllerVector {
            values: vec![2.0, 0.5, -1.0],
            stage: Stage::Finetune,
            hqi: 0.0,
        };
        assert_eq!(modulate(&[1.0, -2.0, 3.0], &s).unwrap(), vec![2.0, -1.0, -3.0]);
        assert!(modulate(&[1.0], &s).is_err());
    }

    #[test]
    fn monte_carlo_independent_of_exec() {
        let a = monte_carlo_mean(Stage::Finetune, FinetuneRule::Hqi, 0.7, 8, 10_000, 1, Exec::Sequential).unwrap();
        let b = monte_carlo_mean(Stage::Finetune, FinetuneRule::Hqi, 0.7, 8, 10_000, 1, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|m| (m - 0.7).abs() < 0.05));
    }

    #[test]
    fn disabled_controller_is_none() {
        let cfg = ControllerConfig {
            enabled: false,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(controller_batch(&cfg, Stage::Pretrain, &[0.5], 4, &mut rng, DType::F32).unwrap().is_none());
        let cfg = ControllerConfig {
            noise: false,
            ..Default::default()
        };
        let t = controller_batch(&cfg, Stage::Pretrain, &[0.25, 1.0], 2, &mut rng, DType::F64).unwrap().unwrap();
        assert_eq!(t.to_vec2::<f64>().unwrap(), vec![vec![0.75, 0.75], vec![0.0, 0.0]]);
    }

    #[test]
    fn hqi_of_own_upsample_is_one() {
        let p = Perceptual::fallback(DType::F64).unwrap();
        let x = ImageTensor::from_fn(3, 8, 8, |c, y, x| ((x * 7 + y * 3 + c) % 11) as f32 / 11.0).unwrap();
        let y = bicubic_resize(&x, 32, 32).unwrap();
        assert!((hqi(&x, &y, &p).unwrap() - 1.0).abs() < 1e-6);
        let bad = ImageTensor::filled(3, 30, 32, 0.0).unwrap();
        assert!(hqi(&x, &bad, &p).is_err());
    }
}
