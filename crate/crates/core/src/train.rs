//! Optimization loops: LRN pretraining, SR-model finetuning with early
//! stopping, and supervised training of the stand-in SR model.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{controller_batch, hqi_batch, ControllerConfig, Stage};
use crate::degrade::derive_seed;
use crate::error::{Error, Result};
use crate::imagedata::{random_crop, random_crop_aligned, stack_images, ImageTensor};
use crate::losses::{finetune_loss_from_output, pretrain_loss, rec_loss_per_sample, LossWeights, ObjectiveCtx};
use crate::metrics::Perceptual;
use crate::models::{freeze_shallow, Lrn, SrModel};
use crate::nn::{clip_grad_norm, Adam, AdamConfig, Param, Schedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub total_iters: usize,
    pub batch_size: usize,
    /// HR-side patch size; the LR patch is `patch_size / scale`.
    pub patch_size: usize,
    pub ema_decay: f64,
    pub seed: u64,
    pub schedule: Schedule,
    pub freeze_fraction: f64,
    pub eval_every: usize,
    /// Evaluations without improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    pub grad_clip: f64,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            total_iters: 500_000,
            batch_size: 16,
            patch_size: 64,
            ema_decay: 0.999,
            seed: 0,
            schedule: Schedule::Cosine,
            freeze_fraction: 0.2,
            eval_every: 5_000,
            early_stop_patience: 0,
            grad_clip: 1.0,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    /// Finetuning defaults: 600 iterations at 5e-6.
    pub fn finetune() -> Self {
        Self {
            lr: 5e-6,
            total_iters: 600,
            batch_size: 4,
            eval_every: 50,
            ..Self::default()
        }
    }

    /// Small LRN pretraining run for CPU-class hardware.
    pub fn desk_pretrain() -> Self {
        Self {
            lr: 1e-3,
            total_iters: 600,
            batch_size: 8,
            patch_size: 32,
            ema_decay: 0.99,
            eval_every: 200,
            ..Self::default()
        }
    }

    /// Small finetuning run for CPU-class hardware.
    pub fn desk_finetune() -> Self {
        Self {
            lr: 2e-4,
            total_iters: 120,
            batch_size: 4,
            patch_size: 32,
            ema_decay: 0.9,
            eval_every: 10,
            ..Self::default()
        }
    }

    /// Supervised SR training on bicubic pairs.
    pub fn desk_sr() -> Self {
        Self {
            lr: 1e-3,
            total_iters: 400,
            batch_size: 8,
            patch_size: 32,
            ema_decay: 0.99,
            eval_every: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self, scale: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return bad(format!("ema_decay must be in (0, 1), got {}", self.ema_decay));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas must be in [0, 1), got ({}, {})", self.beta1, self.beta2));
        }
        if scale == 0 || self.patch_size == 0 || self.patch_size % scale != 0 {
            return bad(format!("patch_size {} not divisible by scale {scale}", self.patch_size));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.freeze_fraction) {
            return bad(format!("freeze_fraction must be in [0, 1], got {}", self.freeze_fraction));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must be in [0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }

    fn adam(&self) -> Adam {
        Adam::new(AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        })
    }

    fn lr_at(&self, step: usize) -> f64 {
        self.schedule.lr(self.lr, step, self.total_iters)
    }
}

/// Exponential moving average of parameter values.
#[derive(Clone, Debug)]
pub struct EmaShadow {
    decay: f64,
    shadow: BTreeMap<String, Tensor>,
}

impl EmaShadow {
    pub fn new(decay: f64, init: BTreeMap<String, Tensor>) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Config(format!("EMA decay must be in (0, 1), got {decay}")));
        }
        Ok(Self { decay, shadow: init })
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn values(&self) -> &BTreeMap<String, Tensor> {
        &self.shadow
    }

    pub fn into_values(self) -> BTreeMap<String, Tensor> {
        self.shadow
    }

    /// `shadow ← d·shadow + (1 − d)·params`.
    pub fn update(&mut self, params: &BTreeMap<String, Tensor>) -> Result<()> {
        ema_update(self, params)
    }
}

pub fn ema_update(shadow: &mut EmaShadow, params: &BTreeMap<String, Tensor>) -> Result<()> {
    let d = shadow.decay;
    for (name, s) in shadow.shadow.iter_mut() {
        let p = params
            .get(name)
            .ok_or_else(|| Error::Shape(format!("EMA: parameter `{name}` missing")))?;
        if p.dims() != s.dims() {
            return Err(Error::Shape(format!(
                "EMA: `{name}` has shape {:?}, shadow {:?}",
                p.dims(),
                s.dims()
            )));
        }
        *s = ((&*s * d)? + (p.detach() * (1.0 - d))?)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss_rec: f64,
    pub loss_far: f64,
    pub lr: f64,
    pub val_score: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    /// `step,loss_rec,loss_far,lr,val_score`; the last column is empty when
    /// no validation ran at that step.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path.as_ref())?;
        let rows = r.deserialize().collect::<std::result::Result<Vec<LogRow>, _>>()?;
        Ok(Self { rows })
    }

    /// Mean of `loss_rec + weight·loss_far` over the first or last `k` rows.
    pub fn window_mean(&self, k: usize, last: bool, far_weight: f64) -> Option<f64> {
        let training: Vec<&LogRow> = self.rows.iter().filter(|r| r.loss_rec.is_finite()).collect();
        if training.is_empty() {
            return None;
        }
        let k = k.min(training.len()).max(1);
        let slice = if last {
            &training[training.len() - k..]
        } else {
            &training[..k]
        };
        Some(slice.iter().map(|r| r.loss_rec + far_weight * r.loss_far).sum::<f64>() / k as f64)
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn check_finite(step: usize, batch: &[usize], values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step,
            batch: batch.to_vec(),
        })
    }
}

fn optimize(params: &[Param], loss: &Tensor, adam: &mut Adam, lr: f64, clip: f64) -> Result<()> {
    let mut grads = loss.backward()?;
    let trainable: Vec<Param> = params.iter().filter(|p| p.is_trainable()).cloned().collect();
    clip_grad_norm(&trainable, &mut grads, clip)?;
    adam.step(&trainable, &grads, lr)
}

/// Stage-objective settings shared by pretraining and finetuning.
#[derive(Clone, Copy)]
pub struct StageSetup<'a> {
    pub cfg: &'a TrainConfig,
    pub controller: ControllerConfig,
    pub lambda_far: f64,
    pub weights: LossWeights,
    pub perceptual: &'a Perceptual,
}

impl StageSetup<'_> {
    fn ctx<'b>(&'b self, lrn: &'b Lrn) -> ObjectiveCtx<'b> {
        ObjectiveCtx {
            lrn,
            perceptual: self.perceptual,
            controller: self.controller,
            weights: self.weights,
            lambda_far: self.lambda_far,
        }
    }
}

pub struct PretrainOutcome {
    pub log: TrainLog,
    pub ema: EmaShadow,
    pub checkpoints: Vec<PathBuf>,
}

/// Optimizes every LRN component and the alignment maps on aligned random
/// crops of `(lr, hr)` pairs. With `out_dir`, writes `log.csv`, periodic
/// checkpoints and `lrn.safetensors` (raw weights plus EMA).
pub fn pretrain(
    setup: &StageSetup,
    lrn: &Lrn,
    pairs: &[(ImageTensor, ImageTensor)],
    out_dir: Option<&Path>,
) -> Result<PretrainOutcome> {
    let cfg = setup.cfg;
    let scale = lrn.scale();
    cfg.validate(scale)?;
    setup.weights.validate()?;
    if pairs.is_empty() {
        return Err(Error::Empty("pretraining needs at least one pair".into()));
    }
    lrn.set_trainable(true);
    let params = lrn.params();
    let mut adam = cfg.adam();
    let mut ema = EmaShadow::new(cfg.ema_decay, lrn.snapshot())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainLog::default();
    let mut checkpoints = Vec::new();
    let ctx = setup.ctx(lrn);
    let lr_patch = cfg.patch_size / scale;
    let dtype = lrn.dtype();
    for step in 0..cfg.total_iters {
        let batch: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..pairs.len())).collect();
        let mut lrs = Vec::with_capacity(batch.len());
        let mut hrs = Vec::with_capacity(batch.len());
        for &i in &batch {
            let (lr, hr) = random_crop_aligned(&mut rng, &pairs[i].0, &pairs[i].1, lr_patch, scale)?;
            lrs.push(lr);
            hrs.push(hr);
        }
        let x = stack_images(&lrs, dtype)?;
        let y = stack_images(&hrs, dtype)?;
        let terms = pretrain_loss(&ctx, &x, &y, &mut rng)?;
        let (total, rec, far) = terms.values()?;
        check_finite(step, &batch, &[total, rec, far])?;
        let lr = cfg.lr_at(step);
        optimize(&params, &terms.total, &mut adam, lr, cfg.grad_clip)?;
        ema.update(&lrn.snapshot())?;
        log.rows.push(LogRow {
            step,
            loss_rec: rec,
            loss_far: far,
            lr,
            val_score: None,
        });
        if let Some(dir) = out_dir {
            if (step + 1) % cfg.eval_every == 0 && step + 1 < cfg.total_iters {
                let p = dir.join("checkpoints").join(format!("lrn_step{:07}.safetensors", step + 1));
                lrn.save(&p, (step + 1) as u64, Some(ema.values()))?;
                checkpoints.push(p);
            }
        }
    }
    if let Some(dir) = out_dir {
        log.write_csv(dir.join("log.csv"))?;
        let p = dir.join("lrn.safetensors");
        lrn.save(&p, cfg.total_iters as u64, Some(ema.values()))?;
        checkpoints.push(p);
    }
    Ok(PretrainOutcome { log, ema, checkpoints })
}

/// Sorted-name stride split: every `round(1/fraction)`-th image (starting at
/// the first) is held out. Returns `(train, val)` indices into `names`.
pub fn split_validation(names: &[String], fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| names[a].cmp(&names[b]));
    if fraction <= 0.0 {
        return Ok((order, Vec::new()));
    }
    if names.len() < 2 {
        return Err(Error::Empty(format!(
            "a validation split needs at least 2 images, got {}",
            names.len()
        )));
    }
    let stride = ((1.0 / fraction).round() as usize).max(2);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (rank, &i) in order.iter().enumerate() {
        if rank % stride == 0 {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    Ok((train, val))
}

pub struct FinetuneOutcome {
    pub log: TrainLog,
    /// Step whose EMA weights scored best on validation (0 = the input model).
    pub best_step: usize,
    pub best_val: Option<f64>,
    pub final_val: Option<f64>,
    pub best: BTreeMap<String, Tensor>,
    pub last: BTreeMap<String, Tensor>,
    pub train_names: Vec<String>,
    pub val_names: Vec<String>,
    pub lrn_hash_before: String,
    pub lrn_hash_after: String,
    pub stopped_early: bool,
}

/// Noise-free finetuning reconstruction loss of `sr` on whole images.
pub fn validation_score(setup: &StageSetup, lrn: &Lrn, sr: &SrModel, images: &[&ImageTensor]) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Empty("empty validation set".into()));
    }
    let controller = ControllerConfig {
        noise: false,
        ..setup.controller
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    for img in images {
        let x = img.to_tensor(lrn.dtype())?;
        let y = sr.forward(&x)?.detach();
        let hqi = if controller.enabled {
            hqi_batch(&x, &y, setup.perceptual)?
        } else {
            Vec::new()
        };
        let s = controller_batch(&controller, Stage::Finetune, &hqi, lrn.embed_dim(), &mut rng, x.dtype())?;
        let (x_hat, _) = lrn.reconstruct(&x, &y, s.as_ref())?;
        let l = rec_loss_per_sample(&x_hat, &x, &setup.weights, setup.perceptual, true)?;
        total += scalar(&l.mean_all()?)?;
    }
    Ok(total / images.len() as f64)
}

/// Adapts `sr` to unpaired LR images with the LRN frozen.
///
/// Shallow layers of `sr` are frozen, a sorted-name validation split is held
/// out, and the EMA weights are scored before training and every
/// `eval_every` steps; the best-scoring snapshot is kept. `sr` ends with its
/// raw final weights.
pub fn finetune(
    setup: &StageSetup,
    lrn: &Lrn,
    sr: &SrModel,
    images: &[(String, ImageTensor)],
    out_dir: Option<&Path>,
) -> Result<FinetuneOutcome> {
    let cfg = setup.cfg;
    let scale = sr.scale();
    if scale != lrn.scale() {
        return Err(Error::Checkpoint(format!(
            "SR model scale {scale} differs from LRN scale {}",
            lrn.scale()
        )));
    }
    cfg.validate(scale)?;
    setup.weights.validate()?;
    if images.is_empty() {
        return Err(Error::Empty("no target-domain LR images".into()));
    }
    let lr_patch = cfg.patch_size / scale;
    let names: Vec<String> = images.iter().map(|(n, _)| n.clone()).collect();
    let (train_idx, val_idx) = split_validation(&names, cfg.val_fraction)?;
    for &i in &train_idx {
        let img = &images[i].1;
        if img.height() < lr_patch || img.width() < lr_patch {
            return Err(Error::Invalid(format!(
                "{} is smaller than the {lr_patch}px LR patch",
                images[i].0
            )));
        }
    }
    lrn.set_trainable(false);
    let lrn_hash_before = lrn.hash();
    sr.store().set_all_trainable(true);
    freeze_shallow(sr.store(), cfg.freeze_fraction)?;
    let params = sr.store().params();
    let mut adam = cfg.adam();
    let mut ema = EmaShadow::new(cfg.ema_decay, sr.store().snapshot())?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xF1));
    let ctx = setup.ctx(lrn);
    let dtype = lrn.dtype();
    let val_images: Vec<&ImageTensor> = val_idx.iter().map(|&i| &images[i].1).collect();
    let evaluator = sr.duplicate()?;
    let score = |values: &BTreeMap<String, Tensor>| -> Result<Option<f64>> {
        if val_images.is_empty() {
            return Ok(None);
        }
        evaluator.store().load(values)?;
        validation_score(setup, lrn, &evaluator, &val_images).map(Some)
    };

    let mut log = TrainLog::default();
    let initial = score(ema.values())?;
    log.rows.push(LogRow {
        step: 0,
        loss_rec: f64::NAN,
        loss_far: f64::NAN,
        lr: cfg.lr_at(0),
        val_score: initial,
    });
    let mut best = ema.values().clone();
    let mut best_val = initial;
    let mut best_step = 0;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut last_val = initial;
    for step in 0..cfg.total_iters {
        let batch: Vec<usize> = (0..cfg.batch_size)
            .map(|_| train_idx[rng.random_range(0..train_idx.len())])
            .collect();
        let crops = batch
            .iter()
            .map(|&i| random_crop(&mut rng, &images[i].1, lr_patch))
            .collect::<Result<Vec<_>>>()?;
        let x = stack_images(&crops, dtype)?;
        let y = sr.forward(&x)?;
        let terms = finetune_loss_from_output(&ctx, &x, &y, &mut rng)?;
        let (total, rec, far) = terms.values()?;
        check_finite(step + 1, &batch, &[total, rec, far])?;
        let lr = cfg.lr_at(step);
        optimize(&params, &terms.total, &mut adam, lr, cfg.grad_clip)?;
        ema.update(&sr.store().snapshot())?;
        let done = step + 1;
        let mut val_score = None;
        if done % cfg.eval_every == 0 || done == cfg.total_iters {
            val_score = score(ema.values())?;
            last_val = val_score;
            if let (Some(v), Some(b)) = (val_score, best_val) {
                if v < b {
                    best_val = Some(v);
                    best = ema.values().clone();
                    best_step = done;
                    since_best = 0;
                } else {
                    since_best += 1;
                }
            }
        }
        log.rows.push(LogRow {
            step: done,
            loss_rec: rec,
            loss_far: far,
            lr,
            val_score,
        });
        if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
            stopped_early = true;
            break;
        }
    }
    let last = ema.values().clone();
    if best_val.is_none() {
        best = last.clone();
        best_step = log.rows.last().map_or(0, |r| r.step);
    }
    let lrn_hash_after = lrn.hash();
    if let Some(dir) = out_dir {
        log.write_csv(dir.join("log.csv"))?;
        let last_step = log.rows.last().map_or(0, |r| r.step) as u64;
        sr.save(dir.join("sr_last.safetensors"), last_step, Some(&last))?;
        let best_model = sr.duplicate()?;
        best_model.store().load(&best)?;
        best_model.save(dir.join("sr_best.safetensors"), best_step as u64, Some(&best))?;
    }
    Ok(FinetuneOutcome {
        log,
        best_step,
        best_val,
        final_val: last_val,
        best,
        last,
        train_names: train_idx.iter().map(|&i| names[i].clone()).collect(),
        val_names: val_idx.iter().map(|&i| names[i].clone()).collect(),
        lrn_hash_before,
        lrn_hash_after,
        stopped_early,
    })
}

pub struct SrTrainOutcome {
    pub log: TrainLog,
    pub ema: EmaShadow,
}

/// Supervised ℓ1 training of `sr` on aligned `(lr, hr)` crops; used to
/// produce the stand-in model that finetuning starts from.
pub fn train_sr(
    cfg: &TrainConfig,
    sr: &SrModel,
    pairs: &[(ImageTensor, ImageTensor)],
    out_dir: Option<&Path>,
) -> Result<SrTrainOutcome> {
    let scale = sr.scale();
    cfg.validate(scale)?;
    if pairs.is_empty() {
        return Err(Error::Empty("SR training needs at least one pair".into()));
    }
    sr.store().set_all_trainable(true);
    let params = sr.store().params();
    let mut adam = cfg.adam();
    let mut ema = EmaShadow::new(cfg.ema_decay, sr.store().snapshot())?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5B));
    let mut log = TrainLog::default();
    let dtype = sr.store().dtype();
    let lr_patch = cfg.patch_size / scale;
    for step in 0..cfg.total_iters {
        let batch: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..pairs.len())).collect();
        let mut lrs = Vec::new();
        let mut hrs = Vec::new();
        for &i in &batch {
            let (lr, hr) = random_crop_aligned(&mut rng, &pairs[i].0, &pairs[i].1, lr_patch, scale)?;
            lrs.push(lr);
            hrs.push(hr);
        }
        let x = stack_images(&lrs, dtype)?;
        let y = stack_images(&hrs, dtype)?;
        let loss = (sr.forward(&x)? - y)?.abs()?.mean_all()?;
        let v = scalar(&loss)?;
        check_finite(step, &batch, &[v])?;
        let lr = cfg.lr_at(step);
        optimize(&params, &loss, &mut adam, lr, cfg.grad_clip)?;
        ema.update(&sr.store().snapshot())?;
        log.rows.push(LogRow {
            step,
            loss_rec: v,
            loss_far: 0.0,
            lr,
            val_score: None,
        });
    }
    if let Some(dir) = out_dir {
        log.write_csv(dir.join("log.csv"))?;
        sr.save(dir.join("sr.safetensors"), cfg.total_iters as u64, Some(ema.values()))?;
    }
    Ok(SrTrainOutcome { log, ema })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn single(v: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("w".to_string(), Tensor::new(&[v], &Device::Cpu).unwrap())])
    }

    fn value(e: &EmaShadow) -> f64 {
        e.values()["w"].to_vec1::<f64>().unwrap()[0]
    }

    #[test]
    fn ema_arithmetic() {
        let mut e = EmaShadow::new(0.999, single(0.0)).unwrap();
        e.update(&single(1.0)).unwrap();
        assert!((value(&e) - 0.001).abs() < 1e-15);
        for _ in 1..100 {
            e.update(&single(1.0)).unwrap();
        }
        assert!((value(&e) - (1.0 - 0.999f64.powi(100))).abs() < 1e-12);
        assert!((value(&e) - 0.09521).abs() < 1e-5);
        let mut fixed = EmaShadow::new(0.9, single(0.3)).unwrap();
        for _ in 0..50 {
            fixed.update(&single(0.3)).unwrap();
        }
        assert!((value(&fixed) - 0.3).abs() < 1e-15);
        assert!(EmaShadow::new(1.0, single(0.0)).is_err());
        assert!(e.update(&BTreeMap::new()).is_err());
    }

    #[test]
    fn validation_split_is_stride_based() {
        let names: Vec<String> = (0..20).rev().map(|i| format!("img{i:02}.png")).collect();
        let (train, val) = split_validation(&names, 0.1).unwrap();
        let val_names: Vec<&str> = val.iter().map(|&i| names[i].as_str()).collect();
        assert_eq!(val_names, vec!["img00.png", "img10.png"]);
        assert_eq!(train.len(), 18);
        let (train, val) = split_validation(&names, 0.0).unwrap();
        assert_eq!((train.len(), val.len()), (20, 0));
        assert!(split_validation(&names[..1], 0.1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate(4).is_ok());
        let bad = TrainConfig {
            patch_size: 30,
            ..TrainConfig::default()
        };
        assert!(bad.validate(4).is_err());
        let bad = TrainConfig {
            ema_decay: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate(4).is_err());
        let bad = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate(4).is_err());
    }

    #[test]
    fn log_csv_has_header_and_blank_val() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        let log = TrainLog {
            rows: vec![
                LogRow { step: 0, loss_rec: 0.5, loss_far: 0.1, lr: 1e-3, val_score: None },
                LogRow { step: 1, loss_rec: 0.4, loss_far: 0.1, lr: 1e-3, val_score: Some(0.2) },
            ],
        };
        log.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,loss_rec,loss_far,lr,val_score");
        assert!(lines[1].ends_with(','));
        assert_eq!(TrainLog::read_csv(&p).unwrap(), log);
    }
}
