//! Evaluation runner and ablation experiments: directory metrics, the
//! interpolation sweep, the regularizer distribution-shift histogram and
//! finetuning variant comparisons.

mod plot;
mod report;
pub mod stats;

use std::path::Path;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

pub use plot::svg;
pub use report::{AblationReport, Series};
use stats::{histogram, mean, spearman};

use crate::controller::{hqi, offset, ControllerConfig, FinetuneRule, Stage};
use crate::degrade::{apply_recipe, derive_seed, Preset};
use crate::error::{Error, Result};
use crate::imagedata::{bicubic_resize, crop_patch, list_images, load_image, stack_images, ImageTensor};
use crate::metrics::{psnr, ssim, MetricReport, MetricRow, Perceptual};
use crate::models::{Lrn, SrModel};
use crate::par::{try_map_indexed, Exec};
use crate::train::{finetune, StageSetup};

pub const DEFAULT_RATIOS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// PSNR, SSIM and perceptual distance of one output against its reference.
pub fn metric_row(name: &str, out: &ImageTensor, gt: &ImageTensor, perceptual: &Perceptual) -> Result<MetricRow> {
    Ok(MetricRow {
        image: name.to_string(),
        psnr: psnr(out, gt)?,
        ssim: ssim(out, gt)?,
        lpips: perceptual.distance_images(out, gt)?,
    })
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Images of `dir` with their file names, in sorted order.
pub fn load_named_dir(dir: impl AsRef<Path>, exec: Exec) -> Result<Vec<(String, ImageTensor)>> {
    let paths = list_images(dir.as_ref())?;
    try_map_indexed(exec, paths.len(), |i| Ok((file_name(&paths[i]), load_image(&paths[i])?)))
}

/// Metrics of every image in `sr_dir` against the same file name in `gt_dir`.
pub fn evaluate_dir(
    sr_dir: impl AsRef<Path>,
    gt_dir: impl AsRef<Path>,
    perceptual: &Perceptual,
    exec: Exec,
) -> Result<MetricReport> {
    let (sr_dir, gt_dir) = (sr_dir.as_ref(), gt_dir.as_ref());
    let outputs = list_images(sr_dir)?;
    if outputs.is_empty() {
        return Err(Error::Empty(format!("no images in {}", sr_dir.display())));
    }
    let pairs = outputs
        .iter()
        .map(|p| {
            let name = file_name(p);
            let gt = gt_dir.join(&name);
            if gt.is_file() {
                Ok((name, p.clone(), gt))
            } else {
                Err(Error::Invalid(format!("{name} has no counterpart in {}", gt_dir.display())))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = try_map_indexed(exec, pairs.len(), |i| {
        let (name, out, gt) = &pairs[i];
        metric_row(name, &load_image(out)?, &load_image(gt)?, perceptual)
    })?;
    Ok(MetricReport {
        backend: perceptual.name().to_string(),
        rows,
    })
}

/// `Y_i = i·f↑(x) + (1 − i)·y_gt`.
pub fn interpolate_hr(x: &ImageTensor, y_gt: &ImageTensor, ratio: f64) -> Result<ImageTensor> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Invalid(format!("interpolation ratio {ratio} outside [0, 1]")));
    }
    let up = bicubic_resize(x, y_gt.height(), y_gt.width())?;
    up.lerp(y_gt, ratio as f32)
}

/// Reconstructs `x` from `y`; `s` is the constant controller value, or
/// `None` to use the embedding unscaled.
pub fn reconstruct_image(lrn: &Lrn, x: &ImageTensor, y: &ImageTensor, s: Option<f64>) -> Result<ImageTensor> {
    let dtype = lrn.dtype();
    let xt = x.to_tensor(dtype)?;
    let yt = y.to_tensor(dtype)?;
    let s = s
        .map(|v| Tensor::full(v, (1, lrn.embed_dim()), &Device::Cpu)?.to_dtype(dtype))
        .transpose()?;
    let (x_hat, _) = lrn.reconstruct(&xt, &yt, s.as_ref())?;
    ImageTensor::from_tensor(&x_hat.detach().clamp(0.0, 1.0)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub ratios: Vec<f64>,
    /// Which controller rule drives the LRN trained with `s`; noise is off.
    pub s_stage: Stage,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ratios: DEFAULT_RATIOS.to_vec(),
            s_stage: Stage::Finetune,
        }
    }
}

fn sweep_one(
    lrn: &Lrn,
    use_s: Option<Stage>,
    pairs: &[(ImageTensor, ImageTensor)],
    ratios: &[f64],
    perceptual: &Perceptual,
    exec: Exec,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut psnrs = Vec::with_capacity(ratios.len());
    let mut lpips = Vec::with_capacity(ratios.len());
    for &r in ratios {
        let scores = try_map_indexed(exec, pairs.len(), |k| {
            let (x, y_gt) = &pairs[k];
            let y = interpolate_hr(x, y_gt, r)?;
            let s = match use_s {
                Some(stage) => Some(offset(stage, FinetuneRule::Hqi, hqi(x, &y, perceptual)?)),
                None => None,
            };
            let x_hat = reconstruct_image(lrn, x, &y, s)?;
            Ok::<_, Error>((psnr(x, &x_hat)?, perceptual.distance_images(x, &x_hat)?))
        })?;
        psnrs.push(mean(&scores.iter().map(|s| s.0).collect::<Vec<_>>())?);
        lpips.push(mean(&scores.iter().map(|s| s.1).collect::<Vec<_>>())?);
    }
    Ok((psnrs, lpips))
}

/// Reconstruction quality of `(x, y_gt)` pairs from `Y_i` for each ratio,
/// under an LRN trained with the controller and one trained without it.
///
/// Summary keys: `spearman_psnr_{with,without}_s` and
/// `spearman_lpips_{with,without}_s` (rank correlation with the ratio).
pub fn interpolation_sweep(
    pairs: &[(ImageTensor, ImageTensor)],
    lrn_with_s: &Lrn,
    lrn_without_s: &Lrn,
    perceptual: &Perceptual,
    cfg: &SweepConfig,
    exec: Exec,
) -> Result<AblationReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("interpolation sweep needs at least one pair".into()));
    }
    if cfg.ratios.len() < 2 {
        return Err(Error::Invalid("interpolation sweep needs at least two ratios".into()));
    }
    if let Some(r) = cfg.ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Invalid(format!("interpolation ratio {r} outside [0, 1]")));
    }
    let (pw, lw) = sweep_one(lrn_with_s, Some(cfg.s_stage), pairs, &cfg.ratios, perceptual, exec)?;
    let (po, lo) = sweep_one(lrn_without_s, None, pairs, &cfg.ratios, perceptual, exec)?;
    let mut report = AblationReport::new("interp", "ratio", cfg.ratios.clone());
    report.summary.insert("spearman_psnr_with_s".into(), spearman(&cfg.ratios, &pw)?);
    report.summary.insert("spearman_psnr_without_s".into(), spearman(&cfg.ratios, &po)?);
    report.summary.insert("spearman_lpips_with_s".into(), spearman(&cfg.ratios, &lw)?);
    report.summary.insert("spearman_lpips_without_s".into(), spearman(&cfg.ratios, &lo)?);
    report.summary.insert("images".into(), pairs.len() as f64);
    report.push_series("psnr_with_s", pw);
    report.push_series("psnr_without_s", po);
    report.push_series("lpips_with_s", lw);
    report.push_series("lpips_without_s", lo);
    report.validate()?;
    Ok(report)
}

/// Non-overlapping `size × size` tiles in image order, at most `limit`.
pub fn tile_patches(images: &[ImageTensor], size: usize, limit: usize) -> Result<Vec<ImageTensor>> {
    let mut out = Vec::new();
    for img in images {
        for top in (0..=img.height().saturating_sub(size)).step_by(size.max(1)) {
            for left in (0..=img.width().saturating_sub(size)).step_by(size.max(1)) {
                if out.len() == limit {
                    return Ok(out);
                }
                if img.height() >= size && img.width() >= size {
                    out.push(crop_patch(img, top, left, size)?);
                }
            }
        }
    }
    Ok(out)
}

/// Applies a named same-resolution degradation to every patch.
pub fn degrade_patches(patches: &[ImageTensor], preset: Preset, seed: u64, exec: Exec) -> Result<Vec<ImageTensor>> {
    try_map_indexed(exec, patches.len(), |i| {
        apply_recipe(&patches[i], &preset.recipe(derive_seed(seed, i as u64)))
    })
}

/// `Φ_far` of every patch, evaluated in batches of equal-sized patches.
pub fn far_values(lrn: &Lrn, patches: &[ImageTensor], batch: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(batch.max(1)) {
        let y = stack_images(chunk, lrn.dtype())?;
        let v = lrn.phi_far(&y)?.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?;
        out.extend(v);
    }
    Ok(out)
}

/// Distribution of `Φ_far` on clean patches and on each degraded corpus.
///
/// The report's x-values are bin centers and each series holds one corpus'
/// counts; summary keys are `mean.<corpus>` and `count.<corpus>`.
pub fn far_shift_histogram(
    lrn: &Lrn,
    clean: &[ImageTensor],
    degraded: &[(String, Vec<ImageTensor>)],
    bins: usize,
) -> Result<AblationReport> {
    if clean.is_empty() || degraded.iter().any(|(_, v)| v.is_empty()) {
        return Err(Error::Empty("every corpus needs at least one patch".into()));
    }
    let mut corpora = vec![("clean".to_string(), far_values(lrn, clean, 16)?)];
    for (name, patches) in degraded {
        corpora.push((name.clone(), far_values(lrn, patches, 16)?));
    }
    let slices: Vec<&[f64]> = corpora.iter().map(|(_, v)| v.as_slice()).collect();
    let (edges, counts) = histogram(&slices, bins)?;
    let centers = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let mut report = AblationReport::new("far_hist", "phi_far", centers);
    for ((name, values), c) in corpora.iter().zip(counts) {
        report.push_series(name.clone(), c.into_iter().map(|n| n as f64).collect());
        report.summary.insert(format!("mean.{name}"), mean(values)?);
        report.summary.insert(format!("count.{name}"), values.len() as f64);
    }
    report.summary.insert("edge.lo".into(), edges[0]);
    report.summary.insert("edge.hi".into(), edges[edges.len() - 1]);
    report.validate()?;
    Ok(report)
}

/// Target-domain data for finetuning experiments: unpaired LR training
/// images and a separate held-out set with ground truth.
#[derive(Clone, Debug)]
pub struct Domain {
    pub train: Vec<(String, ImageTensor)>,
    /// `(name, lr, hr)`.
    pub heldout: Vec<(String, ImageTensor, ImageTensor)>,
}

/// Metrics of `sr` on the held-out pairs.
pub fn heldout_report(sr: &SrModel, domain: &Domain, perceptual: &Perceptual, exec: Exec) -> Result<MetricReport> {
    if domain.heldout.is_empty() {
        return Err(Error::Empty("no held-out pairs".into()));
    }
    let rows = try_map_indexed(exec, domain.heldout.len(), |i| {
        let (name, lr, hr) = &domain.heldout[i];
        metric_row(name, &sr.upscale(lr)?, hr, perceptual)
    })?;
    Ok(MetricReport {
        backend: perceptual.name().to_string(),
        rows,
    })
}

/// One finetuning configuration of a comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub controller: ControllerConfig,
    pub lambda_far: f64,
}

/// `{controller off/on} × {regularizer off/on}` at the given base settings.
pub fn design_variants(base: ControllerConfig, lambda_far: f64) -> Vec<Variant> {
    let off = ControllerConfig {
        enabled: false,
        ..base
    };
    let on = ControllerConfig { enabled: true, ..base };
    vec![
        Variant {
            name: "baseline".into(),
            controller: off,
            lambda_far: 0.0,
        },
        Variant {
            name: "s".into(),
            controller: on,
            lambda_far: 0.0,
        },
        Variant {
            name: "far".into(),
            controller: off,
            lambda_far,
        },
        Variant {
            name: "s+far".into(),
            controller: on,
            lambda_far,
        },
    ]
}

/// One variant per finetuning rule, named by the rule's label.
pub fn controller_variants(base: ControllerConfig, lambda_far: f64, rules: &[FinetuneRule]) -> Vec<Variant> {
    rules
        .iter()
        .map(|&rule| Variant {
            name: rule.label().to_string(),
            controller: ControllerConfig {
                enabled: true,
                finetune_rule: rule,
                ..base
            },
            lambda_far,
        })
        .collect()
}

/// Finetunes a copy of `sr` under each variant with the same seed and
/// reports held-out metrics of the kept (best-validation) weights. The first
/// row, `before`, is the input model.
pub fn finetune_variants(
    experiment: &str,
    setup: &StageSetup,
    lrn: &Lrn,
    sr: &SrModel,
    domain: &Domain,
    variants: &[Variant],
    exec: Exec,
) -> Result<AblationReport> {
    if variants.is_empty() {
        return Err(Error::Invalid("no variants to compare".into()));
    }
    let before = heldout_report(sr, domain, setup.perceptual, exec)?.mean()?;
    let mut labels = vec!["before".to_string()];
    let mut rows = vec![(before, 0.0)];
    for v in variants {
        let vs = StageSetup {
            controller: v.controller,
            lambda_far: v.lambda_far,
            ..*setup
        };
        let m = sr.duplicate()?;
        let out = finetune(&vs, lrn, &m, &domain.train, None)?;
        m.store().load(&out.best)?;
        let row = heldout_report(&m, domain, setup.perceptual, exec)?.mean()?;
        labels.push(v.name.clone());
        rows.push((row, out.best_step as f64));
    }
    let mut report = AblationReport::categorical(experiment, labels.clone());
    report.push_series("psnr", rows.iter().map(|r| r.0.psnr).collect());
    report.push_series("ssim", rows.iter().map(|r| r.0.ssim).collect());
    report.push_series("lpips", rows.iter().map(|r| r.0.lpips).collect());
    report.push_series("best_step", rows.iter().map(|r| r.1).collect());
    for (label, (row, _)) in labels.iter().zip(&rows) {
        report.summary.insert(format!("lpips.{label}"), row.lpips);
    }
    report.validate()?;
    Ok(report)
}

/// Finetuning under the `n + HQI` and `n + 1 − HQI` rules.
pub fn controller_variant_compare(
    setup: &StageSetup,
    lrn: &Lrn,
    sr: &SrModel,
    domain: &Domain,
    rules: &[FinetuneRule],
    exec: Exec,
) -> Result<AblationReport> {
    let variants = controller_variants(setup.controller, setup.lambda_far, rules);
    finetune_variants("controller", setup, lrn, sr, domain, &variants, exec)
}

/// The four controller/regularizer configurations.
pub fn design_ablation(
    setup: &StageSetup,
    lrn: &Lrn,
    sr: &SrModel,
    domain: &Domain,
    lambda_far: f64,
    exec: Exec,
) -> Result<AblationReport> {
    let variants = design_variants(setup.controller, lambda_far);
    finetune_variants("design", setup, lrn, sr, domain, &variants, exec)
}

/// Held-out metrics of the early-stopped and the final EMA weights after one
/// finetuning run.
#[derive(Clone, Debug)]
pub struct StopProbe {
    pub best_step: usize,
    pub final_step: usize,
    pub best_val: Option<f64>,
    pub final_val: Option<f64>,
    pub best: MetricRow,
    pub last: MetricRow,
}

pub fn early_stop_probe(setup: &StageSetup, lrn: &Lrn, sr: &SrModel, domain: &Domain, exec: Exec) -> Result<StopProbe> {
    let m = sr.duplicate()?;
    let out = finetune(setup, lrn, &m, &domain.train, None)?;
    m.store().load(&out.best)?;
    let best = heldout_report(&m, domain, setup.perceptual, exec)?.mean()?;
    m.store().load(&out.last)?;
    let last = heldout_report(&m, domain, setup.perceptual, exec)?.mean()?;
    Ok(StopProbe {
        best_step: out.best_step,
        final_step: out.log.rows.last().map_or(0, |r| r.step),
        best_val: out.best_val,
        final_val: out.final_val,
        best,
        last,
    })
}
