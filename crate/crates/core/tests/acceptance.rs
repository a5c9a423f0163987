//! Acceptance suite. Prints one `criterion N: PASS|FAIL` line per criterion
//! and exits non-zero if any fails. Positional arguments select criteria,
//! e.g. `cargo test -p hrssr --test acceptance -- 1 2 3`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hrssr::controller::{
    controller_batch, make_controller, monte_carlo_mean, ControllerConfig, FinetuneRule, Stage,
};
use hrssr::degrade::{apply_recipe, derive_seed, sample_recipe, Preset};
use hrssr::evalbench::{
    degrade_patches, design_ablation, early_stop_probe, far_shift_histogram, heldout_report, interpolation_sweep,
    tile_patches, Domain, SweepConfig,
};
use hrssr::far::{descriptor, gram};
use hrssr::imagedata::{bicubic_resize, ImageTensor};
use hrssr::losses::{rec_loss_with_map, weight_maps, LossWeights};
use hrssr::metrics::{psnr, Perceptual};
use hrssr::models::{Lrn, LrnConfig, SrConfig, SrModel};
use hrssr::nn::gradcheck::{check, GradCheck};
use hrssr::nn::BicubicUpsample;
use hrssr::par::Exec;
use hrssr::toy::{toy_blur_pairs, toy_set};
use hrssr::train::{finetune, pretrain, train_sr, StageSetup, TrainConfig};

type Pair = (ImageTensor, ImageTensor);
type Res<T> = Result<T, Box<dyn std::error::Error>>;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Res<Verdict> {
    Ok(Verdict {
        pass,
        detail: detail.into(),
    })
}

fn out_dir() -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&d).expect("acceptance output dir");
    d
}

// ---------------------------------------------------------------------------
// Shared toy domain: 32→128, pretraining on second-order degradations,
// evaluation and finetuning on synthetic blur.

const SCALE: usize = 4;
const HR: usize = 128;
const BLUR: (f32, f32) = (0.5, 3.0);

fn mixed_pairs(n: usize, seed: u64, exec: Exec) -> Res<Vec<Pair>> {
    let hrs = toy_set(n, HR, seed, exec)?;
    let mut out = Vec::with_capacity(n);
    for (i, hr) in hrs.into_iter().enumerate() {
        let r = sample_recipe(derive_seed(seed, 1000 + i as u64), SCALE)?;
        out.push((apply_recipe(&hr, &r)?, hr));
    }
    Ok(out)
}

fn pretrain_cfg() -> TrainConfig {
    TrainConfig {
        total_iters: 600,
        batch_size: 8,
        patch_size: 32,
        ..TrainConfig::desk_pretrain()
    }
}

struct Toy {
    exec: Exec,
    perceptual: Perceptual,
    pretrain_pairs: Vec<Pair>,
    lrn_with_s: Option<Lrn>,
    lrn_without_s: Option<Lrn>,
    lrn_far: Option<Lrn>,
    sr: Option<SrModel>,
    domain: Option<Domain>,
}

impl Toy {
    fn new() -> Res<Self> {
        let exec = Exec::from_env();
        Ok(Self {
            exec,
            perceptual: Perceptual::fallback(DType::F32)?,
            pretrain_pairs: mixed_pairs(64, 7, exec)?,
            lrn_with_s: None,
            lrn_without_s: None,
            lrn_far: None,
            sr: None,
            domain: None,
        })
    }

    fn pretrained(&self, controller: bool, lambda_far: f64) -> Res<Lrn> {
        let cfg = pretrain_cfg();
        let setup = StageSetup {
            cfg: &cfg,
            controller: ControllerConfig {
                enabled: controller,
                ..Default::default()
            },
            lambda_far,
            weights: LossWeights::default(),
            perceptual: &self.perceptual,
        };
        let lrn = Lrn::new(&LrnConfig::desk(), DType::F32, 1)?;
        let out = pretrain(&setup, &lrn, &self.pretrain_pairs, None)?;
        lrn.load_snapshot(out.ema.values())?;
        Ok(lrn)
    }

    fn lrns_for_sweep(&mut self) -> Res<(&Lrn, &Lrn)> {
        if self.lrn_with_s.is_none() {
            self.lrn_with_s = Some(self.pretrained(true, 0.0)?);
        }
        if self.lrn_without_s.is_none() {
            self.lrn_without_s = Some(self.pretrained(false, 0.0)?);
        }
        Ok((self.lrn_with_s.as_ref().unwrap(), self.lrn_without_s.as_ref().unwrap()))
    }

    /// LRN pretrained with the controller and the regularizer.
    fn lrn_far(&mut self) -> Res<&Lrn> {
        if self.lrn_far.is_none() {
            self.lrn_far = Some(self.pretrained(true, 0.1)?);
        }
        Ok(self.lrn_far.as_ref().unwrap())
    }

    /// Stand-in SR model trained on clean bicubic pairs, so the blurred
    /// target domain is a genuine shift.
    fn sr(&mut self) -> Res<&SrModel> {
        if self.sr.is_none() {
            let pairs = toy_set(48, HR, 11, self.exec)?
                .into_iter()
                .map(|hr| Ok((bicubic_resize(&hr, HR / SCALE, HR / SCALE)?, hr)))
                .collect::<Res<Vec<_>>>()?;
            let sr = SrModel::new(&SrConfig::desk(), DType::F32, 3)?;
            let out = train_sr(&TrainConfig::desk_sr(), &sr, &pairs, None)?;
            sr.store().load(out.ema.values())?;
            self.sr = Some(sr);
        }
        Ok(self.sr.as_ref().unwrap())
    }

    fn domain(&mut self) -> Res<&Domain> {
        if self.domain.is_none() {
            let train = toy_blur_pairs(24, HR, SCALE, BLUR, 21, self.exec)?
                .into_iter()
                .enumerate()
                .map(|(i, (lr, _))| (format!("lr_{i:03}.png"), lr))
                .collect();
            let heldout = toy_blur_pairs(8, HR, SCALE, BLUR, 31, self.exec)?
                .into_iter()
                .enumerate()
                .map(|(i, (lr, hr))| (format!("held_{i:03}.png"), lr, hr))
                .collect();
            self.domain = Some(Domain { train, heldout });
        }
        Ok(self.domain.as_ref().unwrap())
    }
}

fn finetune_setup<'a>(cfg: &'a TrainConfig, perceptual: &'a Perceptual, lambda_far: f64) -> StageSetup<'a> {
    StageSetup {
        cfg,
        controller: ControllerConfig::default(),
        lambda_far,
        weights: LossWeights::default(),
        perceptual,
    }
}

// ---------------------------------------------------------------------------
// 1. Gradients against central differences.

fn rand_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Res<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Ok(Tensor::from_vec(v, shape, &Device::Cpu)?)
}

fn weighted_sum(t: &Tensor, seed: u64) -> hrssr::Result<Tensor> {
    let w = rand_tensor(t.dims(), -1.0, 1.0, seed).map_err(|e| hrssr::Error::Invalid(e.to_string()))?;
    Ok((t * w)?.sum_all()?)
}

fn vars_of(store: &hrssr::nn::ParamStore) -> Vec<Var> {
    store.params().iter().map(|p| p.var().clone()).collect()
}

fn criterion_1() -> Res<Verdict> {
    let dt = DType::F64;
    let (h, coords) = (1e-6, 12);
    let lrn = Lrn::new(&LrnConfig::desk(), dt, 5)?;
    let perceptual = Perceptual::fallback(dt)?;
    let x = rand_tensor(&[2, 3, 8, 8], 0.05, 0.95, 1)?;
    let y = rand_tensor(&[2, 3, 32, 32], 0.05, 0.95, 2)?;
    let mut cases: Vec<(&str, GradCheck)> = Vec::new();

    let v = vars_of(lrn.e_deg().store());
    cases.push(("E_deg", check(&v, || weighted_sum(&lrn.e_deg().forward(&x)?, 10), coords, h, 1)?));

    let v = vars_of(lrn.e_img().store());
    cases.push(("E_img", check(&v, || weighted_sum(&lrn.e_img().forward(&y)?, 11), coords, h, 2)?));

    let emb = Var::from_tensor(&lrn.e_deg().forward(&x)?.detach())?;
    let feats = Var::from_tensor(&lrn.e_img().forward(&y)?.detach())?;
    let mut v = vars_of(lrn.recon().store());
    v.extend([emb.clone(), feats.clone()]);
    cases.push((
        "R",
        check(&v, || weighted_sum(&lrn.recon().forward(emb.as_tensor(), feats.as_tensor())?, 12), coords, h, 3)?,
    ));

    let e_cl = lrn.reference().forward(&y)?.detach();
    let mut v = vars_of(lrn.maps().store());
    v.push(feats.clone());
    cases.push(("far_loss", check(&v, || lrn.maps().far_loss(feats.as_tensor(), &e_cl), coords, h, 4)?));

    let a = Var::from_tensor(&rand_tensor(&[2, 3, 16, 16], 0.05, 0.95, 5)?)?;
    let b = rand_tensor(&[2, 3, 16, 16], 0.05, 0.95, 6)?;
    cases.push((
        "perceptual",
        check(&[a.clone()], || Ok(perceptual.distance(a.as_tensor(), &b)?.sum_all()?), coords, h, 5)?,
    ));

    let weights = LossWeights::default();
    let xh = Var::from_tensor(&rand_tensor(&[2, 3, 8, 8], 0.05, 0.95, 7)?)?;
    let wm = weight_maps(xh.as_tensor())?;
    cases.push((
        "rec_loss",
        check(&[xh.clone()], || Ok(rec_loss_with_map(xh.as_tensor(), &x, &weights, &perceptual, None)?.mean_all()?), coords, h, 6)?,
    ));
    cases.push((
        "rec_loss (weighted)",
        check(
            &[xh.clone()],
            || Ok(rec_loss_with_map(xh.as_tensor(), &x, &weights, &perceptual, Some(&wm))?.mean_all()?),
            coords,
            h,
            7,
        )?,
    ));

    // Full finetuning objective through M with the LRN frozen. The controller
    // vector and the weight map are stop-gradient quantities, so they are
    // evaluated once at the base point and held fixed.
    lrn.set_trainable(false);
    let ctl = ControllerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let full = |y: &Tensor, s: &Tensor, wm: &Tensor| -> hrssr::Result<Tensor> {
        let (x_hat, e_im) = lrn.reconstruct(&x, y, Some(s))?;
        let rec = rec_loss_with_map(&x_hat, &x, &weights, &perceptual, Some(wm))?.mean_all()?;
        let far = lrn.far_from_features(&e_im, y)?.mean_all()?;
        Ok((rec + (far * 0.1)?)?)
    };
    let base_state = |y: &Tensor, rng: &mut ChaCha8Rng| -> Res<(Tensor, Tensor)> {
        let hqi = hrssr::controller::hqi_batch(&x, y, &perceptual)?;
        let s = controller_batch(&ctl, Stage::Finetune, &hqi, lrn.embed_dim(), rng, dt)?.unwrap();
        let (x_hat, _) = lrn.reconstruct(&x, y, Some(&s))?;
        Ok((s, weight_maps(&x_hat)?))
    };

    let sr = SrModel::new(&SrConfig::desk(), dt, 8)?;
    let (s, wm) = base_state(&sr.forward(&x)?, &mut rng)?;
    let v = vars_of(sr.store());
    cases.push(("finetune graph (M)", check(&v, || full(&sr.forward(&x)?, &s, &wm), coords, h, 8)?));

    // Two-parameter probe M(x) = α·f↑(x) + β: every coordinate, several times.
    let alpha = Var::from_tensor(&Tensor::new(0.9f64, &Device::Cpu)?)?;
    let beta = Var::from_tensor(&Tensor::new(0.03f64, &Device::Cpu)?)?;
    let up = BicubicUpsample::new(8, 8, 32, 32, dt)?;
    let probe = || -> hrssr::Result<Tensor> {
        Ok(up.forward(&x)?.broadcast_mul(alpha.as_tensor())?.broadcast_add(beta.as_tensor())?)
    };
    let (s, wm) = base_state(&probe()?, &mut rng)?;
    cases.push((
        "finetune graph (2-param probe)",
        check(&[alpha.clone(), beta.clone()], || full(&probe()?, &s, &wm), coords, h, 9)?,
    ));
    lrn.set_trainable(true);

    let mut detail = Vec::new();
    let mut pass = true;
    for (name, r) in &cases {
        let e = r.max_rel_err();
        pass &= r.probes.len() >= 10 && e <= 1e-3;
        detail.push(format!("{name} {e:.1e}"));
    }
    verdict(pass, format!("max rel err: {}", detail.join(", ")))
}

// ---------------------------------------------------------------------------
// 2. Gram and descriptor against double loops.

fn criterion_2() -> Res<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (c, h, w) = (rng.random_range(1..7), rng.random_range(1..6), rng.random_range(1..6));
        let v: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t = Tensor::from_vec(v.clone(), (1, c, h, w), &Device::Cpu)?;
        let g = gram(&t)?.squeeze(0)?.to_vec2::<f64>()?;
        let (avg, max) = descriptor(&t)?;
        let (avg, max) = (avg.squeeze(0)?.to_vec1::<f64>()?, max.squeeze(0)?.to_vec1::<f64>()?);
        let hw = h * w;
        for i in 0..c {
            let mut row = vec![0.0; c];
            for (j, r) in row.iter_mut().enumerate() {
                for p in 0..hw {
                    *r += v[i * hw + p] * v[j * hw + p];
                }
                *r /= hw as f64;
                worst = worst.max((g[i][j] - *r).abs());
            }
            let mean = row.iter().sum::<f64>() / c as f64;
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max((avg[i] - mean).abs()).max((max[i] - mx).abs());
        }
    }
    verdict(worst <= 1e-6, format!("50 features, max abs diff {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// 3. Controller contract.

fn criterion_3() -> Res<Verdict> {
    let dim = 16;
    let mut exact = true;
    let mut worst = 0.0f64;
    for &h in &[0.0, 0.2, 0.55, 1.0] {
        let pre = make_controller::<ChaCha8Rng>(Stage::Pretrain, FinetuneRule::Hqi, h, dim, None)?;
        let ft = make_controller::<ChaCha8Rng>(Stage::Finetune, FinetuneRule::Hqi, h, dim, None)?;
        exact &= pre.values.iter().all(|&v| v == 1.0 - h) && ft.values.iter().all(|&v| v == h);
        for (stage, target) in [(Stage::Pretrain, 1.0 - h), (Stage::Finetune, h)] {
            let m = monte_carlo_mean(stage, FinetuneRule::Hqi, h, dim, 100_000, 3, Exec::from_env())?;
            worst = m.iter().fold(worst, |w, v| w.max((v - target).abs()));
        }
    }
    verdict(
        exact && worst <= 0.01,
        format!("noise-free exact: {exact}; MC 1e5 max |mean − target| {worst:.4}"),
    )
}

// ---------------------------------------------------------------------------
// 4. Interpolation sweep direction.

fn criterion_4(toy: &mut Toy) -> Res<Verdict> {
    let test = toy_blur_pairs(8, HR, SCALE, BLUR, 99, toy.exec)?;
    let exec = toy.exec;
    let perceptual = Perceptual::fallback(DType::F32)?;
    let (with_s, without_s) = toy.lrns_for_sweep()?;
    let mut r = interpolation_sweep(&test, with_s, without_s, &perceptual, &SweepConfig::default(), exec)?;
    r.write_all(out_dir())?;
    let a = r.summary["spearman_psnr_without_s"];
    let b = r.summary["spearman_psnr_with_s"];
    verdict(
        a > 0.0 && b < a,
        format!("Spearman(i, PSNR): without s {a:+.2}, with s {b:+.2}"),
    )
}

// ---------------------------------------------------------------------------
// 5. Regularizer shift under degradation.

fn criterion_5(toy: &mut Toy) -> Res<Verdict> {
    let exec = toy.exec;
    let images = toy_set(25, HR, 55, exec)?;
    let clean = tile_patches(&images, pretrain_cfg().patch_size, 100)?;
    let degraded = [Preset::Blur2, Preset::Noise15]
        .iter()
        .map(|&p| Ok((p.name().to_string(), degrade_patches(&clean, p, 5, exec)?)))
        .collect::<Res<Vec<_>>>()?;
    let lrn = toy.lrn_far()?;
    let mut r = far_shift_histogram(lrn, &clean, &degraded, 20)?;
    r.write_all(out_dir())?;
    let c = r.summary["mean.clean"];
    let b = r.summary["mean.blur2"];
    let n = r.summary["mean.noise15"];
    verdict(
        clean.len() == 100 && b > c && n > c,
        format!("mean Φ_far over 100 patches: clean {c:.4}, blur2 {b:.4}, noise15 {n:.4}"),
    )
}

// ---------------------------------------------------------------------------
// 6. Finetuning improves the target domain; 4-config table.

fn criterion_6(toy: &mut Toy) -> Res<Verdict> {
    let exec = toy.exec;
    let perceptual = Perceptual::fallback(DType::F32)?;
    toy.lrn_far()?;
    toy.sr()?;
    toy.domain()?;
    let (lrn, sr, domain) = (
        toy.lrn_far.as_ref().unwrap(),
        toy.sr.as_ref().unwrap(),
        toy.domain.as_ref().unwrap(),
    );
    let cfg = TrainConfig::desk_finetune();
    let setup = finetune_setup(&cfg, &perceptual, 0.1);
    let before = heldout_report(sr, domain, &perceptual, exec)?.mean()?.lpips;
    let mut r = design_ablation(&setup, lrn, sr, domain, 0.1, exec)?;
    r.write_all(out_dir())?;
    let lp = r.series("lpips").ok_or("missing lpips series")?.to_vec();
    let all_finite = r.row_labels.len() == 5
        && r.series.iter().all(|s| s.values.len() == 5 && s.values.iter().all(|v| v.is_finite()));
    let full = r.summary["lpips.s+far"];
    let rows: Vec<String> = r.row_labels.iter().zip(&lp).map(|(l, v)| format!("{l} {v:.4}")).collect();
    verdict(
        all_finite && full <= before,
        format!("held-out LPIPS {}", rows.join(", ")),
    )
}

// ---------------------------------------------------------------------------
// 7. Frozen LRN and bit-identical seeded runs.

fn criterion_7(toy: &mut Toy) -> Res<Verdict> {
    let perceptual = Perceptual::fallback(DType::F32)?;
    let exec = Exec::Sequential;
    let pairs = toy.pretrain_pairs[..16].to_vec();
    let images: Vec<(String, ImageTensor)> = toy_blur_pairs(12, 64, SCALE, BLUR, 71, exec)?
        .into_iter()
        .enumerate()
        .map(|(i, (lr, _))| (format!("{i:02}.png"), lr))
        .collect();
    let pre_cfg = TrainConfig {
        total_iters: 8,
        batch_size: 4,
        ..pretrain_cfg()
    };
    let ft_cfg = TrainConfig {
        total_iters: 8,
        eval_every: 4,
        ..TrainConfig::desk_finetune()
    };
    let run = || -> Res<(String, BTreeMap<String, String>, String, bool, Vec<String>)> {
        let setup = StageSetup {
            cfg: &pre_cfg,
            controller: ControllerConfig::default(),
            lambda_far: 0.1,
            weights: LossWeights::default(),
            perceptual: &perceptual,
        };
        let lrn = Lrn::new(&LrnConfig::desk(), DType::F32, 1)?;
        let pre = pretrain(&setup, &lrn, &pairs, None)?;
        let sr = SrModel::new(&SrConfig::desk(), DType::F32, 2)?;
        let ft = finetune(&finetune_setup(&ft_cfg, &perceptual, 0.1), &lrn, &sr, &images, None)?;
        let frozen = ft.lrn_hash_before == ft.lrn_hash_after && ft.lrn_hash_after == lrn.hash();
        let logs = vec![format!("{:?}", pre.log.rows), format!("{:?}", ft.log.rows)];
        Ok((lrn.hash(), sr.store().hashes(), format!("{:?}", ft.best_step), frozen, logs))
    };
    let a = run()?;
    let b = run()?;
    let identical = a.0 == b.0 && a.1 == b.1 && a.2 == b.2 && a.4 == b.4;
    let frozen = a.3 && b.3;
    verdict(
        frozen && identical,
        format!("LRN hash unchanged by finetuning: {frozen}; seeded runs bit-identical: {identical}"),
    )
}

// ---------------------------------------------------------------------------
// 8. Metric sanity.

fn criterion_8(toy: &Toy) -> Res<Verdict> {
    let a = ImageTensor::filled(1, 32, 32, 0.5)?;
    let b = ImageTensor::filled(1, 32, 32, 0.5 + 1.0 / 255.0)?;
    let p1 = psnr(&a, &b)?;
    let zero = psnr(&ImageTensor::filled(1, 32, 32, 0.0)?, &ImageTensor::filled(1, 32, 32, 1.0)?)?;
    let img = toy_set(1, 64, 8, Exec::Sequential)?.remove(0);
    let self_dist = toy.perceptual.distance_images(&img, &img)?;
    verdict(
        (p1 - 48.131).abs() <= 1e-3 && zero.abs() <= 1e-3 && self_dist <= 1e-6,
        format!("PSNR {p1:.4} dB and {zero:.4} dB; LPIPS(a, a) {self_dist:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// 9. Overfitting probe for early stopping.

fn criterion_9(toy: &mut Toy) -> Res<Verdict> {
    let exec = toy.exec;
    let perceptual = Perceptual::fallback(DType::F32)?;
    toy.lrn_far()?;
    toy.sr()?;
    toy.domain()?;
    let (lrn, sr, domain) = (
        toy.lrn_far.as_ref().unwrap(),
        toy.sr.as_ref().unwrap(),
        toy.domain.as_ref().unwrap(),
    );
    let base = TrainConfig::desk_finetune();
    let mut degraded = 0;
    let mut kept_ok = true;
    let mut runs = Vec::new();
    for seed in 0..3u64 {
        let cfg = TrainConfig {
            total_iters: 3 * base.total_iters,
            seed,
            early_stop_patience: 0,
            ..base.clone()
        };
        let p = early_stop_probe(&finetune_setup(&cfg, &perceptual, 0.0), lrn, sr, domain, exec)?;
        if p.last.lpips > p.best.lpips {
            degraded += 1;
        }
        kept_ok &= matches!((p.best_val, p.final_val), (Some(b), Some(f)) if b <= f);
        runs.push(format!(
            "seed {seed}: kept step {} LPIPS {:.4} vs final step {} LPIPS {:.4}",
            p.best_step, p.best.lpips, p.final_step, p.last.lpips
        ));
    }
    verdict(
        degraded >= 1 && kept_ok,
        format!("{degraded}/3 degraded past the kept checkpoint; {}", runs.join("; ")),
    )
}

// ---------------------------------------------------------------------------

const BUDGETS: [(usize, &str, f64); 9] = [
    (1, "gradient suite", 120.0),
    (2, "gram/descriptor oracle", 10.0),
    (3, "controller contract", 30.0),
    (4, "interpolation sweep direction", 1800.0),
    (5, "regularizer shift", 600.0),
    (6, "finetuning improves target domain", 1200.0),
    (7, "freeze and determinism", 300.0),
    (8, "metric sanity", 60.0),
    (9, "overfitting probe", 1800.0),
];

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut toy: Option<Toy> = None;
    let mut failures = 0;
    for (n, name, budget) in BUDGETS {
        if !wanted(n) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| -> Res<Verdict> {
            if n >= 4 && toy.is_none() {
                toy = Some(Toy::new()?);
            }
            match n {
                1 => criterion_1(),
                2 => criterion_2(),
                3 => criterion_3(),
                4 => criterion_4(toy.as_mut().unwrap()),
                5 => criterion_5(toy.as_mut().unwrap()),
                6 => criterion_6(toy.as_mut().unwrap()),
                7 => criterion_7(toy.as_mut().unwrap()),
                8 => criterion_8(toy.as_ref().unwrap()),
                _ => criterion_9(toy.as_mut().unwrap()),
            }
        }));
        let secs = t.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(Ok(v)) => (v.pass && secs <= budget, v.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "criterion {n} ({name}): {} | {detail} | {secs:.1}s of {budget:.0}s",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!("acceptance reports in {}", out_dir().display());
    if failures > 0 {
        println!("{failures} criterion/criteria failed");
        std::process::exit(1);
    }
}
