//! `hrssr`: data synthesis, LRN pretraining, SR finetuning, inference,
//! evaluation and ablations.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hrssr::config::{Config, Profile};
use hrssr::controller::FinetuneRule;
use hrssr::degrade::{synth_dataset, Manifest, Preset};
use hrssr::evalbench::{
    controller_variant_compare, degrade_patches, design_ablation, evaluate_dir, far_shift_histogram,
    heldout_report, interpolation_sweep, load_named_dir, tile_patches, AblationReport, Domain,
};
use hrssr::imagedata::save_image;
use hrssr::metrics::Perceptual;
use hrssr::models::{Lrn, SrModel};
use hrssr::par::{deterministic_mode, Exec};
use hrssr::toy::write_toy_set;
use hrssr::train::{finetune, pretrain, train_sr, StageSetup};
use hrssr::{Error, Result};
use manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(name = "hrssr", version, about = "HR-aware self-supervised super-resolution")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Base settings the config file is layered on: paper or desk.
    #[arg(long, global = true, default_value = "paper")]
    profile: String,
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set pretrain.lr=1e-4`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Validate the configuration and inputs, print the effective config and exit.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write procedural HR images (a stand-in corpus).
    ToyData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        count: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
    },
    /// Degrade HR images into an (LR, HR) training set with a manifest.
    SynthData {
        #[arg(long)]
        hr_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        count: usize,
    },
    /// Pretrain the LR-reconstruction network.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the stand-in SR model with L1 on (LR, HR) pairs.
    TrainSr {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adapt an SR model to unpaired target-domain LR images.
    Finetune {
        #[arg(long)]
        lrn: PathBuf,
        #[arg(long)]
        sr: PathBuf,
        #[arg(long)]
        lr_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Super-resolve every image of a directory with the EMA weights.
    Sr {
        #[arg(long)]
        sr: PathBuf,
        #[arg(long)]
        lr_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR/SSIM/perceptual metrics of SR outputs against ground truth.
    Evaluate {
        #[arg(long)]
        sr_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ablation experiments.
    Ablate {
        #[command(subcommand)]
        which: Ablation,
    },
}

#[derive(Args, Debug)]
struct DomainArgs {
    #[arg(long)]
    lrn: PathBuf,
    #[arg(long)]
    sr: PathBuf,
    /// Unpaired target-domain LR images used for finetuning.
    #[arg(long)]
    lr_dir: PathBuf,
    #[arg(long)]
    heldout_lr: PathBuf,
    #[arg(long)]
    heldout_gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Ablation {
    /// Reconstruction quality along `i·f↑(x) + (1 − i)·y`.
    Interp {
        #[arg(long)]
        with_s: PathBuf,
        #[arg(long)]
        without_s: PathBuf,
        /// Manifest of (LR, HR) pairs to sweep over.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 8)]
        images: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regularizer values on clean and degraded patches.
    FarHist {
        #[arg(long)]
        lrn: PathBuf,
        #[arg(long)]
        clean_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finetuning under the two controller rules.
    Controller(DomainArgs),
    /// Finetuning with the controller and regularizer switched on and off.
    Design(DomainArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::ToyData { .. } => "toy-data",
            Command::SynthData { .. } => "synth-data",
            Command::Pretrain { .. } => "pretrain",
            Command::TrainSr { .. } => "train-sr",
            Command::Finetune { .. } => "finetune",
            Command::Sr { .. } => "sr",
            Command::Evaluate { .. } => "evaluate",
            Command::Ablate { which } => match which {
                Ablation::Interp { .. } => "ablate-interp",
                Ablation::FarHist { .. } => "ablate-far-hist",
                Ablation::Controller(_) => "ablate-controller",
                Ablation::Design(_) => "ablate-design",
            },
        }
    }

    fn out_dir(&self) -> &Path {
        match self {
            Command::ToyData { out, .. }
            | Command::SynthData { out, .. }
            | Command::Pretrain { out, .. }
            | Command::TrainSr { out, .. }
            | Command::Finetune { out, .. }
            | Command::Sr { out, .. }
            | Command::Evaluate { out, .. } => out,
            Command::Ablate { which } => match which {
                Ablation::Interp { out, .. } | Ablation::FarHist { out, .. } => out,
                Ablation::Controller(d) | Ablation::Design(d) => &d.out,
            },
        }
    }

    /// Input files and directories that must exist.
    fn inputs(&self) -> Vec<(&'static str, &Path)> {
        match self {
            Command::ToyData { .. } => vec![],
            Command::SynthData { hr_dir, .. } => vec![("hr_dir", hr_dir)],
            Command::Pretrain { manifest, .. } | Command::TrainSr { manifest, .. } => vec![("manifest", manifest)],
            Command::Finetune { lrn, sr, lr_dir, .. } => vec![("lrn", lrn), ("sr", sr), ("lr_dir", lr_dir)],
            Command::Sr { sr, lr_dir, .. } => vec![("sr", sr), ("lr_dir", lr_dir)],
            Command::Evaluate { sr_dir, gt_dir, .. } => vec![("sr_dir", sr_dir), ("gt_dir", gt_dir)],
            Command::Ablate { which } => match which {
                Ablation::Interp {
                    with_s,
                    without_s,
                    manifest,
                    ..
                } => vec![("with_s", with_s), ("without_s", without_s), ("manifest", manifest)],
                Ablation::FarHist { lrn, clean_dir, .. } => vec![("lrn", lrn), ("clean_dir", clean_dir)],
                Ablation::Controller(d) | Ablation::Design(d) => vec![
                    ("lrn", &d.lrn),
                    ("sr", &d.sr),
                    ("lr_dir", &d.lr_dir),
                    ("heldout_lr", &d.heldout_lr),
                    ("heldout_gt", &d.heldout_gt),
                ],
            },
        }
    }
}

struct Ctx {
    cfg: Config,
    exec: Exec,
    out: PathBuf,
    manifest: RunManifest,
}

impl Ctx {
    fn perceptual(&mut self) -> Result<Perceptual> {
        let p = Perceptual::new(&self.cfg.perceptual, self.cfg.dtype())?;
        self.manifest.backends.insert("perceptual".into(), p.name().into());
        Ok(p)
    }

    fn load_lrn(&mut self, key: &str, path: &Path) -> Result<Lrn> {
        self.manifest.hash_checkpoint(key, path)?;
        let lrn = Lrn::load(path, self.cfg.dtype(), true, Some(&self.cfg.lrn.reference))?;
        self.manifest
            .backends
            .insert("reference".into(), lrn.reference().mode_name().into());
        Ok(lrn)
    }

    fn load_sr(&mut self, key: &str, path: &Path) -> Result<SrModel> {
        self.manifest.hash_checkpoint(key, path)?;
        SrModel::load(path, self.cfg.dtype(), true)
    }

    fn artifact(&mut self, path: PathBuf) -> Result<()> {
        if path.extension().is_some_and(|e| e == "safetensors") {
            let key = format!("output:{}", path.file_name().unwrap_or_default().to_string_lossy());
            self.manifest.hash_checkpoint(&key, &path)?;
        }
        self.manifest.artifacts.push(path);
        Ok(())
    }

    fn report(&mut self, mut r: AblationReport) -> Result<()> {
        r.write_all(&self.out)?;
        for p in r.artifacts.clone() {
            self.artifact(p)?;
        }
        for (k, v) in &r.summary {
            println!("{k} = {v}");
        }
        Ok(())
    }
}

fn load_domain(d: &DomainArgs, exec: Exec) -> Result<Domain> {
    let train = load_named_dir(&d.lr_dir, exec)?;
    let lrs = load_named_dir(&d.heldout_lr, exec)?;
    let gt_dir = &d.heldout_gt;
    let heldout = lrs
        .into_iter()
        .map(|(name, lr)| {
            let gt = gt_dir.join(&name);
            if !gt.is_file() {
                return Err(Error::Invalid(format!("{name} has no counterpart in {}", gt_dir.display())));
            }
            Ok((name, lr, hrssr::imagedata::load_image(&gt)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Domain { train, heldout })
}

fn run(cmd: &Command, ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg.clone();
    let dtype = cfg.dtype();
    let exec = ctx.exec;
    let out = ctx.out.clone();
    match cmd {
        Command::ToyData { count, size, .. } => {
            for p in write_toy_set(&out, *count, *size, cfg.seed, exec)? {
                ctx.artifact(p)?;
            }
        }
        Command::SynthData { hr_dir, count, .. } => {
            let m = synth_dataset(hr_dir, &out, cfg.lrn.scale, *count, cfg.seed, &cfg.degrade, exec)?;
            println!("{} pairs", m.len());
            ctx.artifact(out.join(Manifest::FILE_NAME))?;
        }
        Command::Pretrain { manifest, .. } => {
            let pairs = Manifest::read(manifest)?.load_pairs(exec)?;
            let perceptual = ctx.perceptual()?;
            let lrn = Lrn::new(&cfg.lrn, dtype, cfg.seed)?;
            ctx.manifest
                .backends
                .insert("reference".into(), lrn.reference().mode_name().into());
            let setup = StageSetup {
                cfg: &cfg.pretrain,
                controller: cfg.controller,
                lambda_far: cfg.far.weight_pretrain,
                weights: cfg.loss,
                perceptual: &perceptual,
            };
            let outcome = pretrain(&setup, &lrn, &pairs, Some(&out))?;
            ctx.artifact(out.join("log.csv"))?;
            for p in outcome.checkpoints {
                ctx.artifact(p)?;
            }
        }
        Command::TrainSr { manifest, .. } => {
            let pairs = Manifest::read(manifest)?.load_pairs(exec)?;
            let sr = SrModel::new(&cfg.sr, dtype, cfg.seed)?;
            train_sr(&cfg.sr_train, &sr, &pairs, Some(&out))?;
            ctx.artifact(out.join("log.csv"))?;
            ctx.artifact(out.join("sr.safetensors"))?;
        }
        Command::Finetune { lrn, sr, lr_dir, .. } => {
            let perceptual = ctx.perceptual()?;
            let lrn = ctx.load_lrn("lrn", lrn)?;
            let sr = ctx.load_sr("sr", sr)?;
            let images = load_named_dir(lr_dir, exec)?;
            let setup = StageSetup {
                cfg: &cfg.finetune,
                controller: cfg.controller,
                lambda_far: cfg.far.weight_finetune,
                weights: cfg.loss,
                perceptual: &perceptual,
            };
            let outcome = finetune(&setup, &lrn, &sr, &images, Some(&out))?;
            println!(
                "best step {} (validation {:?}), final validation {:?}",
                outcome.best_step, outcome.best_val, outcome.final_val
            );
            if outcome.lrn_hash_before != outcome.lrn_hash_after {
                return Err(Error::Invalid("LRN parameters changed during finetuning".into()));
            }
            for name in ["log.csv", "sr_best.safetensors", "sr_last.safetensors"] {
                ctx.artifact(out.join(name))?;
            }
        }
        Command::Sr { sr, lr_dir, .. } => {
            let sr = ctx.load_sr("sr", sr)?;
            let images = load_named_dir(lr_dir, exec)?;
            if images.is_empty() {
                return Err(Error::Empty(format!("no images in {}", lr_dir.display())));
            }
            for (name, img) in &images {
                let p = out.join(name);
                save_image(&sr.upscale(img)?, &p)?;
                ctx.artifact(p)?;
            }
        }
        Command::Evaluate { sr_dir, gt_dir, .. } => {
            let perceptual = ctx.perceptual()?;
            let report = evaluate_dir(sr_dir, gt_dir, &perceptual, exec)?;
            let p = out.join("metrics.csv");
            report.write_csv(&p)?;
            let m = report.mean()?;
            println!(
                "mean psnr {:.4} ssim {:.4} {} {:.4}",
                m.psnr, m.ssim, report.backend, m.lpips
            );
            ctx.artifact(p)?;
        }
        Command::Ablate { which } => match which {
            Ablation::Interp {
                with_s,
                without_s,
                manifest,
                images,
                ..
            } => {
                let perceptual = ctx.perceptual()?;
                let a = ctx.load_lrn("with_s", with_s)?;
                let b = ctx.load_lrn("without_s", without_s)?;
                let mut pairs = Manifest::read(manifest)?.load_pairs(exec)?;
                pairs.truncate(*images);
                let r = interpolation_sweep(&pairs, &a, &b, &perceptual, &cfg.interp, exec)?;
                ctx.report(r)?;
            }
            Ablation::FarHist { lrn, clean_dir, .. } => {
                let lrn = ctx.load_lrn("lrn", lrn)?;
                let h = &cfg.far_hist;
                let images: Vec<_> = load_named_dir(clean_dir, exec)?.into_iter().map(|(_, i)| i).collect();
                let clean = tile_patches(&images, h.patch_size, h.patches)?;
                let degraded = h
                    .presets
                    .iter()
                    .map(|name| {
                        let preset: Preset = name.parse()?;
                        Ok((name.clone(), degrade_patches(&clean, preset, cfg.seed, exec)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let r = far_shift_histogram(&lrn, &clean, &degraded, h.bins)?;
                ctx.report(r)?;
            }
            Ablation::Controller(d) | Ablation::Design(d) => {
                let perceptual = ctx.perceptual()?;
                let lrn = ctx.load_lrn("lrn", &d.lrn)?;
                let sr = ctx.load_sr("sr", &d.sr)?;
                let domain = load_domain(d, exec)?;
                let setup = StageSetup {
                    cfg: &cfg.finetune,
                    controller: cfg.controller,
                    lambda_far: cfg.far.weight_finetune,
                    weights: cfg.loss,
                    perceptual: &perceptual,
                };
                let r = if matches!(which, Ablation::Controller(_)) {
                    controller_variant_compare(
                        &setup,
                        &lrn,
                        &sr,
                        &domain,
                        &[FinetuneRule::Hqi, FinetuneRule::Inverted],
                        exec,
                    )?
                } else {
                    let lambda = if cfg.far.weight_finetune > 0.0 { cfg.far.weight_finetune } else { 0.1 };
                    design_ablation(&setup, &lrn, &sr, &domain, lambda, exec)?
                };
                let before = heldout_report(&sr, &domain, &perceptual, exec)?;
                let p = out.join("heldout_before.csv");
                before.write_csv(&p)?;
                ctx.artifact(p)?;
                ctx.report(r)?;
            }
        },
    }
    Ok(())
}

fn resolve_config(common: &Common) -> Result<Config> {
    let profile: Profile = common.profile.parse()?;
    let base = Config::for_profile(profile);
    let mut cfg = match &common.config {
        Some(p) => Config::load(p, &base, &common.overrides)?,
        None => Config::layered(&base, None, &common.overrides)?,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if deterministic_mode() {
        cfg.deterministic = true;
    }
    Ok(cfg)
}

fn check_inputs(cmd: &Command) -> Result<()> {
    for (name, p) in cmd.inputs() {
        if !p.exists() {
            return Err(Error::Invalid(format!("--{} {} does not exist", name.replace('_', "-"), p.display())));
        }
    }
    Ok(())
}

fn execute(cli: Cli, argv: Vec<String>) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    let toml = cfg.to_toml()?;
    let cmd = &cli.command;
    if cli.common.dry_run {
        check_inputs(cmd)?;
        println!("# {} (dry run)\n{toml}", cmd.name());
        return Ok(());
    }
    let exec = if cfg.deterministic { Exec::Sequential } else { Exec::Parallel };
    let out = cmd.out_dir().to_path_buf();
    std::fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    let mut manifest = RunManifest::new(cmd.name(), argv, toml.clone(), cfg.deterministic);
    manifest.seeds.insert("seed".into(), cfg.seed);
    for (k, p) in cmd.inputs() {
        manifest.inputs.insert(k.into(), p.to_path_buf());
    }
    let cfg_path = out.join("config.toml");
    manifest::write_atomic(&cfg_path, toml.as_bytes())?;
    manifest.artifacts.push(cfg_path);
    manifest.write(&out)?;
    let mut ctx = Ctx {
        cfg,
        exec,
        out: out.clone(),
        manifest,
    };
    let result = check_inputs(cmd).and_then(|_| run(cmd, &mut ctx));
    let outcome = result.as_ref().map(|_| ()).map_err(|e| e.to_string());
    ctx.manifest.finish(&out, outcome)?;
    result
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
