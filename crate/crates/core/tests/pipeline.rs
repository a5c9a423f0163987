use candle_core::{DType, Tensor};

use hrssr::controller::ControllerConfig;
use hrssr::degrade::{synth_dataset, DegradationRanges, Manifest};
use hrssr::losses::LossWeights;
use hrssr::metrics::Perceptual;
use hrssr::models::{Lrn, LrnConfig, SrConfig, SrModel};
use hrssr::par::Exec;
use hrssr::toy::{toy_blur_pairs, write_toy_set};
use hrssr::train::{finetune, pretrain, train_sr, StageSetup, TrainConfig, TrainLog};

fn tiny(iters: usize) -> TrainConfig {
    TrainConfig {
        total_iters: iters,
        batch_size: 2,
        eval_every: 2,
        ..TrainConfig::desk_pretrain()
    }
}

fn max_diff(a: &Tensor, b: &Tensor) -> f32 {
    (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap()
}

#[test]
fn synthesized_data_trains_and_checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_set(dir.path().join("hr"), 3, 64, 1, Exec::Parallel).unwrap();
    let m = synth_dataset(
        dir.path().join("hr"),
        dir.path().join("data"),
        4,
        5,
        2,
        &DegradationRanges::default(),
        Exec::Parallel,
    )
    .unwrap();
    let pairs = Manifest::read(dir.path().join("data").join(Manifest::FILE_NAME))
        .unwrap()
        .load_pairs(Exec::Parallel)
        .unwrap();
    assert_eq!(pairs.len(), m.len());

    let p = Perceptual::fallback(DType::F32).unwrap();
    let cfg = tiny(4);
    let setup = StageSetup {
        cfg: &cfg,
        controller: ControllerConfig::default(),
        lambda_far: 0.1,
        weights: LossWeights::default(),
        perceptual: &p,
    };
    let lrn = Lrn::new(&LrnConfig::desk(), DType::F32, 3).unwrap();
    let out_dir = dir.path().join("pre");
    let out = pretrain(&setup, &lrn, &pairs, Some(&out_dir)).unwrap();
    let log = TrainLog::read_csv(out_dir.join("log.csv")).unwrap();
    assert_eq!(log.rows.len(), 4);
    assert!(log.rows.iter().all(|r| r.loss_rec.is_finite() && r.loss_far.is_finite()));
    assert_eq!(out.log.rows.len(), 4);

    // Raw weights saved and reloaded give a bit-identical forward pass.
    let path = dir.path().join("raw.safetensors");
    lrn.save(&path, 4, None).unwrap();
    let back = Lrn::load(&path, DType::F32, false, None).unwrap();
    assert_eq!(back.hash(), lrn.hash());
    let (x, y) = (&pairs[0].0, &pairs[0].1);
    let (xt, yt) = (x.to_tensor(DType::F32).unwrap(), y.to_tensor(DType::F32).unwrap());
    let a = lrn.reconstruct(&xt, &yt, None).unwrap().0;
    let b = back.reconstruct(&xt, &yt, None).unwrap().0;
    assert_eq!(max_diff(&a, &b), 0.0);
    assert!(a.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().all(|v| v.is_finite()));

    let sr = SrModel::new(&SrConfig::desk(), DType::F32, 4).unwrap();
    train_sr(&tiny(3), &sr, &pairs, Some(&dir.path().join("sr"))).unwrap();
    let reloaded = SrModel::load(dir.path().join("sr").join("sr.safetensors"), DType::F32, true).unwrap();
    assert_eq!(reloaded.upscale(x).unwrap().shape(), y.shape());
}

#[test]
fn finetuning_leaves_frozen_parameters_bit_identical() {
    let p = Perceptual::fallback(DType::F32).unwrap();
    let lrn = Lrn::new(&LrnConfig::desk(), DType::F32, 5).unwrap();
    let sr = SrModel::new(&SrConfig::desk(), DType::F32, 6).unwrap();
    let images: Vec<_> = toy_blur_pairs(6, 64, 4, (1.0, 2.0), 3, Exec::Parallel)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, (lr, _))| (format!("{i}.png"), lr))
        .collect();
    let cfg = TrainConfig {
        freeze_fraction: 0.5,
        ..tiny(4)
    };
    let setup = StageSetup {
        cfg: &cfg,
        controller: ControllerConfig::default(),
        lambda_far: 0.1,
        weights: LossWeights::default(),
        perceptual: &p,
    };
    let before = sr.store().hashes();
    let out = finetune(&setup, &lrn, &sr, &images, None).unwrap();
    assert_eq!(out.lrn_hash_before, out.lrn_hash_after);
    let after = sr.store().hashes();
    let frozen: Vec<_> = sr.store().params().into_iter().filter(|q| !q.is_trainable()).collect();
    assert!(!frozen.is_empty());
    for q in &frozen {
        assert_eq!(before[q.name()], after[q.name()], "{} moved", q.name());
    }
    assert!(sr.store().params().iter().any(|q| before[q.name()] != after[q.name()]));
    assert!(out.log.rows.iter().skip(1).all(|r| r.loss_rec.is_finite()));
    assert!(out.val_names.iter().all(|n| !out.train_names.contains(n)));
}
