//! Training loop, evaluation output and the ablation sweep on tiny runs.

mod common;

use dcrnet::network::Variant;
use dcrnet::Tensor;
use dcrnet_trainer::adam::Adam;
use dcrnet_trainer::train::{
    ablate, ablation_csv, evaluate, load_splits, mean_sd, predict, run_eval, train, Trainer, ABLATION_HEADER,
    ABLATION_VARIANTS, METRICS_HEADER,
};

fn first_losses(seed: u64, steps: usize) -> Vec<f64> {
    let mut cfg = common::tiny(48, 1);
    cfg.seed = seed;
    let splits = load_splits(&cfg).unwrap();
    let mut t = Trainer::new(&cfg).unwrap();
    t.train_epoch(&splits.train, 0).unwrap();
    assert!(t.step_losses.len() >= steps);
    t.step_losses[..steps].to_vec()
}

#[test]
fn fixed_seed_reproduces_losses_bitwise() {
    let a = first_losses(7, 6);
    let b = first_losses(7, 6);
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_ne!(a, first_losses(8, 6));
}

#[test]
fn zero_learning_rate_keeps_parameters_bitwise() {
    let mut cfg = common::tiny(16, 1);
    cfg.learning_rate = 0.0;
    let splits = load_splits(&cfg).unwrap();
    let mut t = Trainer::new(&cfg).unwrap();
    let before = t.net.params().to_vec();
    t.train_epoch(&splits.train, 0).unwrap();
    for (a, b) in before.iter().zip(t.net.params()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn adam_first_step_on_quadratic() {
    // f(θ) = θ², θ₀ = 1: the bias-corrected first step moves by lr.
    let mut theta = vec![Tensor::scalar(1.0f64)];
    let grad = Tensor::scalar(2.0 * theta[0].data()[0]);
    let mut adam = Adam::new(0.1);
    adam.step(&mut theta, &[Some(&grad)]);
    assert!((theta[0].data()[0] - 0.9).abs() < 1e-7);
    assert_eq!(adam.steps(), 1);
}

#[test]
fn validation_ignores_region_memory() {
    let cfg = common::tiny(16, 1);
    let splits = load_splits(&cfg).unwrap();
    let mut t = Trainer::new(&cfg).unwrap();
    t.train_epoch(&splits.train, 0).unwrap();
    assert!(!t.memory.is_empty());
    let before = predict(&mut t.net, &splits.val, cfg.batch_size).unwrap();
    let width = t.memory.width().unwrap();
    t.memory.push_vectors(vec![vec![9.0; width]; 3]).unwrap();
    let after = predict(&mut t.net, &splits.val, cfg.batch_size).unwrap();
    assert_eq!(before, after);
    t.memory.reset();
    assert_eq!(predict(&mut t.net, &splits.val, cfg.batch_size).unwrap(), before);
}

fn parse_csv(bytes: &[u8]) -> (Vec<String>, Vec<(String, Vec<f64>)>) {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].to_string(), rec.iter().skip(1).map(|v| v.parse().unwrap()).collect())
        })
        .collect();
    (header, rows)
}

#[test]
fn eval_csv_is_byte_stable_and_mean_row_is_the_mean() {
    let cfg = common::tiny(16, 1);
    let splits = load_splits(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let outcome = train(&cfg, &splits, Some(dir.path())).unwrap();
    let ckpt = dcrnet_trainer::checkpoint::load(&dir.path().join("best.ckpt")).unwrap();
    let mut a = ckpt.net.clone();
    let mut b = ckpt.net;
    let first = run_eval(&mut a, &cfg, &splits.test, Some(dir.path())).unwrap();
    let second = run_eval(&mut b, &cfg, &splits.test, None).unwrap();
    assert_eq!(first.csv, second.csv);
    assert_eq!(std::fs::read(dir.path().join("metrics.csv")).unwrap(), first.csv);
    assert!(dir.path().join("eval_summary.txt").exists());
    let mut best = outcome.best;
    assert_eq!(run_eval(&mut best, &cfg, &splits.test, None).unwrap().csv, first.csv);

    let (header, rows) = parse_csv(&first.csv);
    assert_eq!(header, METRICS_HEADER);
    let (mean, samples) = rows.split_last().unwrap();
    assert_eq!(mean.0, "mean");
    assert_eq!(samples.len(), splits.test.len());
    for (col, &m) in mean.1.iter().enumerate() {
        let avg = samples.iter().map(|r| r.1[col]).sum::<f64>() / samples.len() as f64;
        assert!((avg - m).abs() <= 1e-12 * m.abs().max(1.0), "column {col}: {avg} vs {m}");
    }
    // The scaled columns repeat the raw ones times 100.
    for r in samples {
        for k in 0..5 {
            assert!((r.1[k] * 100.0 - r.1[k + 5]).abs() < 1e-9);
        }
    }
}

#[test]
fn train_writes_log_and_checkpoints() {
    let cfg = common::tiny(16, 2);
    let splits = load_splits(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let outcome = train(&cfg, &splits, Some(dir.path())).unwrap();
    assert_eq!(outcome.logs.len(), 2);
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(dir.path().join("best.ckpt").exists() && dir.path().join("last.ckpt").exists());
    let best_dice = outcome.best_val_dice.unwrap();
    assert!(outcome.logs.iter().all(|l| l.val.unwrap().dice <= best_dice));
    assert!(outcome.memory_accesses > 0);
}

#[test]
fn overfit_toy_run_reaches_high_training_dice() {
    let mut cfg = common::tiny(8, 40);
    cfg.split = (1.0, 0.0, 0.0);
    cfg.learning_rate = 3e-3;
    cfg.augment = false;
    let splits = load_splits(&cfg).unwrap();
    let mut out = train(&cfg, &splits, None).unwrap();
    let report = evaluate(&mut out.best, &splits.train, &cfg).unwrap();
    assert!(report.mean.dice > 0.9, "training-fold dice {}", report.mean.dice);
}

#[test]
fn empty_training_split_is_config_error() {
    let mut cfg = common::tiny(8, 1);
    cfg.split = (0.0, 0.5, 0.5);
    let splits = load_splits(&cfg).unwrap();
    assert!(matches!(train(&cfg, &splits, None), Err(dcrnet_trainer::Error::Config(_))));
}

#[test]
fn ablation_schema_and_memory_isolation() {
    let mut cfg = common::tiny(16, 1);
    cfg.ablate_seeds = 3;
    let splits = load_splits(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rows = ablate(&cfg, &splits, Some(dir.path())).unwrap();
    assert_eq!(rows.iter().map(|r| r.variant).collect::<Vec<_>>(), ABLATION_VARIANTS);
    assert!(rows.iter().all(|r| r.dice.len() == 3 && r.iou.len() == 3));

    let bytes = std::fs::read(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(bytes, ablation_csv(&rows).unwrap());
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ABLATION_HEADER);
    let records: Vec<_> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(records.len(), 4);
    for (rec, row) in records.iter().zip(&rows) {
        assert_eq!(&rec[0], row.variant.name());
        // Dice and IoU, each as mean and sd.
        let values: Vec<f64> = rec.iter().skip(4).map(|v| v.parse().unwrap()).collect();
        assert_eq!(values.len(), 4);
        let (dm, ds) = mean_sd(&row.dice);
        assert!((values[0] - dm * 100.0).abs() <= 0.005 + 1e-9 && (values[1] - ds * 100.0).abs() <= 0.005 + 1e-9);
    }
    assert!(std::fs::read_to_string(dir.path().join("ablation_summary.txt")).unwrap().lines().count() == 5);
}

#[test]
fn only_memory_variants_touch_memory() {
    let cfg = common::tiny(8, 1);
    let splits = load_splits(&cfg).unwrap();
    for variant in [Variant::BACKBONE, Variant::ICR, Variant::ECR, Variant::ECR_ROM, Variant::FULL] {
        let mut run = cfg.clone();
        run.net.variant = variant;
        let out = train(&run, &splits, None).unwrap();
        assert_eq!(out.memory_accesses > 0, variant.ecr && variant.memory, "{}", variant.name());
    }
}
