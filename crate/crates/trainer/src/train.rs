//! Training loop, evaluation and the ablation sweep.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use dcrnet::data::{self, augment, collate, split, synth_generate, Sample};
use dcrnet::losses::{total_loss, LossReport};
use dcrnet::memory::RegionMemory;
use dcrnet::metrics::{self, default_boundary_tolerance, DatasetReport, MetricReport};
use dcrnet::network::{Network, Variant};
use dcrnet::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::Adam;
use crate::checkpoint;
use crate::config::{DataSource, RunConfig};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Generates or loads the dataset, then splits it.
pub fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    let samples = match &cfg.data {
        DataSource::Synth(s) => synth_generate(s)?,
        DataSource::Dir(dir) => data::load_dataset(dir, cfg.net.input_size)?,
    };
    if samples.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let (train, val, test) = split(&samples, cfg.split, cfg.split_seed)?;
    Ok(Splits { train, val, test })
}

/// Deterministic per-(run, epoch, sample) seed.
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean training loss of one epoch, split into the two terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochLoss {
    pub total: f64,
    pub wbce: f64,
    pub dice: f64,
}

#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: EpochLoss,
    pub val: Option<MetricReport>,
    pub seconds: f64,
}

pub struct Trainer {
    pub net: Network<f32>,
    pub memory: RegionMemory<f32>,
    adam: Adam<f32>,
    cfg: RunConfig,
    step: usize,
    /// Total loss of every step so far.
    pub step_losses: Vec<f64>,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut net_cfg = cfg.net.clone();
        net_cfg.seed = cfg.seed;
        Self::with_network(Network::build(net_cfg)?, cfg)
    }

    pub fn with_network(net: Network<f32>, cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            memory: RegionMemory::new(net.config().memory_capacity)?,
            net,
            adam: Adam::new(cfg.learning_rate),
            cfg: cfg.clone(),
            step: 0,
            step_losses: Vec::new(),
        })
    }

    fn uses_memory(&self) -> bool {
        let v = self.net.config().variant;
        v.ecr && v.memory
    }

    /// One forward/backward/Adam step on `batch`.
    pub fn train_step(&mut self, batch: &[&Sample], epoch: usize) -> Result<LossReport> {
        let (images, masks) = collate(batch)?;
        let mut tape = Tape::new();
        let x = tape.constant(images);
        let memory = if self.uses_memory() { Some(&mut self.memory) } else { None };
        let out = self.net.forward(&mut tape, x, memory, true)?;
        let (loss, report) = total_loss(&mut tape, &out, &masks, self.cfg.weight_kernel)?;
        if !report.total.is_finite() {
            let batch = batch.iter().map(|s| s.id.clone()).collect();
            return Err(Error::NonFiniteLoss { epoch, step: self.step, batch });
        }
        tape.backward(loss)?;
        let grads: Vec<Option<&Tensor<f32>>> = out.params.iter().map(|&v| tape.grad(v)).collect();
        self.adam.step(self.net.params_mut(), &grads);
        self.step += 1;
        self.step_losses.push(report.total);
        Ok(report)
    }

    /// Shuffled, optionally augmented pass over `train`.
    pub fn train_epoch(&mut self, train: &[Sample], epoch: usize) -> Result<EpochLoss> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(self.cfg.seed, epoch as u64, u64::MAX)));
        let mut sum = EpochLoss::default();
        let mut steps = 0usize;
        for chunk in order.chunks(self.cfg.batch_size) {
            let owned: Vec<Sample> = if self.cfg.augment {
                chunk.iter().map(|&i| augment(&train[i], mix(self.cfg.seed, epoch as u64, i as u64))).collect()
            } else {
                chunk.iter().map(|&i| train[i].clone()).collect()
            };
            let refs: Vec<&Sample> = owned.iter().collect();
            let r = self.train_step(&refs, epoch).inspect_err(|e| {
                if let Error::NonFiniteLoss { .. } = e {
                    dump_nonfinite(&self.cfg.out_dir, e);
                }
            })?;
            sum.total += r.total;
            sum.wbce += r.per_map.iter().map(|m| m.wbce).sum::<f64>();
            sum.dice += r.per_map.iter().map(|m| m.dice).sum::<f64>();
            steps += 1;
        }
        let n = steps.max(1) as f64;
        Ok(EpochLoss { total: sum.total / n, wbce: sum.wbce / n, dice: sum.dice / n })
    }
}

fn dump_nonfinite(dir: &Path, e: &Error) {
    let path = dir.join("nonfinite_batch.txt");
    if fs::create_dir_all(dir).and_then(|_| fs::write(&path, format!("{e}\n"))).is_err() {
        log::error!("could not write {}", path.display());
    }
    log::error!("{e}");
}

/// Eval-mode probability maps `[1, H, W]`, in sample order.
///
/// Exterior attention in eval mode attends over the current batch, so
/// results depend on `batch_size` but never on region memory.
pub fn predict(net: &mut Network<f32>, samples: &[Sample], batch_size: usize) -> Result<Vec<Tensor<f32>>> {
    let mut preds = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (images, _) = collate(&refs)?;
        let mut tape = Tape::inference();
        let x = tape.constant(images);
        let out = net.forward(&mut tape, x, None, false)?;
        let probs = tape.sigmoid(out.final_map)?;
        let p = tape.value(probs);
        let [_, _, h, w] = p.shape()[..] else { unreachable!("network maps are rank 4") };
        for i in 0..chunk.len() {
            preds.push(Tensor::new(&[1, h, w], p.slab(i).to_vec())?);
        }
    }
    Ok(preds)
}

pub fn boundary_tolerance(cfg: &RunConfig) -> f64 {
    let (h, w) = cfg.net.input_size;
    cfg.boundary_tolerance.unwrap_or_else(|| default_boundary_tolerance(h, w))
}

pub fn evaluate(net: &mut Network<f32>, samples: &[Sample], cfg: &RunConfig) -> Result<DatasetReport> {
    let preds = predict(net, samples, cfg.batch_size)?;
    let gts: Vec<Tensor<f32>> = samples.iter().map(|s| s.mask.clone()).collect();
    Ok(metrics::evaluate_dataset(&preds, &gts, boundary_tolerance(cfg))?)
}

pub struct TrainOutcome {
    /// Network with the best validation Dice (the last epoch without a validation split).
    pub best: Network<f32>,
    pub best_epoch: usize,
    pub best_val_dice: Option<f64>,
    pub last: Network<f32>,
    pub logs: Vec<EpochLog>,
    pub step_losses: Vec<f64>,
    pub memory_accesses: u64,
}

pub const LOG_HEADER: &str =
    "epoch,train_total,train_wbce,train_dice,val_mae,val_dice,val_iou,val_boundary_f,val_s_measure,seconds";

/// Trains for `cfg.epochs`; with `out`, writes `train_log.csv`, `best.ckpt` and `last.ckpt` there.
pub fn train(cfg: &RunConfig, splits: &Splits, out: Option<&Path>) -> Result<TrainOutcome> {
    if splits.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut t = Trainer::new(cfg)?;
    let mut log_csv = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut w = csv::Writer::from_path(dir.join("train_log.csv"))?;
            w.write_record(LOG_HEADER.split(','))?;
            Some(w)
        }
        None => None,
    };
    let mut best: Option<(f64, usize, Network<f32>)> = None;
    let mut logs = Vec::new();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let loss = t.train_epoch(&splits.train, epoch)?;
        let val = if splits.val.is_empty() { None } else { Some(evaluate(&mut t.net, &splits.val, cfg)?.mean) };
        let seconds = start.elapsed().as_secs_f64();
        log::info!(
            "epoch {epoch}: loss {:.4} (wbce {:.4}, dice {:.4}), val dice {} in {seconds:.1}s",
            loss.total,
            loss.wbce,
            loss.dice,
            val.map_or("-".into(), |v| format!("{:.4}", v.dice))
        );
        if let Some(v) = &val {
            if best.as_ref().is_none_or(|b| v.dice > b.0) {
                best = Some((v.dice, epoch, t.net.clone()));
            }
        }
        if let Some(w) = log_csv.as_mut() {
            let mut row = vec![epoch.to_string(), loss.total.to_string(), loss.wbce.to_string(), loss.dice.to_string()];
            match &val {
                Some(v) => row.extend(v.fields().iter().map(|x| x.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), 5)),
            }
            row.push(format!("{seconds:.3}"));
            w.write_record(&row)?;
            w.flush()?;
        }
        logs.push(EpochLog { epoch, loss, val, seconds });
    }
    let last_epoch = cfg.epochs.saturating_sub(1);
    let (best_val_dice, best_epoch, best_net) = match best {
        Some((d, e, n)) => (Some(d), e, n),
        None => (None, last_epoch, t.net.clone()),
    };
    if let Some(dir) = out {
        let info =
            |epoch: usize| vec![("epoch".to_string(), epoch.to_string()), ("seed".to_string(), cfg.seed.to_string())];
        checkpoint::save(&dir.join("best.ckpt"), &best_net, &info(best_epoch))?;
        checkpoint::save(&dir.join("last.ckpt"), &t.net, &info(last_epoch))?;
    }
    Ok(TrainOutcome {
        best: best_net,
        best_epoch,
        best_val_dice,
        last: t.net,
        logs,
        step_losses: t.step_losses,
        memory_accesses: t.memory.accesses(),
    })
}

pub const METRICS_HEADER: [&str; 11] = [
    "sample_id",
    "mae",
    "dice",
    "iou",
    "boundary_f",
    "s_measure",
    "mae_x100",
    "dice_x100",
    "iou_x100",
    "boundary_f_x100",
    "s_measure_x100",
];

fn metric_row(id: &str, r: &MetricReport) -> Vec<String> {
    let f = r.fields();
    let mut row = vec![id.to_string()];
    row.extend(f.iter().map(|x| x.to_string()));
    row.extend(f.iter().map(|x| (x * 100.0).to_string()));
    row
}

/// Per-sample rows followed by a `mean` row.
pub fn metrics_csv(samples: &[Sample], report: &DatasetReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER)?;
    for (s, r) in samples.iter().zip(&report.rows) {
        w.write_record(metric_row(&s.id, r))?;
    }
    w.write_record(metric_row("mean", &report.mean))?;
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub struct EvalOutcome {
    pub report: DatasetReport,
    pub csv: Vec<u8>,
    pub samples_per_sec: f64,
}

/// Evaluates `net` on the test split; with `out`, writes `metrics.csv` and `eval_summary.txt`.
pub fn run_eval(net: &mut Network<f32>, cfg: &RunConfig, test: &[Sample], out: Option<&Path>) -> Result<EvalOutcome> {
    if test.is_empty() {
        return Err(Error::Config("test split is empty".into()));
    }
    let start = Instant::now();
    let report = evaluate(net, test, cfg)?;
    let samples_per_sec = test.len() as f64 / start.elapsed().as_secs_f64().max(1e-9);
    let csv = metrics_csv(test, &report)?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.csv"), &csv)?;
        let m = report.mean;
        let mut s = String::new();
        let _ = writeln!(s, "samples: {}", test.len());
        for (name, v) in MetricReport::NAMES.iter().zip(m.fields()) {
            let _ = writeln!(s, "{name}: {:.2}", v * 100.0);
        }
        let _ = writeln!(s, "throughput: {samples_per_sec:.1} samples/s (batch {})", cfg.batch_size);
        fs::write(dir.join("eval_summary.txt"), s)?;
    }
    Ok(EvalOutcome { report, csv, samples_per_sec })
}

/// Rows of the ablation table, in this order.
pub const ABLATION_VARIANTS: [Variant; 4] = [Variant::BACKBONE, Variant::ICR, Variant::ECR, Variant::FULL];

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: Variant,
    pub dice: Vec<f64>,
    pub iou: Vec<f64>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub const ABLATION_HEADER: [&str; 8] =
    ["variant", "icr", "ecr", "rom", "dice_mean_x100", "dice_sd_x100", "iou_mean_x100", "iou_sd_x100"];

pub fn ablation_csv(rows: &[AblationRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ABLATION_HEADER)?;
    let mark = |b: bool| if b { "x" } else { "" }.to_string();
    for r in rows {
        let (dm, ds) = mean_sd(&r.dice);
        let (im, is) = mean_sd(&r.iou);
        let v = r.variant;
        w.write_record([
            v.name().to_string(),
            mark(v.icr),
            mark(v.ecr),
            mark(v.memory),
            format!("{:.2}", dm * 100.0),
            format!("{:.2}", ds * 100.0),
            format!("{:.2}", im * 100.0),
            format!("{:.2}", is * 100.0),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Trains every variant over `cfg.ablate_seeds` seeds and scores each on the test split.
pub fn ablate(cfg: &RunConfig, splits: &Splits, out: Option<&Path>) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for variant in ABLATION_VARIANTS {
        let mut row = AblationRow { variant, dice: Vec::new(), iou: Vec::new() };
        for k in 0..cfg.ablate_seeds.max(1) {
            let mut run = cfg.clone();
            run.net.variant = variant;
            run.seed = cfg.seed + k as u64;
            let outcome = train(&run, splits, None)?;
            if !(variant.ecr && variant.memory) && outcome.memory_accesses != 0 {
                return Err(Error::Config(format!("variant {} touched region memory", variant.name())));
            }
            let mut net = outcome.best;
            let report = evaluate(&mut net, &splits.test, &run)?;
            log::info!("ablation {} seed {}: dice {:.4}", variant.name(), run.seed, report.mean.dice);
            row.dice.push(report.mean.dice);
            row.iou.push(report.mean.iou);
        }
        rows.push(row);
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("ablation.csv"), ablation_csv(&rows)?)?;
        fs::write(dir.join("ablation_summary.txt"), ablation_table(&rows))?;
    }
    Ok(rows)
}

/// Plain-text table with one row per variant.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("ICR  ECR  ROM  | Dice (mean ± sd) | IoU (mean ± sd)\n");
    let mark = |b: bool| if b { " ✓ " } else { "   " };
    for r in rows {
        let (dm, ds) = mean_sd(&r.dice);
        let (im, is) = mean_sd(&r.iou);
        let v = r.variant;
        let _ = writeln!(
            s,
            "{}  {}  {}  | {:6.2} ± {:5.2}   | {:6.2} ± {:5.2}",
            mark(v.icr),
            mark(v.ecr),
            mark(v.memory),
            dm * 100.0,
            ds * 100.0,
            im * 100.0,
            is * 100.0
        );
    }
    s
}
