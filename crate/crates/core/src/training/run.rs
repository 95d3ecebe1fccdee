use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{batch_plan, make_mask, split, steps_per_epoch, with_prefetch, Dataset, MAX_PREFETCH};
use crate::error::{Error, Result};
use crate::loss::EpochMetric;
use crate::model::Network;

use super::checkpoint;
use super::log::{CsvLog, EpochRow, LossRow, EPOCH_HEADER, LOSS_HEADER};
use super::samples::emit_samples;
use super::trainer::generator_input;
use super::{TrainConfig, Trainer};

/// Number of test images shown in sample grids.
pub const SAMPLE_IMAGES: usize = 4;

/// Iteration counts of a run, computed without touching any weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub n_train: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub total_iterations: u64,
}

/// Walk every epoch's batch plan and count the steps.
pub fn dry_run(n_train: usize, batch_size: usize, epochs: usize, seed: u64) -> Result<Schedule> {
    if n_train == 0 {
        return Err(Error::Contract("dry run over an empty training split".into()));
    }
    let mut total = 0u64;
    let mut per_epoch = 0;
    for epoch in 0..epochs as u64 {
        let plan = batch_plan(n_train, batch_size, seed, epoch)?;
        debug_assert_eq!(plan.iter().map(Vec::len).sum::<usize>(), n_train);
        per_epoch = plan.len();
        total += plan.len() as u64;
    }
    Ok(Schedule { n_train, batch_size, epochs, steps_per_epoch: per_epoch, total_iterations: total })
}

/// Where and how a run persists its artifacts.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    /// Continue from this state instead of a fresh initialization.
    pub resume: Option<Trainer>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub trainer: Trainer,
    pub losses: Vec<LossRow>,
    pub epochs: Vec<EpochRow>,
    pub checkpoints: Vec<PathBuf>,
    pub samples: Vec<PathBuf>,
}

pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("ckpt_{iteration:08}.cegan"))
}

pub fn sample_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("sample_{iteration:08}.png"))
}

/// Pixel MSE of the generator's reconstructions over a split.
pub fn split_mse(generator: &Network<f32>, ds: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    let (h, w) = ds.image_dims().ok_or_else(|| Error::Contract("metric over an empty split".into()))?;
    let mask_spec = cfg.mask_spec();
    let mask = make_mask::<f32>(&mask_spec, h, w)?;
    let mut metric = EpochMetric::new();
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(cfg.batch_size) {
        let truth = ds.batch(chunk)?;
        let out = generator.infer(&generator_input(generator.spec(), &truth, &mask, mask_spec.fill)?)?;
        metric.add(&out, &truth)?;
    }
    metric.value()
}

struct Artifacts {
    dir: PathBuf,
    loss: CsvLog,
    epochs: CsvLog,
}

fn due(every: u64, iteration: u64) -> bool {
    every > 0 && iteration.is_multiple_of(every)
}

/// Train for `cfg.epochs` epochs, logging every iteration.
///
/// With `opts.resume`, the stored state must come from a run with the same
/// model, seed, batch size and split; the remaining iterations then reproduce
/// the uninterrupted run exactly.
pub fn train_loop(cfg: &TrainConfig, dataset: &Dataset, opts: RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Contract("training on an empty dataset".into()));
    }
    let mut trainer = match opts.resume {
        Some(mut t) => {
            let same = t.cfg.model_spec() == cfg.model_spec()
                && t.cfg.seed == cfg.seed
                && t.cfg.batch_size == cfg.batch_size
                && t.cfg.train_fraction == cfg.train_fraction
                && t.cfg.mask == cfg.mask;
            if !same {
                return Err(Error::Config("checkpoint was written by an incompatible configuration".into()));
            }
            t.cfg = cfg.clone();
            t.opt_g.lr = cfg.lr;
            t.opt_d.lr = cfg.lr;
            t
        }
        None => Trainer::new(cfg.clone())?,
    };
    let (train, test) = split(dataset, cfg.train_fraction, cfg.seed)?;
    let spe = steps_per_epoch(train.len(), cfg.batch_size) as u64;
    let total = spe * cfg.epochs as u64;
    let start = trainer.iteration;
    if start > total {
        return Err(Error::Config(format!("checkpoint is at iteration {start}, past the {total} planned")));
    }
    let sample_images = &test.images()[..test.len().min(SAMPLE_IMAGES)];

    let mut artifacts = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let keep = (start > 0).then_some(start);
            let keep_epochs = (start > 0).then_some(start / spe);
            Some(Artifacts {
                dir: dir.clone(),
                loss: CsvLog::open(&dir.join("loss.csv"), LOSS_HEADER, keep)?,
                epochs: CsvLog::open(&dir.join("epochs.csv"), EPOCH_HEADER, keep_epochs)?,
            })
        }
        None => None,
    };
    let mut out = RunOutcome { trainer: trainer.clone(), losses: Vec::new(), epochs: Vec::new(), checkpoints: Vec::new(), samples: Vec::new() };
    let mut last_ckpt = None;
    let mut last_sample = None;

    for epoch in start / spe..cfg.epochs as u64 {
        let skip = if epoch == start / spe { (start % spe) as usize } else { 0 };
        let plan = batch_plan(train.len(), cfg.batch_size, cfg.seed, epoch)?;
        let jobs = plan.into_iter().enumerate().skip(skip).map(|(step, idx)| (step, train.batch(&idx)));
        with_prefetch(jobs, MAX_PREFETCH, |jobs| -> Result<()> {
            for (step, batch) in jobs {
                let report = trainer.train_step(&batch?)?;
                let row = LossRow { epoch: epoch + 1, step: step as u64 + 1, report };
                out.losses.push(row);
                let it = report.iteration;
                if let Some(a) = artifacts.as_mut() {
                    a.loss.row(&row.to_csv())?;
                    if due(cfg.checkpoint_every, it) {
                        a.loss.flush()?;
                        let p = checkpoint_path(&a.dir, it);
                        checkpoint::save(&trainer, &p)?;
                        out.checkpoints.push(p);
                        last_ckpt = Some(it);
                    }
                    if due(cfg.sample_every, it) && !sample_images.is_empty() {
                        let p = sample_path(&a.dir, it);
                        emit_samples(&trainer.generator, sample_images, &cfg.mask_spec(), &p)?;
                        out.samples.push(p);
                        last_sample = Some(it);
                    }
                }
            }
            Ok(())
        })?;
        let row = EpochRow {
            epoch: epoch + 1,
            iteration: trainer.iteration,
            train_mse: split_mse(&trainer.generator, &train, cfg)?,
            test_mse: split_mse(&trainer.generator, &test, cfg)?,
        };
        log::info!(
            "epoch {}/{}: iteration {}, train mse {:.6}, test mse {:.6}",
            row.epoch,
            cfg.epochs,
            row.iteration,
            row.train_mse,
            row.test_mse
        );
        if let Some(a) = artifacts.as_mut() {
            a.epochs.row(&row.to_csv())?;
        }
        out.epochs.push(row);
    }

    if let Some(a) = artifacts.as_mut() {
        a.loss.flush()?;
        a.epochs.flush()?;
        let it = trainer.iteration;
        if last_ckpt != Some(it) {
            let p = checkpoint_path(&a.dir, it);
            checkpoint::save(&trainer, &p)?;
            out.checkpoints.push(p);
        }
        if last_sample != Some(it) && !sample_images.is_empty() {
            let p = sample_path(&a.dir, it);
            emit_samples(&trainer.generator, sample_images, &cfg.mask_spec(), &p)?;
            out.samples.push(p);
        }
    }
    out.trainer = trainer;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_dataset;

    #[test]
    fn schedule_arithmetic() {
        let s = dry_run(45_000, 64, 20, 0).unwrap();
        assert_eq!(s.steps_per_epoch, 704);
        assert_eq!(s.total_iterations, 14_080);
        let s = dry_run(64, 8, 2, 0).unwrap();
        assert_eq!(s.total_iterations, 16);
    }

    #[test]
    fn loop_logs_every_iteration() {
        let ds = synthetic_dataset(10, 32, 1).unwrap();
        let cfg = TrainConfig {
            image_size: 32,
            channels: [2, 2, 4, 4, 4, 4],
            batch_size: 4,
            epochs: 2,
            checkpoint_every: 0,
            sample_every: 0,
            ..TrainConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let out = train_loop(&cfg, &ds, RunOptions { out_dir: Some(dir.path().to_path_buf()), resume: None }).unwrap();
        // 9 training images in batches of 4: 3 steps per epoch.
        assert_eq!(out.losses.len(), 6);
        assert_eq!(out.epochs.len(), 2);
        assert_eq!(out.checkpoints.len(), 1);
        assert_eq!(out.samples.len(), 1);
        let csv = fs::read_to_string(dir.path().join("loss.csv")).unwrap();
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.starts_with(LOSS_HEADER));
    }
}
