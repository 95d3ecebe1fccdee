use std::fs;

use cegan_core::data::synthetic_dataset;
use cegan_core::training::{checkpoint, checkpoint_path, train_loop, RunOptions, TrainConfig, Trainer};
use cegan_core::Error;

fn tiny(epochs: usize) -> TrainConfig {
    TrainConfig {
        image_size: 32,
        channels: [2, 4, 4, 8, 8, 8],
        batch_size: 8,
        epochs,
        checkpoint_every: 0,
        sample_every: 0,
        seed: 7,
        ..TrainConfig::default()
    }
}

#[test]
fn sixty_four_images_two_epochs_is_sixteen_iterations() {
    let data = synthetic_dataset(64, 32, 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = train_loop(&tiny(2), &data, RunOptions { out_dir: Some(dir.path().into()), resume: None }).unwrap();
    assert_eq!(out.losses.len(), 16);
    assert_eq!(out.losses.last().unwrap().report.iteration, 16);
    assert_eq!(out.epochs.len(), 2);
    assert!(dir.path().join("sample_00000016.png").exists());
    assert!(checkpoint_path(dir.path(), 16).exists());
}

#[test]
fn update_isolation_is_bitwise() {
    let batch = synthetic_dataset(4, 32, 1).unwrap().to_batch().unwrap();
    let mut t = Trainer::new(tiny(1)).unwrap();
    t.opt_d.lr = 0.0;
    let d = t.discriminator.clone();
    t.train_step(&batch).unwrap();
    assert_eq!(t.discriminator, d, "generator step must not touch the discriminator");

    let mut t = Trainer::new(tiny(1)).unwrap();
    t.opt_g.lr = 0.0;
    let g = t.generator.clone();
    t.train_step(&batch).unwrap();
    assert_eq!(t.generator, g, "discriminator step must not touch the generator");
}

#[test]
fn batch_norm_runs_track_statistics_and_resume() {
    let cfg = TrainConfig { use_batch_norm: true, checkpoint_every: 3, epochs: 2, ..tiny(2) };
    let data = synthetic_dataset(24, 32, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let full = train_loop(&cfg, &data, RunOptions { out_dir: Some(dir.path().into()), resume: None }).unwrap();
    let buffers = &full.trainer.generator.buffers;
    assert!(buffers.iter().any(|(n, t)| n.ends_with("running_mean") && t.data().iter().any(|&v| v != 0.0)));

    let state = checkpoint::load(&checkpoint_path(dir.path(), 3)).unwrap();
    let resumed = train_loop(&cfg, &data, RunOptions { out_dir: None, resume: Some(state) }).unwrap();
    let tail: Vec<_> = full.losses.iter().filter(|r| r.report.iteration > 3).copied().collect();
    assert_eq!(resumed.losses, tail);
    assert_eq!(resumed.trainer, full.trainer);
}

#[test]
fn random_masks_are_reproducible() {
    let mut cfg = tiny(1);
    cfg.mask.kind = cegan_core::data::MaskKind::RandomBlock;
    let data = synthetic_dataset(16, 32, 5).unwrap();
    let a = train_loop(&cfg, &data, RunOptions::default()).unwrap();
    let b = train_loop(&cfg, &data, RunOptions::default()).unwrap();
    assert_eq!(a.losses, b.losses);
}

#[test]
fn incompatible_resume_is_rejected() {
    let data = synthetic_dataset(16, 32, 5).unwrap();
    let state = Trainer::new(tiny(1)).unwrap();
    let other = TrainConfig { seed: 8, ..tiny(1) };
    let err = train_loop(&other, &data, RunOptions { out_dir: None, resume: Some(state) }).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn unwritable_output_aborts() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let data = synthetic_dataset(16, 32, 5).unwrap();
    let err = train_loop(&tiny(1), &data, RunOptions { out_dir: Some(blocker.join("out")), resume: None });
    assert!(matches!(err, Err(Error::Io(_))));
}

#[test]
fn corrupt_checkpoint_reports_offset() {
    let t = Trainer::new(tiny(1)).unwrap();
    let mut bytes = checkpoint::encode(&t).unwrap();
    let n = bytes.len();
    bytes.truncate(n - 3);
    match checkpoint::decode(&bytes) {
        Err(Error::Format { offset, reason }) => {
            assert!(offset as usize <= n);
            assert!(reason.contains("truncated"), "{reason}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn default_width_checkpoint_round_trips_quickly() {
    let cfg = TrainConfig { image_size: 32, ..TrainConfig::default() };
    let t = Trainer::new(cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.cegan");
    let start = std::time::Instant::now();
    checkpoint::save(&t, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert!(start.elapsed().as_secs_f64() < 1.0);
    assert_eq!(back, t);
}
