//! Train/test split, per-epoch shuffled batching and background prefetch.

use std::sync::mpsc;
use std::thread;

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed::{self, derive_seed, STREAM_SHUFFLE, STREAM_SPLIT};
use crate::tensor::Tensor;

/// Upper bound on batches buffered ahead of the training loop.
pub const MAX_PREFETCH: usize = 4;

/// Seeded shuffle of `0..n` partitioned into `floor(fraction · n)` training
/// indices and the remainder.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} must lie in (0, 1)")));
    }
    // The epsilon absorbs representation error such as 0.9 · 10 = 8.999….
    let n_train = (train_fraction * n as f64 + 1e-9).floor() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Contract(format!(
            "splitting {n} images at {train_fraction} leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed, STREAM_SPLIT));
    let test = order.split_off(n_train);
    Ok((order, test))
}

pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(ds.len(), train_fraction, seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// Index groups for one epoch: a fresh shuffle seeded by `(seed, epoch)`,
/// chunked into batches with the final partial batch kept.
pub fn batch_plan(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(derive_seed(seed, epoch), STREAM_SHUFFLE));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Batches of one epoch as `[B, 3, H, W]` tensors.
pub fn batches(
    ds: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<impl Iterator<Item = Result<Tensor<f32>>> + Send + '_> {
    let plan = batch_plan(ds.len(), batch_size, seed, epoch)?;
    Ok(plan.into_iter().map(move |idx| ds.batch(&idx)))
}

/// Run `body` over `items` produced on one background thread, at most
/// `depth` items ahead. Items arrive in the producer's order.
pub fn with_prefetch<I, R>(items: I, depth: usize, body: impl FnOnce(&mut dyn Iterator<Item = I::Item>) -> R) -> R
where
    I: Iterator + Send,
    I::Item: Send,
{
    let depth = depth.clamp(1, MAX_PREFETCH);
    thread::scope(|scope| {
        let (tx, rx) = mpsc::sync_channel(depth);
        scope.spawn(move || {
            for item in items {
                if tx.send(item).is_err() {
                    break;
                }
            }
        });
        let mut received = rx.into_iter();
        let out = body(&mut received);
        // Dropping the receiver unblocks a producer that is still sending.
        drop(received);
        out
    })
}
