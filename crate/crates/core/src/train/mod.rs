//! Datasets, optimizers and the training loop.

mod config;
pub mod idx;
pub mod optim;
mod regression;

use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{backward, forward_at, softmax_cross_entropy, GradientSet, Network};

pub use config::{Architecture, TrainConfig, DATA_DIR_ENV, PRESETS};
pub use idx::{load_idx, read_idx, Dataset, DatasetKind, IdxArray};
pub use optim::{sgd_step, OptimizerKind, OptimizerState};
pub use regression::{fit_regression, synth_regression, unit_regressor, RegressionData};

/// Samples per parallel work item. Fixed so the reduction order, and therefore
/// every floating-point sum, is the same for any thread count.
pub const SHARD_SIZE: usize = 32;

const CLASSES: usize = 10;

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Mean training loss over the epoch's mini-batches.
    pub train_loss: f64,
    pub test_acc: f64,
    /// Wall time of the epoch including evaluation.
    pub seconds: f64,
}

impl EpochMetrics {
    /// Equality ignoring wall time.
    pub fn same_result(&self, other: &EpochMetrics) -> bool {
        self.epoch == other.epoch
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.test_acc.to_bits() == other.test_acc.to_bits()
    }
}

/// Metrics history as CSV with header `epoch,train_loss,test_acc,seconds`.
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_loss,test_acc,seconds\n");
    for m in history {
        writeln!(out, "{},{},{},{}", m.epoch, m.train_loss, m.test_acc, m.seconds).unwrap();
    }
    out
}

pub fn write_metrics_csv(path: impl AsRef<Path>, history: &[EpochMetrics]) -> io::Result<()> {
    std::fs::write(path, metrics_csv(history))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub history: Vec<EpochMetrics>,
}

/// Trains `net` on `train`, evaluating on `test` after every epoch.
/// `on_epoch` sees each history row as it is produced.
pub fn train_model(
    mut net: Network,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    for ds in [train, test] {
        if ds.pixels() != net.input_len() {
            return Err(Error::mismatch("image size", net.input_len(), ds.pixels()));
        }
    }
    let mut opt = OptimizerState::new(cfg.optimizer_kind()?, cfg.pau_lr, &net)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        if let Some(every) = cfg.lr_decay_every {
            opt.lr_scale = cfg.lr_decay_gamma.powi(((epoch - 1) / every) as i32);
        }
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let seed = step_seed(cfg.seed, step);
            let (loss, grads) = batch_gradients(&net, train, chunk, seed)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: step as usize,
                });
            }
            opt.step(&mut net, &grads)?;
            loss_sum += loss;
            batches += 1;
            step += 1;
        }
        let metrics = EpochMetrics {
            epoch,
            train_loss: if batches == 0 {
                0.0
            } else {
                loss_sum / batches as f64
            },
            test_acc: evaluate(&net, test)?,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok(TrainOutcome {
        network: net,
        history,
    })
}

/// Loads the data, builds the network and trains it.
pub fn run(cfg: &TrainConfig, on_epoch: impl FnMut(&EpochMetrics)) -> Result<TrainOutcome> {
    let (train, test) = cfg.load_data()?;
    train_model(cfg.build_network()?, &train, &test, cfg, on_epoch)
}

/// Noise seed for optimizer step `step`.
fn step_seed(seed: u64, step: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    rng.set_word_pos(u128::from(step) * 2);
    rand::RngCore::next_u64(&mut rng)
}

/// Mean cross-entropy and its gradient over the samples `indices`.
fn batch_gradients(
    net: &Network,
    data: &Dataset,
    indices: &[usize],
    seed: u64,
) -> Result<(f64, GradientSet)> {
    let total = indices.len() as f64;
    let parts: Vec<Result<(f64, GradientSet)>> = indices
        .par_chunks(SHARD_SIZE)
        .enumerate()
        .map(|(s, shard)| {
            let mut images = Vec::with_capacity(shard.len() * data.pixels());
            let mut labels = Vec::with_capacity(shard.len());
            for &i in shard {
                images.extend_from_slice(data.image(i));
                labels.push(data.labels[i]);
            }
            let first = (s * SHARD_SIZE) as u64;
            let (out, trace) = forward_at(net, &images, true, seed, first)?;
            let (mean, mut grad) = softmax_cross_entropy(&out, &labels, CLASSES)?;
            // Rescale from the shard mean to this shard's share of the batch mean.
            let share = shard.len() as f64 / total;
            grad.iter_mut().for_each(|g| *g *= share);
            Ok((mean * share, backward(net, &trace, &grad)?))
        })
        .collect();
    let mut loss = 0.0;
    let mut grads = GradientSet::zeros(net);
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grads.add(&g);
    }
    Ok((loss, grads))
}

/// Raw network outputs for every sample of `data`, computed without noise.
pub fn predict(net: &Network, data: &Dataset) -> Result<Vec<f64>> {
    let pixels = data.pixels();
    if pixels != net.input_len() {
        return Err(Error::mismatch("image size", net.input_len(), pixels));
    }
    let parts: Vec<Result<Vec<f64>>> = data
        .images
        .par_chunks(256 * pixels)
        .map(|chunk| forward_at(net, chunk, false, 0, 0).map(|(out, _)| out))
        .collect();
    let mut out = Vec::with_capacity(data.len() * net.output_len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Test accuracy of `net` on `data`.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<f64> {
    let out = predict(net, data)?;
    Ok(accuracy_from_outputs(&out, &data.labels, net.output_len()))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label. Empty input gives 0.
pub fn accuracy_from_outputs(outputs: &[f64], labels: &[u8], classes: usize) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = outputs
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y as usize)
        .count();
    correct as f64 / labels.len() as f64
}
