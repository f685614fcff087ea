//! Plain SGD training with a per-epoch loss log.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rngstream;

use super::{Gradients, Network};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub input_extent: usize,
    pub hu_clip: [f64; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch: 8,
            epochs: 1,
            seed: 0,
            input_extent: 64,
            hu_clip: super::DEFAULT_HU_CLIP,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be >= 0 and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch and epochs must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Which split a loss-log row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
        }
    }
}

/// One loss-log row. `mse` is in normalized target units; `mae` is
/// de-normalized (score points, or slices for the level task).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub split: Split,
    pub mse: f64,
    pub mae: f64,
}

/// A batch of normalized inputs and targets.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

/// Yields the batches of one epoch. The RNG is derived from the train seed
/// and the epoch index, so a source is deterministic no matter how epochs
/// are scheduled.
pub trait BatchSource {
    fn batches_for_epoch(
        &mut self,
        epoch: usize,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Batch>>;
}

/// Batch source over a fixed in-memory list, in order, no resampling.
#[derive(Debug, Clone)]
pub struct FixedBatchSource {
    pub samples: Vec<(Vec<f64>, Vec<f64>)>,
}

impl BatchSource for FixedBatchSource {
    fn batches_for_epoch(
        &mut self,
        _epoch: usize,
        batch_size: usize,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Batch>> {
        if self.samples.is_empty() {
            return Err(Error::InvalidArgument("no training samples".into()));
        }
        Ok(self
            .samples
            .chunks(batch_size)
            .map(|chunk| Batch {
                inputs: chunk.iter().map(|(x, _)| x.clone()).collect(),
                targets: chunk.iter().map(|(_, t)| t.clone()).collect(),
            })
            .collect())
    }
}

/// SGD-train `net` in place; returns the per-epoch training loss log.
///
/// `target_denorm` scales the normalized MAE into reporting units
/// (100 for scores, depth-1 for levels). Fully reproducible from
/// `cfg.seed`; a non-finite loss aborts with the offending epoch.
pub fn train<S: BatchSource>(
    net: &mut Network,
    source: &mut S,
    cfg: &TrainConfig,
    target_denorm: f64,
) -> Result<Vec<EpochLoss>> {
    cfg.validate()?;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut grads = Gradients::zeroed(net.num_params());
    for epoch in 0..cfg.epochs {
        let mut rng = rngstream::stream(rngstream::derive_seed(cfg.seed, 0x45504f43, epoch as u64), 0);
        let batches = source.batches_for_epoch(epoch, cfg.batch, &mut rng)?;
        if batches.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "batch source produced no batches at epoch {epoch}"
            )));
        }
        let mut sum_sq = 0.0f64;
        let mut sum_abs = 0.0f64;
        let mut n_components = 0usize;
        for batch in &batches {
            if batch.inputs.len() != batch.targets.len() || batch.inputs.is_empty() {
                return Err(Error::InvalidArgument(
                    "batch inputs/targets must be non-empty and aligned".into(),
                ));
            }
            grads.reset();
            for (x, t) in batch.inputs.iter().zip(batch.targets.iter()) {
                let trace = net.forward_trace(x)?;
                for (&p, &ti) in trace.output.iter().zip(t.iter()) {
                    let d = p - ti;
                    sum_sq += d * d;
                    sum_abs += d.abs();
                }
                n_components += t.len();
                net.backward_into(&trace, t, &mut grads)?;
            }
            grads.scale(1.0 / batch.inputs.len() as f64);
            net.apply_sgd(&grads, cfg.learning_rate)?;
        }
        let mse = sum_sq / n_components as f64;
        let mae = sum_abs / n_components as f64 * target_denorm;
        if !mse.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        log.push(EpochLoss {
            epoch,
            split: Split::Train,
            mse,
            mae,
        });
    }
    Ok(log)
}
