//! Optimization: Adam on weighted cross-entropy with a reduce-on-plateau
//! learning rate and validation-based early stopping.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassWeights, Dataset, Part};
use crate::model::{Network, TileBank, make_batch};
use crate::nn::{Adam, ParamStore, Tape, Tensor, clip_global_norm};
use crate::{Error, Result};

/// Samples per gradient shard. Shards are processed in parallel and their
/// gradients summed in a fixed order.
const SHARD: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub lr_init: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub lr_min: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Fixed weights; inverse-frequency weights from the training part when
    /// absent.
    pub class_weights: Option<ClassWeights>,
    /// Global-norm gradient clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Smallest decrease in validation loss that counts as improvement.
    pub min_improvement: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            early_stop_patience: 10,
            lr_init: 1e-3,
            lr_factor: 0.9,
            lr_patience: 5,
            lr_min: 1e-6,
            batch_size: 256,
            seed: 0,
            class_weights: None,
            grad_clip: Some(5.0),
            min_improvement: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::validation(m));
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad("lr_factor must lie in (0, 1)");
        }
        if !(self.lr_min < self.lr_init && self.lr_min > 0.0) {
            return bad("lr_min must be positive and below lr_init");
        }
        if self.lr_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be at least 1");
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return bad("max_epochs and batch_size must be positive");
        }
        if let Some(w) = self.class_weights {
            if !(w.w0 > 0.0 && w.w1 > 0.0) {
                return bad("class weights must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainHistory {
    /// One JSON object per epoch.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for e in &self.epochs {
            writeln!(f, "{}", serde_json::to_string(e)?).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Vec<EpochRecord>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| Ok(serde_json::from_str(l)?))
            .collect()
    }
}

/// New learning rate after an epoch: reduced by `lr_factor` (floored at
/// `lr_min`) once `epochs_without_improvement` reaches `lr_patience`.
/// The second value tells the caller to reset its plateau counter.
pub fn lr_step(cfg: &TrainConfig, current_lr: f64, epochs_without_improvement: usize) -> (f64, bool) {
    if epochs_without_improvement >= cfg.lr_patience {
        ((current_lr * cfg.lr_factor).max(cfg.lr_min), true)
    } else {
        (current_lr, false)
    }
}

/// True iff the best loss has not improved (by at least `min_improvement`)
/// during the last `patience` epochs.
pub fn early_stop(val_losses: &[f64], patience: usize, min_improvement: f64) -> bool {
    let mut best = f64::INFINITY;
    let mut since = 0;
    for &l in val_losses {
        if l < best - min_improvement {
            best = l;
            since = 0;
        } else {
            since += 1;
        }
    }
    since >= patience
}

/// What the loop drives. Implemented by [`NetworkTarget`] and by scripted
/// stand-ins in tests.
pub trait TrainTarget {
    type Snapshot;
    /// One pass over the training data; returns the mean training loss.
    fn train_epoch(&mut self, epoch: usize, lr: f64, rng: &mut ChaCha8Rng) -> Result<f64>;
    fn validate(&mut self) -> Result<f64>;
    fn snapshot(&self) -> Self::Snapshot;
}

/// Runs until early stopping or `max_epochs`; returns the snapshot taken at
/// the best validation loss.
pub fn train_loop<T: TrainTarget>(target: &mut T, cfg: &TrainConfig) -> Result<(T::Snapshot, TrainHistory)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lr = cfg.lr_init;
    let mut best: Option<(T::Snapshot, usize, f64)> = None;
    let mut plateau = 0;
    let mut vals = Vec::new();
    let mut epochs = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let train_loss = target.train_epoch(epoch, lr, &mut rng)?;
        let val_loss = target.validate()?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        log::info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {lr:.3e}");
        let best_loss = best.as_ref().map_or(f64::INFINITY, |b| b.2);
        if val_loss < best_loss - cfg.min_improvement {
            best = Some((target.snapshot(), epoch, val_loss));
            plateau = 0;
        } else {
            plateau += 1;
        }
        vals.push(val_loss);
        if early_stop(&vals, cfg.early_stop_patience, cfg.min_improvement) {
            log::info!("early stop after epoch {epoch}");
            break;
        }
        let (next, reset) = lr_step(cfg, lr, plateau);
        lr = next;
        if reset {
            plateau = 0;
        }
    }
    let (snap, best_epoch, best_val_loss) = best.expect("at least one epoch ran with a finite loss");
    Ok((snap, TrainHistory { epochs, best_epoch, best_val_loss }))
}

/// Trains a [`Network`] on the train/val parts of a dataset.
pub struct NetworkTarget<'a, N: Network> {
    pub net: N,
    pub ds: &'a Dataset,
    pub bank: &'a TileBank,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub weights: [f64; 2],
    pub batch_size: usize,
    pub grad_clip: Option<f64>,
    opt: Adam,
}

impl<'a, N: Network> NetworkTarget<'a, N> {
    pub fn new(net: N, ds: &'a Dataset, bank: &'a TileBank, cfg: &TrainConfig) -> Result<Self> {
        let train_idx = ds.indices(Part::Train);
        let val_idx = ds.indices(Part::Val);
        if train_idx.is_empty() || val_idx.is_empty() {
            return Err(Error::validation("training needs non-empty train and val parts"));
        }
        let weights = cfg.class_weights.unwrap_or(ds.class_weights).as_array();
        let opt = Adam::new(net.params());
        Ok(Self {
            net,
            ds,
            bank,
            train_idx,
            val_idx,
            weights,
            batch_size: cfg.batch_size,
            grad_clip: cfg.grad_clip,
            opt,
        })
    }
}

/// Loss (batch mean) and parameter gradients over `idx`, computed in
/// fixed-size shards in parallel. `seeds` enable dropout, one per shard.
pub fn loss_and_grads<N: Network + ?Sized>(
    net: &N,
    ds: &Dataset,
    bank: &TileBank,
    idx: &[usize],
    weights: [f64; 2],
    seeds: Option<&[u64]>,
) -> (f64, Vec<Tensor>) {
    let n = idx.len() as f64;
    let shards: Vec<&[usize]> = idx.chunks(SHARD).collect();
    let results: Vec<(f64, Vec<Tensor>)> = shards
        .par_iter()
        .enumerate()
        .map(|(i, chunk)| {
            let batch = make_batch(ds, bank, chunk);
            let mut tape = Tape::new();
            let mut rng = seeds.map(|s| ChaCha8Rng::seed_from_u64(s[i]));
            let z = net.logits(&mut tape, &batch, rng.as_mut());
            let l = tape.weighted_ce(z, &batch.labels, weights);
            let scaled = tape.scale(l, chunk.len() as f64 / n);
            let grads = tape.backward(scaled).for_params(&tape, net.params());
            (tape.value(scaled).item(), grads)
        })
        .collect();
    let mut iter = results.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        for (a, b) in grads.iter_mut().zip(&g) {
            a.add_assign(b);
        }
    }
    (loss, grads)
}

/// Mean weighted loss over `idx` in inference mode.
pub fn eval_loss<N: Network + ?Sized>(net: &N, ds: &Dataset, bank: &TileBank, idx: &[usize], weights: [f64; 2]) -> f64 {
    let total: f64 = idx
        .par_chunks(SHARD)
        .map(|chunk| {
            let batch = make_batch(ds, bank, chunk);
            let mut tape = Tape::new();
            let z = net.logits(&mut tape, &batch, None);
            crate::nn::weighted_ce_from_logits(tape.value(z).data(), &batch.labels, weights) * chunk.len() as f64
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    total / idx.len() as f64
}

/// Class probabilities for `idx` in inference mode.
pub fn predict_indices<N: Network + ?Sized>(net: &N, ds: &Dataset, bank: &TileBank, idx: &[usize]) -> Vec<[f64; 2]> {
    idx.par_chunks(SHARD)
        .map(|chunk| net.predict(&make_batch(ds, bank, chunk)))
        .collect::<Vec<_>>()
        .concat()
}

impl<N: Network> TrainTarget for NetworkTarget<'_, N> {
    type Snapshot = ParamStore;

    fn train_epoch(&mut self, epoch: usize, lr: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
        self.train_idx.shuffle(rng);
        let mut total = 0.0;
        for (bi, batch) in self.train_idx.chunks(self.batch_size).enumerate() {
            let seeds: Vec<u64> = (0..batch.len().div_ceil(SHARD)).map(|_| rng.next_u64()).collect();
            let (loss, mut grads) = loss_and_grads(&self.net, self.ds, self.bank, batch, self.weights, Some(&seeds));
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            if let Some(c) = self.grad_clip {
                clip_global_norm(&mut grads, c);
            }
            self.opt.step(self.net.params_mut(), &grads, lr);
            total += loss * batch.len() as f64;
        }
        Ok(total / self.train_idx.len() as f64)
    }

    fn validate(&mut self) -> Result<f64> {
        Ok(eval_loss(&self.net, self.ds, self.bank, &self.val_idx, self.weights))
    }

    fn snapshot(&self) -> ParamStore {
        self.net.params().clone()
    }
}

/// Trains `net` and leaves the best parameters in it.
pub fn train_network<N: Network>(
    net: N,
    ds: &Dataset,
    bank: &TileBank,
    cfg: &TrainConfig,
) -> Result<(N, TrainHistory)> {
    let mut target = NetworkTarget::new(net, ds, bank, cfg)?;
    let (best, history) = train_loop(&mut target, cfg)?;
    let mut net = target.net;
    net.params_mut().load_values(&best)?;
    Ok((net, history))
}
