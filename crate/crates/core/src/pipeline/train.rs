//! Mini-batch Adam training with validation-based early stopping.

use std::time::Instant;

use crate::data::{PreparedData, Split, WindowSample};
use crate::decoder::decoder_digest;
use crate::error::{Result, SeedError};
use crate::model::SeedModel;
use crate::numerics::{adam_step, AdamState, SeedRng, Tape};

use super::config::OptimConfig;
use super::eval::evaluate_windows;

/// Early-stopping bookkeeping.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_since_improvement: usize,
    pub best_snapshot: Vec<Vec<f64>>,
}

impl TrainState {
    pub fn new(initial: Vec<Vec<f64>>) -> Self {
        TrainState {
            epoch: 0,
            best_epoch: 0,
            best_val_loss: f64::INFINITY,
            epochs_since_improvement: 0,
            best_snapshot: initial,
        }
    }

    /// Records one finished epoch; snapshots `params` on strict improvement.
    pub fn observe(
        &mut self,
        epoch: usize,
        val_loss: f64,
        params: impl FnOnce() -> Vec<Vec<f64>>,
    ) -> bool {
        self.epoch = epoch;
        if val_loss < self.best_val_loss {
            self.best_val_loss = val_loss;
            self.best_epoch = epoch;
            self.epochs_since_improvement = 0;
            self.best_snapshot = params();
            true
        } else {
            self.epochs_since_improvement += 1;
            false
        }
    }

    pub fn should_stop(&self, patience: usize) -> bool {
        self.epochs_since_improvement >= patience
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters restored to the best validation epoch.
    pub model: SeedModel,
    pub state: TrainState,
    pub log: Vec<EpochLog>,
    pub train_time_s: f64,
}

/// Trains `model` on the train split, early-stopping on val MSE.
///
/// Batches are drawn from a per-epoch shuffle seeded by `seed`, so a rerun
/// with the same inputs repeats every update bit for bit.
pub fn train_model(
    mut model: SeedModel,
    data: &PreparedData,
    optim: &OptimConfig,
    stride: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    let (l, h) = (model.config.seq_len(), model.config.horizon());
    let train = data.windows(Split::Train, l, h, stride)?;
    let val = data.windows(Split::Val, l, h, stride)?;
    train_on_windows(&mut model, &train, &val, optim, seed).map(|(state, log, t)| TrainOutcome {
        model,
        state,
        log,
        train_time_s: t,
    })
}

pub fn train_on_windows(
    model: &mut SeedModel,
    train: &[WindowSample],
    val: &[WindowSample],
    optim: &OptimConfig,
    seed: u64,
) -> Result<(TrainState, Vec<EpochLog>, f64)> {
    let start = Instant::now();
    let digest = decoder_digest(&model.store);
    let mut adam = AdamState::new(&model.store, optim.adam);
    let mut rng = SeedRng::new(seed ^ 0x7A11_5EED);
    let mut state = TrainState::new(model.store.snapshot());
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=optim.max_epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for idx in order.chunks(optim.batch_size) {
            let batch: Vec<&WindowSample> = idx.iter().map(|&i| &train[i]).collect();
            let mut tape = Tape::new();
            let loss = model.loss(&mut tape, &batch)?;
            let value = tape.scalar_value(loss);
            if !value.is_finite() {
                return Err(SeedError::Divergence { epoch, loss: value });
            }
            total += value * batch.len() as f64;
            tape.backward(loss)?;
            model.store.zero_grads();
            model.store.accumulate_grads(&tape);
            model.store.fill_missing_grads();
            adam_step(&mut model.store, &mut adam)?;
        }
        let train_loss = total / train.len() as f64;
        let val_loss = evaluate_windows(model, val, None)?.mse;
        if !val_loss.is_finite() {
            return Err(SeedError::Divergence {
                epoch,
                loss: val_loss,
            });
        }
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });
        let store = &model.store;
        state.observe(epoch, val_loss, || store.snapshot());
        if state.should_stop(optim.patience) {
            log::info!(
                "early stop after epoch {epoch}; best epoch {}",
                state.best_epoch
            );
            break;
        }
    }
    model.store.restore(&state.best_snapshot);
    model.store.zero_grads();
    if decoder_digest(&model.store) != digest {
        return Err(SeedError::Contract(
            "decoder parameters changed during training".into(),
        ));
    }
    Ok((state, log, start.elapsed().as_secs_f64()))
}

/// Renders the per-epoch log as CSV.
pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for e in log {
        s.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best_loss_non_increasing_and_patience() {
        let mut s = TrainState::new(vec![vec![0.0]]);
        let losses = [3.0, 2.0, 2.5, 2.0, 1.0, 4.0, 5.0];
        let mut best = f64::INFINITY;
        for (i, &v) in losses.iter().enumerate() {
            s.observe(i + 1, v, || vec![vec![v]]);
            assert!(s.best_val_loss <= best);
            best = s.best_val_loss;
        }
        assert_eq!(s.best_epoch, 5);
        assert_eq!(s.best_snapshot, vec![vec![1.0]]);
        assert_eq!(s.epochs_since_improvement, 2);
        assert!(s.should_stop(2));
        assert!(!s.should_stop(3));
    }
}
