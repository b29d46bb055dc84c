use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{batch_loss, compute_gradients, Example, TransformerModel};
use crate::channel::derive_seed;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_peak: f64,
    pub warmup_fraction: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr_peak: 1e-3,
            warmup_fraction: 0.05,
            max_epochs: 350,
            early_stop_patience: 25,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "warmup fraction {} outside (0, 1)",
                self.warmup_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig(format!(
                "validation fraction {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        if self.max_epochs == 0 || !(self.lr_peak > 0.0) {
            return Err(Error::InvalidConfig(
                "need at least one epoch and a positive learning rate".into(),
            ));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `lr_peak` over the first `warmup_fraction` of
/// steps, then linear decay to 0 at `total_steps`.
pub fn learning_rate(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let warmup = ((cfg.warmup_fraction * total_steps as f64).round() as usize).max(1);
    if step < warmup {
        cfg.lr_peak * step as f64 / warmup as f64
    } else if step >= total_steps {
        0.0
    } else {
        cfg.lr_peak * (total_steps - step) as f64 / (total_steps - warmup).max(1) as f64
    }
}

/// Adam state, one moment buffer per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: i32,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    pub fn new(model: &TransformerModel, cfg: &TrainConfig) -> Self {
        let shapes: Vec<usize> = model.tensors().iter().map(|(_, t)| t.len()).collect();
        Self {
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            steps: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    pub fn step(&mut self, model: &mut TransformerModel, grads: &TransformerModel, lr: f64) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        let grads = grads.tensors();
        for (((_, params), (_, g)), (m, v)) in model
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for k in 0..params.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                params[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: TransformerModel,
    /// Epoch 0 is the untrained model (eval-mode losses).
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Deterministic train/validation split.
pub fn split_indices(n: usize, validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5e11])));
    let n_val = ((n as f64) * validation_fraction).round() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

pub fn train(model: TransformerModel, examples: &[Example], cfg: &TrainConfig) -> Result<TrainedModel> {
    train_with_progress(model, examples, cfg, |_| {})
}

/// Adam with warmup/decay, early stopping on validation loss; returns the
/// parameters of the best validation epoch.
pub fn train_with_progress(
    mut model: TransformerModel,
    examples: &[Example],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainedModel> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let (train_idx, val_idx) = split_indices(examples.len(), cfg.validation_fraction, cfg.seed);
    let train_set: Vec<&Example> = train_idx.iter().map(|&i| &examples[i]).collect();
    let val_set: Vec<&Example> = val_idx.iter().map(|&i| &examples[i]).collect();
    let monitor = if val_set.is_empty() { &train_set } else { &val_set };

    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.max_epochs;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1]));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2]));
    let mut adam = Adam::new(&model, cfg);

    let initial = EpochRecord {
        epoch: 0,
        train_loss: batch_loss(&model, &train_set)?,
        val_loss: batch_loss(&model, monitor)?,
        lr: 0.0,
    };
    progress(&initial);
    let mut best = (initial.val_loss, 0, model.clone());
    let mut history = vec![initial];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut running = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| train_set[i]).collect();
            let (loss, grads) = compute_gradients(&model, &batch, Some(&mut dropout_rng as &mut dyn RngCore))?;
            lr = learning_rate(step, total_steps, cfg);
            adam.step(&mut model, &grads, lr);
            running += loss * batch.len() as f64;
            step += 1;
        }
        let record = EpochRecord {
            epoch,
            train_loss: running / train_set.len() as f64,
            val_loss: batch_loss(&model, monitor)?,
            lr,
        };
        progress(&record);
        if record.val_loss < best.0 {
            best = (record.val_loss, epoch, model.clone());
        }
        history.push(record);
        if epoch - best.1 >= cfg.early_stop_patience {
            break;
        }
    }
    Ok(TrainedModel {
        model: best.2,
        history,
        best_epoch: best.1,
    })
}
