//! Adam with decoupled weight decay, the step schedule, the epoch loop with
//! early stopping, fine-tuning, and checkpoint files.

mod checkpoint;
mod optimizer;
mod trainer;

use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use optimizer::{adam_step, OptimizerState};
pub use trainer::{
    effective_config, evaluate_loss, fine_tune, overfit_batch, train, train_from, transfer_params, EvalSummary,
    TrainStart,
};

use crate::data::DataError;
use crate::model::{LossParts, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite gradient for `{name}` at optimizer step {step}")]
    NonFiniteGradient { name: String, step: u64 },
    #[error("training diverged in epoch {epoch} ({reason}); last good checkpoint attached")]
    Diverged {
        epoch: usize,
        reason: String,
        checkpoint: Box<Checkpoint>,
    },
    #[error("empty {0} split")]
    EmptySplit(&'static str),
}

pub type TrainResult<T> = Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Overrides the model's dropout rate while training.
    pub dropout: f64,
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Only the heads are updated.
    pub freeze_backbone: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.001,
            lr_decay_factor: 0.1,
            lr_decay_every: 10,
            batch_size: 32,
            weight_decay: 0.0005,
            dropout: 0.5,
            epochs: 50,
            early_stop_patience: 5,
            seed: 0,
            alpha: 1.0,
            beta: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            freeze_backbone: false,
        }
    }
}

impl TrainConfig {
    /// Defaults for fine-tuning a pretrained checkpoint (30 epochs).
    pub fn fine_tune() -> Self {
        Self {
            epochs: 30,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> TrainResult<()> {
        let positive = [
            ("base_lr", self.base_lr),
            ("lr_decay_factor", self.lr_decay_factor),
            ("adam_eps", self.adam_eps),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(TrainError::InvalidConfig(format!("{name} must be positive, got {v}")));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(TrainError::InvalidConfig("weight_decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(TrainError::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.early_stop_patience == 0 || self.lr_decay_every == 0 {
            return Err(TrainError::InvalidConfig(
                "batch_size, patience and lr_decay_every must be ≥ 1".into(),
            ));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || self.alpha + self.beta <= 0.0 {
            return Err(TrainError::InvalidConfig(
                "loss weights must be non-negative, not both zero".into(),
            ));
        }
        Ok(())
    }
}

/// Step schedule: `base_lr · decay^⌊epoch / every⌋`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.base_lr * cfg.lr_decay_factor.powi((epoch / cfg.lr_decay_every) as i32)
}

/// One row of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: LossParts,
    pub val_loss: LossParts,
    pub val_accuracy: Option<f64>,
    pub val_mae: Option<f64>,
    /// Wall-clock time of the epoch.
    pub seconds: f64,
}

/// Equality ignores `seconds`: wall-clock time is not a function of the seed.
impl PartialEq for EpochRecord {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.lr == other.lr
            && self.train_loss == other.train_loss
            && self.val_loss == other.val_loss
            && self.val_accuracy == other.val_accuracy
            && self.val_mae == other.val_mae
    }
}

impl EpochRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("epoch record serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.best_epoch
            .and_then(|e| self.records.iter().find(|r| r.epoch == e))
            .map(|r| r.val_loss.total)
    }

    pub fn to_json_lines(&self) -> String {
        self.records.iter().map(|r| r.to_json_line() + "\n").collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopVerdict {
    Improved,
    Continue,
    Stop,
}

/// Patience counter over validation losses; lower is better.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn update(&mut self, val_loss: f64) -> StopVerdict {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_best = 0;
            StopVerdict::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                StopVerdict::Stop
            } else {
                StopVerdict::Continue
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 0.001);
        assert!((lr_at(10, &cfg) - 1e-4).abs() < 1e-18);
        assert!((lr_at(25, &cfg) - 1e-5).abs() < 1e-18);
        assert!((lr_at(20, &cfg) - 1e-5).abs() < 1e-18);
        assert_eq!(lr_at(9, &cfg), 0.001);
    }

    #[test]
    fn patience_five_stops_after_six_epochs() {
        let mut stop = EarlyStopping::new(5);
        let verdicts: Vec<_> = (0..10)
            .map(|e| stop.update(1.0 + e as f64))
            .take_while(|v| *v != StopVerdict::Stop)
            .collect();
        assert_eq!(verdicts.len() + 1, 6);
        assert_eq!(verdicts[0], StopVerdict::Improved);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                base_lr: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                early_stop_patience: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                dropout: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                alpha: 0.0,
                beta: 0.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
