use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    adam_step, lr_at, Checkpoint, EarlyStopping, EpochRecord, OptimizerState, StopVerdict, TrainConfig, TrainError,
    TrainHistory, TrainResult,
};
use crate::data::{stack_batch, LabeledWindow};
use crate::model::{self, LossParts, ModelConfig, ModelError};
use crate::nn::{KernelError, Mode};
use crate::Params;

const EVAL_BATCH: usize = 64;
const DROPOUT_SALT: u64 = 0xd20f;

/// Where a training run begins.
#[derive(Debug, Clone)]
pub struct TrainStart {
    pub params: Params,
    pub optimizer: Option<OptimizerState>,
    /// Epochs already completed.
    pub epoch: usize,
    pub history: TrainHistory,
}

impl TrainStart {
    pub fn fresh(params: Params) -> Self {
        Self {
            params,
            optimizer: None,
            epoch: 0,
            history: TrainHistory::default(),
        }
    }

    /// Continue a saved run from its kept parameters and optimizer state.
    pub fn resume(checkpoint: &Checkpoint) -> Self {
        Self {
            params: checkpoint.params.clone(),
            optimizer: checkpoint.optimizer.clone(),
            epoch: checkpoint.epoch,
            history: checkpoint.history.clone(),
        }
    }
}

/// Mean loss and head metrics over a split, eval mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub loss: LossParts,
    pub accuracy: Option<f64>,
    pub mae: Option<f64>,
}

pub fn evaluate_loss(params: &Params, config: &ModelConfig, windows: &[LabeledWindow]) -> TrainResult<EvalSummary> {
    if windows.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let mut loss = LossParts::default();
    let (mut correct, mut abs_err) = (0usize, 0.0f64);
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    for chunk in windows.chunks(EVAL_BATCH) {
        let (x, labels, targets) = stack_batch(chunk)?;
        let out = model::forward_batch(params, config, &x, Mode::Eval, false, &mut rng)?;
        let (parts, _) = model::batch_loss(&out, &labels, &targets, config)?;
        let w = chunk.len() as f64;
        loss.total += parts.total * w;
        loss.activity += parts.activity * w;
        loss.resistance += parts.resistance * w;
        if let Some(p) = &out.probs {
            let c = p.shape()[1];
            for (row, &label) in p.data().chunks_exact(c).zip(&labels) {
                let arg = row
                    .iter()
                    .enumerate()
                    .fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
                correct += usize::from(arg == label);
            }
        }
        if let Some(r) = &out.resistance {
            abs_err += r
                .iter()
                .zip(&targets)
                .map(|(&p, &t)| (p.clamp(0.0, 1.0) - t).abs() as f64)
                .sum::<f64>();
        }
    }
    let n = windows.len() as f64;
    loss.total /= n;
    loss.activity /= n;
    loss.resistance /= n;
    Ok(EvalSummary {
        loss,
        accuracy: config.has_activity_head().then(|| correct as f64 / n),
        mae: config.has_resistance_head().then(|| abs_err / n),
    })
}

/// The model config actually trained: dropout and loss weights come from
/// the training config.
pub fn effective_config(model_cfg: &ModelConfig, cfg: &TrainConfig) -> ModelConfig {
    ModelConfig {
        dropout_rate: cfg.dropout,
        loss_alpha: cfg.alpha,
        loss_beta: cfg.beta,
        ..model_cfg.clone()
    }
}

fn is_divergence(e: &TrainError) -> bool {
    matches!(
        e,
        TrainError::NonFiniteGradient { .. } | TrainError::Model(ModelError::Kernel(KernelError::NonFinite { .. }))
    )
}

fn is_head(name: &str) -> bool {
    name.starts_with("activity_head.") || name.starts_with("resistance_head.")
}

struct StepOutcome {
    loss: LossParts,
}

fn train_step(
    params: &mut Params,
    opt: &mut OptimizerState,
    config: &ModelConfig,
    cfg: &TrainConfig,
    batch: &[&LabeledWindow],
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> TrainResult<StepOutcome> {
    let (x, labels, targets) = stack_batch(batch.iter().copied())?;
    let out = model::forward_batch(params, config, &x, Mode::Train, true, rng)?;
    let (loss, og) = model::batch_loss(&out, &labels, &targets, config)?;
    if !loss.total.is_finite() {
        return Ok(StepOutcome { loss });
    }
    let tape = out.tape.as_ref().expect("recorded tape");
    let mut grads = model::backward_batch(params, config, tape, og.d_logits.as_ref(), og.d_resistance.as_deref())?;
    if cfg.freeze_backbone {
        grads = grads
            .iter()
            .filter(|(n, _)| is_head(n))
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
    } else {
        model::apply_bn_updates(params, &out.bn_updates)?;
    }
    adam_step(params, &grads, opt, lr, cfg)?;
    Ok(StepOutcome { loss })
}

fn checkpoint_of(
    params: Params,
    config: &ModelConfig,
    cfg: &TrainConfig,
    opt: &OptimizerState,
    epoch: usize,
    history: &TrainHistory,
) -> Checkpoint {
    Checkpoint {
        optimizer: Some(opt.clone()),
        epoch,
        history: history.clone(),
        ..Checkpoint::new(params, config.clone(), cfg.clone())
    }
}

/// Trains from freshly initialized parameters (seeded by `cfg.seed`).
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &[LabeledWindow],
    val_set: &[LabeledWindow],
) -> TrainResult<(Checkpoint, TrainHistory)> {
    let params = model::build_model(&effective_config(model_cfg, cfg), cfg.seed)?;
    train_from(
        TrainStart::fresh(params),
        model_cfg,
        cfg,
        train_set,
        val_set,
        &mut |_| {},
    )
}

/// The epoch loop. Each epoch shuffles with `seed + epoch`, steps Adam over
/// the batches, validates, and keeps the parameters with the lowest
/// validation loss. `on_epoch` sees every record as it is produced.
pub fn train_from(
    start: TrainStart,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &[LabeledWindow],
    val_set: &[LabeledWindow],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> TrainResult<(Checkpoint, TrainHistory)> {
    cfg.validate()?;
    let config = effective_config(model_cfg, cfg);
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let TrainStart {
        mut params,
        optimizer,
        epoch: first_epoch,
        mut history,
    } = start;
    let mut opt = optimizer.unwrap_or_else(|| OptimizerState::new(&params));
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut stopped = false;
    for r in &history.records {
        stopped = stopper.update(r.val_loss.total) == StopVerdict::Stop;
    }
    let mut best = params.clone();
    let mut completed = first_epoch;
    let order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in first_epoch..cfg.epochs {
        if stopped || history.stopped_early {
            break;
        }
        let started = Instant::now();
        let lr = lr_at(epoch, cfg);
        let mut idx = order.clone();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64)));
        let mut dropout_rng = ChaCha8Rng::seed_from_u64((cfg.seed ^ DROPOUT_SALT).wrapping_add(epoch as u64));
        let mut sum = LossParts::default();
        let mut seen = 0usize;
        for chunk in idx.chunks(cfg.batch_size) {
            if chunk.len() < 2 && seen > 0 {
                continue;
            }
            let batch: Vec<&LabeledWindow> = chunk.iter().map(|&i| &train_set[i]).collect();
            let outcome = match train_step(&mut params, &mut opt, &config, cfg, &batch, lr, &mut dropout_rng) {
                Ok(step) if step.loss.total.is_finite() => Ok(step),
                Ok(step) => Err(format!("training loss {}", step.loss.total)),
                Err(e) if is_divergence(&e) => Err(e.to_string()),
                Err(e) => return Err(e),
            };
            let step = match outcome {
                Ok(step) => step,
                Err(reason) => {
                    history.stopped_early = true;
                    let checkpoint = checkpoint_of(best, &config, cfg, &opt, completed, &history);
                    return Err(TrainError::Diverged {
                        epoch,
                        reason,
                        checkpoint: Box::new(checkpoint),
                    });
                }
            };
            let w = chunk.len() as f64;
            sum.total += step.loss.total * w;
            sum.activity += step.loss.activity * w;
            sum.resistance += step.loss.resistance * w;
            seen += chunk.len();
        }
        let n = seen as f64;
        let val = evaluate_loss(&params, &config, val_set)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: LossParts {
                total: sum.total / n,
                activity: sum.activity / n,
                resistance: sum.resistance / n,
            },
            val_loss: val.loss,
            val_accuracy: val.accuracy,
            val_mae: val.mae,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.records.push(record);
        completed = epoch + 1;
        match stopper.update(val.loss.total) {
            StopVerdict::Improved => {
                best = params.clone();
                history.best_epoch = Some(epoch);
            }
            StopVerdict::Continue => {}
            StopVerdict::Stop => {
                history.stopped_early = true;
                stopped = true;
            }
        }
    }
    let checkpoint = checkpoint_of(best, &config, cfg, &opt, completed, &history);
    Ok((checkpoint, history))
}

/// Parameters for `target` taken from `source` wherever name and shape
/// agree; everything else freshly initialized with `seed`.
pub fn transfer_params(source: &Params, target: &ModelConfig, seed: u64) -> TrainResult<Params> {
    let mut params: Params = model::build_model(target, seed)?;
    for (name, t) in params.iter_mut() {
        if let Ok(src) = source.get(name) {
            if src.shape() == t.shape() {
                *t = src.clone();
            }
        }
    }
    Ok(params)
}

/// Continues from a pretrained checkpoint on a new dataset. The backbone is
/// copied; the activity head is re-initialized when the class count
/// changes, and the stem when the channel count does.
#[allow(clippy::too_many_arguments)]
pub fn fine_tune(
    source: &Checkpoint,
    num_classes: usize,
    input_channels: usize,
    input_length: usize,
    cfg: &TrainConfig,
    train_set: &[LabeledWindow],
    val_set: &[LabeledWindow],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> TrainResult<(Checkpoint, TrainHistory)> {
    let target = ModelConfig {
        num_classes,
        input_channels,
        input_length,
        ..source.model.clone()
    };
    let params = transfer_params(&source.params, &effective_config(&target, cfg), cfg.seed)?;
    train_from(TrainStart::fresh(params), &target, cfg, train_set, val_set, on_epoch)
}

/// Repeats one batch for `steps` Adam steps at a constant learning rate and
/// returns the loss before each step.
pub fn overfit_batch(
    params: &mut Params,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    batch: &[LabeledWindow],
    steps: usize,
) -> TrainResult<Vec<f64>> {
    cfg.validate()?;
    let config = effective_config(model_cfg, cfg);
    let refs: Vec<&LabeledWindow> = batch.iter().collect();
    let mut opt = OptimizerState::new(params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DROPOUT_SALT);
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let step = train_step(params, &mut opt, &config, cfg, &refs, cfg.base_lr, &mut rng)?;
        losses.push(step.loss.total);
        if !step.loss.total.is_finite() {
            break;
        }
    }
    Ok(losses)
}
