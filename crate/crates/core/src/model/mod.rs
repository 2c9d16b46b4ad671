//! The multi-task network: backbone, squeeze-and-excitation, heads, losses.
//!
//! Parameters live in a flat name → tensor map ([`ModelParams`]) whose name
//! set is fully determined by the [`ModelConfig`].

mod config;
mod flops;
mod loss;
mod network;
mod params;
mod se;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use config::{Backbone, BneckSpec, ModelConfig, Task};
pub use flops::{flops_estimate, FlopsEstimate};
pub use loss::{batch_loss, cross_entropy, mse, mtl_loss, LossParts, OutputGrads, PROB_FLOOR};
pub use network::{apply_bn_updates, backward_batch, features_batch, forward_batch, BatchOutput, BnUpdate, Tape};
pub use params::{build_model, decays, is_buffer, reinit_tensor, ModelParams};
pub use se::{se_backward, se_block, se_forward, SeCache, SeWeights};

use crate::nn::{KernelError, Mode};
use crate::scalar::Scalar;
use crate::tensor::TensorOf;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
}

/// Output of the two heads for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction<S> {
    /// Softmax over activity classes; absent for a resistance-only model.
    pub activity_probs: Option<Vec<S>>,
    /// Raw regression output; clamp to `[0, 1]` for reporting.
    pub resistance: Option<S>,
}

impl<S: Scalar> Prediction<S> {
    pub fn activity(&self) -> Option<usize> {
        self.activity_probs.as_ref().map(|p| {
            p.iter()
                .enumerate()
                .fold(
                    (0, S::neg_infinity()),
                    |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                )
                .0
        })
    }

    pub fn resistance_clamped(&self) -> Option<S> {
        self.resistance.map(|r| r.max(S::zero()).min(S::one()))
    }
}

fn as_batch<S: Scalar>(window: &TensorOf<S>) -> Result<TensorOf<S>, ModelError> {
    match *window.shape() {
        [c, t] => Ok(window.clone().reshape(&[1, c, t]).expect("same element count")),
        ref s => Err(ModelError::Shape(format!("window must be [C, T], got {s:?}"))),
    }
}

/// Backbone features `[feature_dim]` for one `[C, T]` window.
pub fn extract_features<S: Scalar>(
    window: &TensorOf<S>,
    params: &ModelParams<S>,
    config: &ModelConfig,
    mode: Mode,
) -> Result<TensorOf<S>, ModelError> {
    let f = features_batch(params, config, &as_batch(window)?, mode)?;
    Ok(f.reshape(&[config.feature_dim]).expect("single window"))
}

/// Both heads for one `[C, T]` window.
pub fn predict<S: Scalar, R: Rng + ?Sized>(
    window: &TensorOf<S>,
    params: &ModelParams<S>,
    config: &ModelConfig,
    mode: Mode,
    dropout_rng: &mut R,
) -> Result<Prediction<S>, ModelError> {
    let out = forward_batch(params, config, &as_batch(window)?, mode, false, dropout_rng)?;
    Ok(Prediction {
        activity_probs: out.probs.map(TensorOf::into_data),
        resistance: out.resistance.map(|r| r[0]),
    })
}

/// Eval-mode predictions for a `[B, C, T]` batch. Identical, bit for bit, to
/// calling [`predict`] on each window.
pub fn predict_batch<S: Scalar>(
    batch: &TensorOf<S>,
    params: &ModelParams<S>,
    config: &ModelConfig,
) -> Result<Vec<Prediction<S>>, ModelError> {
    let out = forward_batch(
        params,
        config,
        batch,
        Mode::Eval,
        false,
        &mut rand::rngs::mock::StepRng::new(0, 0),
    )?;
    let n = batch.shape()[0];
    let probs: Vec<Option<Vec<S>>> = match out.probs {
        Some(p) => p
            .data()
            .chunks_exact(config.num_classes)
            .map(|r| Some(r.to_vec()))
            .collect(),
        None => vec![None; n],
    };
    Ok(probs
        .into_iter()
        .enumerate()
        .map(|(i, activity_probs)| Prediction {
            activity_probs,
            resistance: out.resistance.as_ref().map(|r| r[i]),
        })
        .collect())
}
