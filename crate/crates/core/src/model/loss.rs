//! Classification, regression and combined multi-task losses.
//!
//! Reductions accumulate in `f64` whatever the network's scalar type.

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::BatchOutput;
use super::ModelError;
use crate::scalar::Scalar;
use crate::tensor::TensorOf;

/// Probability floor inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// `−ln(max(probs[label], 1e-12))`, the one-hot cross-entropy.
pub fn cross_entropy<S: Scalar>(probs: &[S], label: usize) -> Result<f64, ModelError> {
    let p = probs
        .get(label)
        .ok_or(ModelError::Label {
            label,
            classes: probs.len(),
        })?
        .as_f64();
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Mean squared error.
pub fn mse<S: Scalar>(preds: &[S], targets: &[S]) -> Result<f64, ModelError> {
    if preds.len() != targets.len() {
        return Err(ModelError::Shape(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(ModelError::Shape("mse over zero samples".into()));
    }
    let sum: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p.as_f64() - t.as_f64()).powi(2))
        .sum();
    Ok(sum / preds.len() as f64)
}

/// Weighted loss and its two components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub activity: f64,
    pub resistance: f64,
}

impl LossParts {
    fn combine(alpha: f64, beta: f64, activity: f64, resistance: f64) -> Self {
        Self {
            total: alpha * activity + beta * resistance,
            activity,
            resistance,
        }
    }
}

fn check_weights(alpha: f64, beta: f64) -> Result<(), ModelError> {
    if !(alpha >= 0.0 && beta >= 0.0) || alpha + beta <= 0.0 {
        return Err(ModelError::InvalidConfig(format!(
            "loss weights alpha={alpha}, beta={beta}"
        )));
    }
    Ok(())
}

/// `alpha · cross_entropy + beta · squared_error` for one sample.
pub fn mtl_loss<S: Scalar>(
    activity_probs: &[S],
    label: usize,
    resistance_pred: S,
    resistance_target: S,
    alpha: f64,
    beta: f64,
) -> Result<LossParts, ModelError> {
    check_weights(alpha, beta)?;
    let ce = cross_entropy(activity_probs, label)?;
    let se = mse(&[resistance_pred], &[resistance_target])?;
    Ok(LossParts::combine(alpha, beta, ce, se))
}

/// Loss gradients w.r.t. the network outputs.
#[derive(Debug, Clone)]
pub struct OutputGrads<S> {
    pub d_logits: Option<TensorOf<S>>,
    pub d_resistance: Option<Vec<S>>,
}

/// Batch loss (mean cross-entropy, MSE) and its gradients. Heads absent
/// from the config contribute zero.
pub fn batch_loss<S: Scalar>(
    output: &BatchOutput<S>,
    labels: &[usize],
    targets: &[S],
    config: &ModelConfig,
) -> Result<(LossParts, OutputGrads<S>), ModelError> {
    let (alpha, beta) = (config.loss_alpha, config.loss_beta);
    check_weights(alpha, beta)?;
    let n = labels.len();
    if n == 0 || targets.len() != n {
        return Err(ModelError::Shape(format!("{n} labels vs {} targets", targets.len())));
    }
    let mut grads = OutputGrads {
        d_logits: None,
        d_resistance: None,
    };
    let mut activity = 0.0;
    if let Some(probs) = &output.probs {
        let c = probs.shape()[1];
        if probs.shape()[0] != n {
            return Err(ModelError::Shape(format!(
                "{} predictions for {n} labels",
                probs.shape()[0]
            )));
        }
        let scale = S::lit(alpha / n as f64);
        let mut d = probs.data().to_vec();
        for (b, (row, &label)) in probs.data().chunks_exact(c).zip(labels).enumerate() {
            activity += cross_entropy(row, label)?;
            d[b * c + label] -= S::one();
        }
        d.iter_mut().for_each(|v| *v *= scale);
        activity /= n as f64;
        grads.d_logits = Some(TensorOf::new(probs.shape().to_vec(), d).expect("probs shape"));
    }
    let mut resistance = 0.0;
    if let Some(pred) = &output.resistance {
        resistance = mse(pred, targets)?;
        let scale = S::lit(2.0 * beta / n as f64);
        grads.d_resistance = Some(pred.iter().zip(targets).map(|(&p, &t)| (p - t) * scale).collect());
    }
    let alpha = if output.probs.is_some() { alpha } else { 0.0 };
    let beta = if output.resistance.is_some() { beta } else { 0.0 };
    Ok((LossParts::combine(alpha, beta, activity, resistance), grads))
}
