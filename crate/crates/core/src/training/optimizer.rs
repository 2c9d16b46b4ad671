use super::{TrainConfig, TrainError, TrainResult};
use crate::model::{decays, is_buffer};
use crate::Params;

/// Adam moments for every trainable tensor, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Params,
    pub v: Params,
}

impl OptimizerState {
    pub fn new(params: &Params) -> Self {
        let zeros: Params = params
            .iter()
            .filter(|(n, _)| !is_buffer(n))
            .map(|(n, t)| (n.to_string(), t.map(|_| 0.0)))
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One Adam step over the tensors present in `grads`.
///
/// Weights (`*.weight`, `*.kernels`) first decay by `1 − lr·weight_decay`;
/// biases and BN affine terms do not. Any non-finite gradient aborts before
/// anything is modified.
pub fn adam_step(
    params: &mut Params,
    grads: &Params,
    state: &mut OptimizerState,
    lr: f64,
    cfg: &TrainConfig,
) -> TrainResult<()> {
    for (name, g) in grads.iter() {
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient {
                name: name.to_string(),
                step: state.step + 1,
            });
        }
        let p = params.get(name)?;
        if p.shape() != g.shape() {
            return Err(crate::model::ModelError::Shape(format!(
                "gradient for `{name}` is {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            ))
            .into());
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, g) in grads.iter() {
        if !state.m.contains(name) {
            state.m.insert(name, g.map(|_| 0.0));
            state.v.insert(name, g.map(|_| 0.0));
        }
        let decay = if decays(name) { 1.0 - lr * cfg.weight_decay } else { 1.0 };
        let p = params.get_mut(name)?.data_mut();
        let m = state.m.get_mut(name)?.data_mut();
        let v = state.v.get_mut(name)?.data_mut();
        for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
            let g = g as f64;
            let mi = b1 * *m as f64 + (1.0 - b1) * g;
            let vi = b2 * *v as f64 + (1.0 - b2) * g * g;
            *m = mi as f32;
            *v = vi as f32;
            let update = lr * (mi / c1) / ((vi / c2).sqrt() + cfg.adam_eps);
            *p = (*p as f64 * decay - update) as f32;
        }
    }
    Ok(())
}
