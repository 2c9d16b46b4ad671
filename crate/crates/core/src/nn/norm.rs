use super::{batch_dims, finite, invalid, shape_err, KernelResult, LayerGrads, Mode};
use crate::scalar::Scalar;
use crate::tensor::TensorOf;

/// Affine parameters and running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<S> {
    pub gamma: TensorOf<S>,
    pub beta: TensorOf<S>,
    pub running_mean: TensorOf<S>,
    pub running_var: TensorOf<S>,
    pub momentum: S,
    pub epsilon: S,
}

impl<S: Scalar> BatchNormState<S> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: TensorOf::full(&[channels], S::one()),
            beta: TensorOf::zeros(&[channels]),
            running_mean: TensorOf::zeros(&[channels]),
            running_var: TensorOf::full(&[channels], S::one()),
            momentum: S::lit(super::norm_defaults::MOMENTUM),
            epsilon: S::lit(super::norm_defaults::EPSILON),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Values saved by the train-mode forward pass for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchNormCache<S> {
    /// Normalized activations and per-channel `1/sqrt(var + eps)` from batch statistics.
    Batch {
        x_hat: TensorOf<S>,
        inv_std: Vec<S>,
        mean: Vec<S>,
        var: Vec<S>,
    },
    /// Eval mode: normalized activations under the running statistics.
    Running { x_hat: TensorOf<S>, inv_std: Vec<S> },
}

impl<S: Scalar> BatchNormCache<S> {
    pub fn batch_mean(&self) -> Option<&[S]> {
        match self {
            Self::Batch { mean, .. } => Some(mean),
            Self::Running { .. } => None,
        }
    }

    /// Biased (population) batch variance.
    pub fn batch_var(&self) -> Option<&[S]> {
        match self {
            Self::Batch { var, .. } => Some(var),
            Self::Running { .. } => None,
        }
    }
}

fn check_affine<S: Scalar>(op: &'static str, c: usize, gamma: &TensorOf<S>, beta: &TensorOf<S>) -> KernelResult<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err(
            op,
            format!("gamma {:?} / beta {:?} for {c} channels", gamma.shape(), beta.shape()),
        ));
    }
    Ok(())
}

/// Normalizes each channel over `(B, T)` with the batch's own statistics.
/// Statistics are accumulated in `f64`.
pub fn batch_norm_train<S: Scalar>(
    x: &TensorOf<S>,
    gamma: &TensorOf<S>,
    beta: &TensorOf<S>,
    epsilon: S,
) -> KernelResult<(TensorOf<S>, BatchNormCache<S>)> {
    const OP: &str = "batch_norm";
    let (b, c, t) = batch_dims(OP, x)?;
    check_affine(OP, c, gamma, beta)?;
    if !(epsilon > S::zero()) {
        return Err(invalid(OP, "epsilon must be positive"));
    }
    let n = (b * t) as f64;
    let xd = x.data();
    let mut mean = vec![S::zero(); c];
    let mut var = vec![S::zero(); c];
    let mut inv_std = vec![S::zero(); c];
    for ci in 0..c {
        let rows = (0..b).map(|bi| &xd[(bi * c + ci) * t..][..t]);
        let m = rows.clone().flatten().map(|v| v.as_f64()).sum::<f64>() / n;
        let v = rows.flatten().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>() / n;
        mean[ci] = S::lit(m);
        var[ci] = S::lit(v);
        inv_std[ci] = S::lit(1.0 / (v + epsilon.as_f64()).sqrt());
    }
    let mut x_hat = vec![S::zero(); xd.len()];
    let mut out = vec![S::zero(); xd.len()];
    for bi in 0..b {
        for ci in 0..c {
            let off = (bi * c + ci) * t;
            let (g, be, m, s) = (gamma.data()[ci], beta.data()[ci], mean[ci], inv_std[ci]);
            for j in off..off + t {
                let h = (xd[j] - m) * s;
                x_hat[j] = h;
                out[j] = g * h + be;
            }
        }
    }
    let out = finite(OP, TensorOf::new(x.shape().to_vec(), out).expect("input shape"))?;
    let x_hat = TensorOf::new(x.shape().to_vec(), x_hat).expect("input shape");
    Ok((
        out,
        BatchNormCache::Batch {
            x_hat,
            inv_std,
            mean,
            var,
        },
    ))
}

/// Normalizes with fixed running statistics.
pub fn batch_norm_eval<S: Scalar>(
    x: &TensorOf<S>,
    gamma: &TensorOf<S>,
    beta: &TensorOf<S>,
    running_mean: &TensorOf<S>,
    running_var: &TensorOf<S>,
    epsilon: S,
) -> KernelResult<(TensorOf<S>, BatchNormCache<S>)> {
    const OP: &str = "batch_norm";
    let (b, c, t) = batch_dims(OP, x)?;
    check_affine(OP, c, gamma, beta)?;
    check_affine(OP, c, running_mean, running_var)?;
    if !(epsilon > S::zero()) {
        return Err(invalid(OP, "epsilon must be positive"));
    }
    let inv_std: Vec<S> = running_var
        .data()
        .iter()
        .map(|&v| S::one() / (v + epsilon).sqrt())
        .collect();
    let mut x_hat = x.data().to_vec();
    let mut out = x.data().to_vec();
    for bi in 0..b {
        for ci in 0..c {
            let (g, be, m, s) = (gamma.data()[ci], beta.data()[ci], running_mean.data()[ci], inv_std[ci]);
            let off = (bi * c + ci) * t;
            for (h, y) in x_hat[off..off + t].iter_mut().zip(&mut out[off..off + t]) {
                *h = (*h - m) * s;
                *y = g * *h + be;
            }
        }
    }
    let out = finite(OP, TensorOf::new(x.shape().to_vec(), out).expect("input shape"))?;
    let x_hat = TensorOf::new(x.shape().to_vec(), x_hat).expect("input shape");
    Ok((out, BatchNormCache::Running { x_hat, inv_std }))
}

/// Stateful batch norm: train mode normalizes with batch statistics and
/// folds them into the running estimates
/// (`new = (1 − momentum)·old + momentum·batch`, unbiased variance);
/// eval mode reads the running estimates only.
pub fn batch_norm<S: Scalar>(x: &TensorOf<S>, state: &mut BatchNormState<S>, mode: Mode) -> KernelResult<TensorOf<S>> {
    match mode {
        Mode::Eval => batch_norm_eval(
            x,
            &state.gamma,
            &state.beta,
            &state.running_mean,
            &state.running_var,
            state.epsilon,
        )
        .map(|(y, _)| y),
        Mode::Train => {
            let (b, c, t) = batch_dims("batch_norm", x)?;
            if state.running_mean.shape() != [c] || state.running_var.shape() != [c] {
                return Err(shape_err("batch_norm", "running statistics channel count"));
            }
            let (y, cache) = batch_norm_train(x, &state.gamma, &state.beta, state.epsilon)?;
            let n = b * t;
            let m = state.momentum;
            let keep = S::one() - m;
            let correction = if n > 1 {
                S::of_usize(n) / S::of_usize(n - 1)
            } else {
                S::one()
            };
            let (mean, var) = (cache.batch_mean().unwrap(), cache.batch_var().unwrap());
            for ci in 0..c {
                let rm = &mut state.running_mean.data_mut()[ci];
                *rm = keep * *rm + m * mean[ci];
                let rv = &mut state.running_var.data_mut()[ci];
                *rv = keep * *rv + m * var[ci] * correction;
            }
            Ok(y)
        }
    }
}

/// Gradients w.r.t. input, `"gamma"` and `"beta"`.
pub fn batch_norm_backward<S: Scalar>(
    cache: &BatchNormCache<S>,
    gamma: &TensorOf<S>,
    grad_out: &TensorOf<S>,
) -> KernelResult<LayerGrads<S>> {
    const OP: &str = "batch_norm_backward";
    let (b, c, t) = batch_dims(OP, grad_out)?;
    if gamma.shape() != [c] {
        return Err(shape_err(OP, format!("gamma {:?} for {c} channels", gamma.shape())));
    }
    let gd = grad_out.data();
    let mut dx = vec![S::zero(); gd.len()];
    let mut dgamma = vec![S::zero(); c];
    let mut dbeta = vec![S::zero(); c];
    match cache {
        BatchNormCache::Batch { x_hat, inv_std, .. } => {
            if x_hat.shape() != grad_out.shape() {
                return Err(shape_err(OP, "upstream does not match cached input"));
            }
            let hd = x_hat.data();
            let n = (b * t) as f64;
            for ci in 0..c {
                let mut sum_g = 0.0f64;
                let mut sum_gh = 0.0f64;
                for bi in 0..b {
                    let off = (bi * c + ci) * t;
                    for j in off..off + t {
                        sum_g += gd[j].as_f64();
                        sum_gh += (gd[j] * hd[j]).as_f64();
                    }
                }
                dgamma[ci] = S::lit(sum_gh);
                dbeta[ci] = S::lit(sum_g);
                // dx = gamma·inv_std·(g − mean(g) − x_hat·mean(g·x_hat))
                let scale = gamma.data()[ci] * inv_std[ci];
                let mg = S::lit(sum_g / n);
                let mgh = S::lit(sum_gh / n);
                for bi in 0..b {
                    let off = (bi * c + ci) * t;
                    for j in off..off + t {
                        dx[j] = scale * (gd[j] - mg - hd[j] * mgh);
                    }
                }
            }
        }
        BatchNormCache::Running { x_hat, inv_std } => {
            if x_hat.shape() != grad_out.shape() {
                return Err(shape_err(OP, "upstream does not match cached input"));
            }
            let hd = x_hat.data();
            for bi in 0..b {
                for ci in 0..c {
                    let scale = gamma.data()[ci] * inv_std[ci];
                    let off = (bi * c + ci) * t;
                    for j in off..off + t {
                        dx[j] = scale * gd[j];
                        dgamma[ci] += gd[j] * hd[j];
                        dbeta[ci] += gd[j];
                    }
                }
            }
        }
    }
    Ok(
        LayerGrads::input_only(TensorOf::new(grad_out.shape().to_vec(), dx).expect("upstream shape"))
            .with("gamma", TensorOf::from_vec(dgamma))
            .with("beta", TensorOf::from_vec(dbeta)),
    )
}
