//! Squeeze-and-excitation channel gating.
//!
//! `g = sigmoid(W_ex · relu(W_sq · GAP(x) + b_sq) + b_ex)`, then each
//! channel of `x` is scaled by its gate.

use crate::nn::{self, ActivationKind, KernelResult, LayerGrads};
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::TensorOf;

/// The four SE tensors.
#[derive(Debug, Clone, Copy)]
pub struct SeWeights<'a, S> {
    pub w_sq: &'a TensorOf<S>,
    pub b_sq: &'a TensorOf<S>,
    pub w_ex: &'a TensorOf<S>,
    pub b_ex: &'a TensorOf<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeCache<S> {
    pooled: TensorOf<S>,
    hidden: TensorOf<S>,
    gate: TensorOf<S>,
}

impl<S: Scalar> SeCache<S> {
    /// Per-(batch, channel) gate values.
    pub fn gate(&self) -> &TensorOf<S> {
        &self.gate
    }
}

/// Sigmoid kept strictly inside (0, 1), where plain floats saturate.
fn open_unit_sigmoid<S: Scalar>(v: S) -> S {
    sigmoid(v).max(S::epsilon()).min(S::one() - S::epsilon())
}

pub fn se_block<S: Scalar>(x: &TensorOf<S>, w: SeWeights<'_, S>) -> KernelResult<TensorOf<S>> {
    se_forward(x, w).map(|(y, _)| y)
}

/// Forward pass that also returns what [`se_backward`] needs.
pub fn se_forward<S: Scalar>(x: &TensorOf<S>, w: SeWeights<'_, S>) -> KernelResult<(TensorOf<S>, SeCache<S>)> {
    let pooled = nn::global_avg_pool(x)?;
    let c = *pooled.shape().last().unwrap();
    if w.w_sq.shape().get(1) != Some(&c) || w.w_ex.shape().first() != Some(&c) {
        return Err(crate::nn::KernelError::Shape {
            op: "se_block",
            detail: format!("W_sq {:?} / W_ex {:?} for {c} channels", w.w_sq.shape(), w.w_ex.shape()),
        });
    }
    let hidden = nn::fully_connected(&pooled, w.w_sq, w.b_sq)?;
    let act = nn::activation(&hidden, ActivationKind::Relu)?;
    let gate = nn::fully_connected(&act, w.w_ex, w.b_ex)?.map(open_unit_sigmoid);
    let t = *x.shape().last().unwrap();
    let mut out = x.data().to_vec();
    for (row, &g) in out.chunks_exact_mut(t).zip(gate.data()) {
        row.iter_mut().for_each(|v| *v *= g);
    }
    let out = TensorOf::new(x.shape().to_vec(), out).expect("same shape");
    Ok((out, SeCache { pooled, hidden, gate }))
}

/// Gradients w.r.t. the input and `squeeze.weight`, `squeeze.bias`,
/// `excite.weight`, `excite.bias`.
pub fn se_backward<S: Scalar>(
    x: &TensorOf<S>,
    cache: &SeCache<S>,
    w: SeWeights<'_, S>,
    grad_out: &TensorOf<S>,
) -> KernelResult<LayerGrads<S>> {
    let t = *x.shape().last().unwrap();
    let gate = cache.gate.data();
    let mut dx = grad_out.data().to_vec();
    let mut dgate = vec![S::zero(); gate.len()];
    for (((dxr, xr), dg), &g) in dx
        .chunks_exact_mut(t)
        .zip(x.data().chunks_exact(t))
        .zip(&mut dgate)
        .zip(gate)
    {
        let mut acc = S::zero();
        for (d, &xv) in dxr.iter_mut().zip(xr) {
            acc += *d * xv;
            *d *= g;
        }
        *dg = acc * g * (S::one() - g);
    }
    let dz = TensorOf::new(cache.gate.shape().to_vec(), dgate).expect("gate shape");
    let act = nn::activation(&cache.hidden, ActivationKind::Relu)?;
    let ex = nn::fully_connected_backward(&act, w.w_ex, &dz)?;
    let dh = nn::activation_backward(&cache.hidden, ActivationKind::Relu, &ex.input_grad)?;
    let sq = nn::fully_connected_backward(&cache.pooled, w.w_sq, &dh.input_grad)?;
    let via_pool = nn::global_avg_pool_backward(x.shape(), &sq.input_grad)?;
    for (d, v) in dx.iter_mut().zip(via_pool.input_grad.data()) {
        *d += *v;
    }
    let mut ex = ex.param_grads;
    let mut sq = sq.param_grads;
    Ok(LayerGrads {
        input_grad: TensorOf::new(x.shape().to_vec(), dx).expect("input shape"),
        param_grads: [
            ("squeeze.weight", sq.remove("weight").unwrap()),
            ("squeeze.bias", sq.remove("bias").unwrap()),
            ("excite.weight", ex.remove("weight").unwrap()),
            ("excite.bias", ex.remove("bias").unwrap()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_halve_the_input() {
        let x = TensorOf::<f64>::from_rows(&[
            vec![1.0, -2.0, 3.0],
            vec![4.0, 0.5, -6.0],
            vec![0.0, 1.0, 2.0],
            vec![9.0; 3],
        ]);
        let (w_sq, b_sq) = (TensorOf::zeros(&[1, 4]), TensorOf::zeros(&[1]));
        let (w_ex, b_ex) = (TensorOf::zeros(&[4, 1]), TensorOf::zeros(&[4]));
        let y = se_block(
            &x,
            SeWeights {
                w_sq: &w_sq,
                b_sq: &b_sq,
                w_ex: &w_ex,
                b_ex: &b_ex,
            },
        )
        .unwrap();
        assert_eq!(y, x.map(|v| 0.5 * v));
    }

    #[test]
    fn rejects_mismatched_weights() {
        let x = TensorOf::<f32>::zeros(&[4, 3]);
        let (w_sq, b_sq) = (TensorOf::zeros(&[1, 3]), TensorOf::zeros(&[1]));
        let (w_ex, b_ex) = (TensorOf::zeros(&[4, 1]), TensorOf::zeros(&[4]));
        assert!(se_block(
            &x,
            SeWeights {
                w_sq: &w_sq,
                b_sq: &b_sq,
                w_ex: &w_ex,
                b_ex: &b_ex
            }
        )
        .is_err());
    }
}
