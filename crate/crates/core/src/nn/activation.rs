use serde::{Deserialize, Serialize};

use super::{finite, shape_err, KernelResult, LayerGrads};
use crate::scalar::{sigmoid, Scalar};
use crate::tensor::TensorOf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    /// `v · sigmoid(v)`
    Swish,
    Sigmoid,
    Relu,
    Identity,
}

impl ActivationKind {
    #[inline]
    pub fn apply<S: Scalar>(self, v: S) -> S {
        match self {
            Self::Swish => v * sigmoid(v),
            Self::Sigmoid => sigmoid(v),
            Self::Relu => v.max(S::zero()),
            Self::Identity => v,
        }
    }

    /// Derivative at `v`; relu uses 0 at the kink.
    #[inline]
    pub fn derivative<S: Scalar>(self, v: S) -> S {
        match self {
            Self::Swish => {
                let s = sigmoid(v);
                s + v * s * (S::one() - s)
            }
            Self::Sigmoid => {
                let s = sigmoid(v);
                s * (S::one() - s)
            }
            Self::Relu => {
                if v > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Self::Identity => S::one(),
        }
    }
}

pub fn activation<S: Scalar>(x: &TensorOf<S>, kind: ActivationKind) -> KernelResult<TensorOf<S>> {
    if kind == ActivationKind::Identity {
        return Ok(x.clone());
    }
    finite("activation", x.map(|v| kind.apply(v)))
}

/// Backward from the cached pre-activation input.
pub fn activation_backward<S: Scalar>(
    x: &TensorOf<S>,
    kind: ActivationKind,
    grad_out: &TensorOf<S>,
) -> KernelResult<LayerGrads<S>> {
    if x.shape() != grad_out.shape() {
        return Err(shape_err(
            "activation_backward",
            format!("{:?} vs {:?}", x.shape(), grad_out.shape()),
        ));
    }
    let dx = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| g * kind.derivative(v))
        .collect();
    Ok(LayerGrads::input_only(
        TensorOf::new(x.shape().to_vec(), dx).expect("same shape"),
    ))
}
