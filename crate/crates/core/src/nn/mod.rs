//! Forward and analytical backward kernels for every layer the network uses.
//!
//! Kernels accept either a single feature map `[C, T]` or a batch
//! `[B, C, T]`; outputs keep the rank of the input. All kernels are pure
//! functions of their arguments. Dropout takes its generator explicitly.

mod activation;
mod backward;
mod conv;
mod dropout;
mod linear;
mod norm;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::TensorOf;

pub use activation::{activation, activation_backward, ActivationKind};
pub use backward::{backward, ForwardCache, LayerOp};
pub use conv::{
    conv1d, conv1d_backward, conv1d_depthwise, conv1d_depthwise_backward, conv1d_output_len, conv1d_pointwise,
    conv1d_pointwise_backward, same_padding,
};
pub use dropout::{dropout, dropout_backward, DropoutOutput};
pub use linear::{
    fully_connected, fully_connected_backward, global_avg_pool, global_avg_pool_backward, softmax, softmax_backward,
};
pub use norm::{batch_norm, batch_norm_backward, batch_norm_eval, batch_norm_train, BatchNormCache, BatchNormState};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: backward called without the forward cache it needs")]
    MissingCache { op: &'static str },
}

/// Batch-norm constants used throughout the network.
pub mod norm_defaults {
    pub const EPSILON: f64 = 1e-5;
    pub const MOMENTUM: f64 = 0.1;
}

pub type KernelResult<T> = Result<T, KernelError>;

/// Whether a layer runs with training behaviour (batch statistics, dropout)
/// or inference behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Gradients produced by one layer's backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<S> {
    pub input_grad: TensorOf<S>,
    pub param_grads: BTreeMap<String, TensorOf<S>>,
}

impl<S: Scalar> LayerGrads<S> {
    pub(crate) fn input_only(input_grad: TensorOf<S>) -> Self {
        Self {
            input_grad,
            param_grads: BTreeMap::new(),
        }
    }

    pub(crate) fn with(mut self, name: &str, grad: TensorOf<S>) -> Self {
        self.param_grads.insert(name.to_string(), grad);
        self
    }
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> KernelError {
    KernelError::Shape {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> KernelError {
    KernelError::InvalidArgument {
        op,
        detail: detail.into(),
    }
}

/// Interprets a rank-2 `[C, T]` or rank-3 `[B, C, T]` tensor as `(B, C, T)`.
pub(crate) fn batch_dims<S>(op: &'static str, x: &TensorOf<S>) -> KernelResult<(usize, usize, usize)>
where
    S: Scalar,
{
    match *x.shape() {
        [c, t] => Ok((1, c, t)),
        [b, c, t] => Ok((b, c, t)),
        ref s => Err(shape_err(op, format!("expected [C,T] or [B,C,T], got {s:?}"))),
    }
}

/// Output shape with the same rank as `like` and new channel/time extents.
pub(crate) fn map_shape<S: Scalar>(like: &TensorOf<S>, b: usize, c: usize, t: usize) -> Vec<usize> {
    if like.rank() == 2 {
        vec![c, t]
    } else {
        vec![b, c, t]
    }
}

pub(crate) fn finite<S: Scalar>(op: &'static str, t: TensorOf<S>) -> KernelResult<TensorOf<S>> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(KernelError::NonFinite { op })
    }
}
