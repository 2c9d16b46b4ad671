//! Uniform backward entry point over every kernel.

use super::{
    activation_backward, batch_norm_backward, conv1d_backward, conv1d_depthwise_backward, conv1d_pointwise_backward,
    dropout_backward, fully_connected_backward, global_avg_pool_backward, softmax_backward, ActivationKind,
    BatchNormCache, KernelError, KernelResult, LayerGrads,
};
use crate::scalar::Scalar;
use crate::tensor::TensorOf;

/// A layer together with the parameters its backward pass reads.
#[derive(Debug, Clone, Copy)]
pub enum LayerOp<'a, S> {
    Depthwise {
        kernels: &'a TensorOf<S>,
        stride: usize,
        padding: usize,
    },
    Pointwise {
        weights: &'a TensorOf<S>,
        has_bias: bool,
    },
    Conv {
        weights: &'a TensorOf<S>,
        has_bias: bool,
        stride: usize,
        padding: usize,
    },
    BatchNorm {
        gamma: &'a TensorOf<S>,
    },
    Activation(ActivationKind),
    GlobalAvgPool,
    FullyConnected {
        weight: &'a TensorOf<S>,
    },
    Softmax,
    Dropout,
}

/// What the forward pass must leave behind for each layer kind.
#[derive(Debug, Clone, PartialEq)]
pub enum ForwardCache<S> {
    /// The layer input (convolutions, activations, fully connected).
    Input(TensorOf<S>),
    /// The shape of the pooled input.
    InputShape(Vec<usize>),
    BatchNorm(BatchNormCache<S>),
    /// The softmax output.
    Output(TensorOf<S>),
    DropoutMask(Vec<S>),
}

impl<S: Scalar> LayerOp<'_, S> {
    fn name(&self) -> &'static str {
        match self {
            Self::Depthwise { .. } => "conv1d_depthwise",
            Self::Pointwise { .. } => "conv1d_pointwise",
            Self::Conv { .. } => "conv1d",
            Self::BatchNorm { .. } => "batch_norm",
            Self::Activation(_) => "activation",
            Self::GlobalAvgPool => "global_avg_pool",
            Self::FullyConnected { .. } => "fully_connected",
            Self::Softmax => "softmax",
            Self::Dropout => "dropout",
        }
    }
}

/// Analytical gradients for `op` given its forward cache and the gradient
/// of the loss w.r.t. its output.
pub fn backward<S: Scalar>(
    op: LayerOp<'_, S>,
    cache: Option<&ForwardCache<S>>,
    upstream: &TensorOf<S>,
) -> KernelResult<LayerGrads<S>> {
    let missing = || KernelError::MissingCache { op: op.name() };
    let cache = cache.ok_or_else(missing)?;
    match (op, cache) {
        (
            LayerOp::Depthwise {
                kernels,
                stride,
                padding,
            },
            ForwardCache::Input(x),
        ) => conv1d_depthwise_backward(x, kernels, stride, padding, upstream),
        (LayerOp::Pointwise { weights, has_bias }, ForwardCache::Input(x)) => {
            conv1d_pointwise_backward(x, weights, has_bias, upstream)
        }
        (
            LayerOp::Conv {
                weights,
                has_bias,
                stride,
                padding,
            },
            ForwardCache::Input(x),
        ) => conv1d_backward(x, weights, has_bias, stride, padding, upstream),
        (LayerOp::BatchNorm { gamma }, ForwardCache::BatchNorm(c)) => batch_norm_backward(c, gamma, upstream),
        (LayerOp::Activation(kind), ForwardCache::Input(x)) => activation_backward(x, kind, upstream),
        (LayerOp::GlobalAvgPool, ForwardCache::InputShape(shape)) => global_avg_pool_backward(shape, upstream),
        (LayerOp::FullyConnected { weight }, ForwardCache::Input(x)) => fully_connected_backward(x, weight, upstream),
        (LayerOp::Softmax, ForwardCache::Output(p)) => softmax_backward(p, upstream),
        (LayerOp::Dropout, ForwardCache::DropoutMask(m)) => dropout_backward(m, upstream),
        _ => Err(missing()),
    }
}
