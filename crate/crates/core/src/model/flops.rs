use serde::{Deserialize, Serialize};

use super::config::{Backbone, ModelConfig};
use super::ModelError;
use crate::nn::{conv1d_output_len, same_padding};

/// Per-window compute and size of a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsEstimate {
    /// Multiply-adds for one single-window forward pass.
    pub mul_adds: u64,
    /// Trainable scalars (running statistics excluded).
    pub params: usize,
}

/// Walks the topology by shape alone. Counting rules: pointwise
/// `C_in·C_out·T`; depthwise `C·K·T'`; dense conv `C_in·C_out·K·T'`;
/// fully connected `D_in·D_out`; SE `2·C·(C/r)`; batch norm and each
/// non-identity activation 2 per element. Pooling, residual adds, the SE
/// rescale and softmax are not counted.
pub fn flops_estimate(config: &ModelConfig) -> Result<FlopsEstimate, ModelError> {
    config.validate()?;
    let mut ops = 0u64;
    let mut params = 0usize;
    let mut t = config.input_length;
    let mut c = config.input_channels;
    // BN followed by an activation: 2 + 2 ops per element, 2C params
    let bn_act = |ops: &mut u64, params: &mut usize, ch: usize, t: usize, act: bool| {
        *ops += 2 * (ch * t) as u64 + if act { 2 * (ch * t) as u64 } else { 0 };
        *params += 2 * ch;
    };
    match &config.backbone {
        Backbone::Mobilenet => {
            let s = config.stem_channels;
            ops += (c * s * t) as u64;
            params += c * s;
            bn_act(&mut ops, &mut params, s, t, true);
            c = s;
            for b in &config.blocks {
                let e = b.expand_channels;
                ops += (c * e * t) as u64;
                params += c * e;
                bn_act(&mut ops, &mut params, e, t, true);
                let t_out = conv1d_output_len(t, b.kernel_size, b.stride, same_padding(b.kernel_size))
                    .ok_or_else(|| ModelError::InvalidConfig("block kernel longer than its input".into()))?;
                ops += (e * b.kernel_size * t_out) as u64;
                params += e * b.kernel_size;
                bn_act(&mut ops, &mut params, e, t_out, true);
                t = t_out;
                if config.se_active(b) {
                    let h = config.se_hidden(e);
                    ops += 2 * (e * h) as u64;
                    params += 2 * e * h + h + e;
                }
                ops += (e * b.out_channels * t) as u64;
                params += e * b.out_channels;
                bn_act(&mut ops, &mut params, b.out_channels, t, false);
                c = b.out_channels;
            }
        }
        Backbone::PlainConv { channels, kernel_size } => {
            for &w in channels {
                let t_out = conv1d_output_len(t, *kernel_size, 2, same_padding(*kernel_size))
                    .ok_or_else(|| ModelError::InvalidConfig("plain conv kernel longer than its input".into()))?;
                ops += (c * w * kernel_size * t_out) as u64;
                params += c * w * kernel_size;
                bn_act(&mut ops, &mut params, w, t_out, true);
                c = w;
                t = t_out;
            }
        }
    }
    let d = config.feature_dim;
    ops += (c * d * t) as u64;
    params += c * d;
    bn_act(&mut ops, &mut params, d, t, true);
    if config.has_activity_head() {
        ops += (d * config.num_classes) as u64;
        params += d * config.num_classes + config.num_classes;
    }
    if config.has_resistance_head() {
        ops += d as u64;
        params += d + 1;
    }
    Ok(FlopsEstimate { mul_adds: ops, params })
}
