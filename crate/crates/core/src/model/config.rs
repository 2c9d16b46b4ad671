use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::nn::ActivationKind;

/// One inverted-residual bottleneck block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BneckSpec {
    pub expand_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub use_se: bool,
    pub activation: ActivationKind,
}

impl BneckSpec {
    pub const fn new(expand: usize, out: usize, kernel: usize, stride: usize, use_se: bool) -> Self {
        Self {
            expand_channels: expand,
            out_channels: out,
            kernel_size: kernel,
            stride,
            use_se,
            activation: ActivationKind::Swish,
        }
    }
}

/// Feature extractor family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Backbone {
    /// Stem plus the bottleneck blocks in [`ModelConfig::blocks`].
    #[default]
    Mobilenet,
    /// Plain stack of dense convolutions, each stride 2, followed by BN and
    /// the stem activation. Replaces the stem and all bottleneck blocks.
    PlainConv { channels: Vec<usize>, kernel_size: usize },
}

/// Which head a single-task model keeps when multi-task learning is off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Activity,
    Resistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub input_length: usize,
    pub stem_channels: usize,
    pub blocks: Vec<BneckSpec>,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub se_reduction: usize,
    pub loss_alpha: f64,
    pub loss_beta: f64,
    pub enable_se: bool,
    pub enable_swish: bool,
    pub enable_mtl: bool,
    /// Head kept when `enable_mtl` is false.
    pub single_task: Task,
    pub backbone: Backbone,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 9,
            input_length: 128,
            stem_channels: 16,
            blocks: vec![
                BneckSpec::new(16, 16, 5, 1, true),
                BneckSpec::new(64, 24, 5, 2, false),
                BneckSpec::new(72, 24, 5, 1, false),
                BneckSpec::new(72, 40, 5, 2, true),
                BneckSpec::new(120, 40, 5, 1, true),
                BneckSpec::new(120, 48, 5, 2, true),
            ],
            feature_dim: 96,
            num_classes: 6,
            dropout_rate: 0.5,
            se_reduction: 4,
            loss_alpha: 1.0,
            loss_beta: 1.0,
            enable_se: true,
            enable_swish: true,
            enable_mtl: true,
            single_task: Task::Activity,
            backbone: Backbone::Mobilenet,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.input_channels == 0 || self.input_length == 0 {
            return bad("input_channels and input_length must be positive".into());
        }
        if self.stem_channels == 0 {
            return bad("stem_channels must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.se_reduction == 0 {
            return bad("se_reduction must be at least 1".into());
        }
        if !(self.loss_alpha >= 0.0 && self.loss_beta >= 0.0) || self.loss_alpha + self.loss_beta <= 0.0 {
            return bad("loss_alpha and loss_beta must be nonnegative and not both zero".into());
        }
        if !self.enable_mtl {
            let w = match self.single_task {
                Task::Activity => self.loss_alpha,
                Task::Resistance => self.loss_beta,
            };
            if w <= 0.0 {
                return bad(format!(
                    "single-task {:?} model needs a positive loss weight",
                    self.single_task
                ));
            }
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.out_channels == 0 || b.expand_channels < b.out_channels {
                return bad(format!("block {i}: need expand_channels >= out_channels >= 1"));
            }
            if b.kernel_size % 2 == 0 {
                return bad(format!("block {i}: kernel_size must be odd"));
            }
            if b.stride != 1 && b.stride != 2 {
                return bad(format!("block {i}: stride must be 1 or 2"));
            }
            if !matches!(b.activation, ActivationKind::Swish | ActivationKind::Relu) {
                return bad(format!("block {i}: activation must be swish or relu"));
            }
        }
        if let Backbone::PlainConv { channels, kernel_size } = &self.backbone {
            if channels.is_empty() || channels.contains(&0) || kernel_size % 2 == 0 {
                return bad("plain_conv backbone needs nonzero channels and an odd kernel".into());
            }
        }
        if self.input_length < self.total_stride() {
            return bad(format!(
                "input_length {} shorter than total stride {}",
                self.input_length,
                self.total_stride()
            ));
        }
        Ok(())
    }

    /// Product of all backbone strides.
    pub fn total_stride(&self) -> usize {
        match &self.backbone {
            Backbone::Mobilenet => self.blocks.iter().map(|b| b.stride).product(),
            Backbone::PlainConv { channels, .. } => 1 << channels.len(),
        }
    }

    /// The activation used where the design calls for `kind`.
    pub fn effective(&self, kind: ActivationKind) -> ActivationKind {
        if kind == ActivationKind::Swish && !self.enable_swish {
            ActivationKind::Relu
        } else {
            kind
        }
    }

    pub fn has_activity_head(&self) -> bool {
        self.enable_mtl || self.single_task == Task::Activity
    }

    pub fn has_resistance_head(&self) -> bool {
        self.enable_mtl || self.single_task == Task::Resistance
    }

    pub fn se_active(&self, block: &BneckSpec) -> bool {
        self.enable_se && block.use_se
    }

    pub fn se_hidden(&self, channels: usize) -> usize {
        (channels / self.se_reduction).max(1)
    }

    /// Channel count entering the feature head.
    pub fn backbone_out_channels(&self) -> usize {
        match &self.backbone {
            Backbone::Mobilenet => self.blocks.last().map_or(self.stem_channels, |b| b.out_channels),
            Backbone::PlainConv { channels, .. } => *channels.last().expect("validated"),
        }
    }
}
