use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{ModelError, Result};
use crate::loss::LossWeights;

/// Network shape, inference and loss settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct CpnConfig {
    /// Descriptor order `N`.
    pub order: usize,
    /// Contour points `S` sampled per proposal.
    pub samples: usize,
    /// Downsampling factor of the proposal grid.
    pub stride: usize,
    /// Cells scoring strictly above this become proposals.
    pub score_threshold: f64,
    pub nms_threshold: f64,
    /// Refinement iterations `r`.
    pub refine_iterations: usize,
    /// Refinement margin `sigma` in pixels.
    pub refine_margin: f64,
    /// Channels per backbone level; level `l` runs at stride `2^l`.
    pub widths: Vec<usize>,
    /// Convolutions per backbone block.
    pub convs_per_block: usize,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for CpnConfig {
    fn default() -> Self {
        Self {
            order: 4,
            samples: 64,
            stride: 2,
            score_threshold: 0.5,
            nms_threshold: 0.5,
            refine_iterations: 4,
            refine_margin: 2.0,
            widths: vec![8, 16, 32],
            convs_per_block: 1,
            weights: LossWeights::default_for_order(4),
            seed: 0,
        }
    }
}

impl CpnConfig {
    /// Default configuration at another order (with matching `beta`).
    pub fn with_order(order: usize) -> Self {
        Self {
            order,
            weights: LossWeights::default_for_order(order),
            ..Self::default()
        }
    }

    /// Backbone level whose output feeds the proposal heads.
    pub fn p2_level(&self) -> usize {
        self.stride.trailing_zeros() as usize
    }

    /// Input sides must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.widths.len().saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(ModelError::Config(m));
        if self.order < 1 {
            return bad(format!("order must be >= 1, got {}", self.order));
        }
        if self.samples < 3 {
            return bad(format!("samples must be >= 3, got {}", self.samples));
        }
        if ![1, 2, 4].contains(&self.stride) {
            return bad(format!("stride must be 1, 2 or 4, got {}", self.stride));
        }
        for (name, v) in [
            ("score_threshold", self.score_threshold),
            ("nms_threshold", self.nms_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must be in (0, 1), got {v}"));
            }
        }
        if !(self.refine_margin > 0.0 && self.refine_margin.is_finite()) {
            return bad(format!("refine_margin must be positive, got {}", self.refine_margin));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad("widths must be non-empty and positive".into());
        }
        if self.widths.len() <= self.p2_level() {
            return bad(format!(
                "stride {} needs at least {} backbone levels",
                self.stride,
                self.p2_level() + 1
            ));
        }
        if self.convs_per_block == 0 {
            return bad("convs_per_block must be >= 1".into());
        }
        self.weights.validate(self.order)?;
        Ok(())
    }

    pub fn check_image(&self, height: usize, width: usize) -> Result<()> {
        let m = self.size_multiple();
        if height == 0 || width == 0 || height % m != 0 || width % m != 0 {
            return Err(ModelError::ImageSize {
                height,
                width,
                reason: format!("sides must be positive multiples of {m}"),
            });
        }
        Ok(())
    }
}

/// How contour sample locations are drawn during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TSampling {
    /// `t_s = s / S`.
    #[default]
    Uniform,
    /// Fresh sorted uniform draws every step.
    Random,
}

/// Optimizer schedule.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Rescale the gradient when its global norm exceeds this (0 disables).
    pub grad_clip: f64,
    pub t_sampling: TSampling,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            learning_rate: 0.01,
            momentum: 0.9,
            grad_clip: 2.0,
            t_sampling: TSampling::Uniform,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ModelError::Config("momentum must be in [0, 1)".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(ModelError::Config("grad_clip must be >= 0".into()));
        }
        Ok(())
    }
}
