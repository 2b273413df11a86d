//! The toy contour proposal network.
//!
//! A small U-Net style backbone produces a full-resolution feature map (P1)
//! and a strided one (P2). On P2, 1x1 convolution heads predict per cell an
//! object score, the shape coefficients `a_n, b_n, c_n, d_n (n >= 1)` and
//! the contour offset `(a_0, c_0)` relative to the cell center. On P1 a 1x1
//! head predicts the two-channel residual field used for local refinement.

mod config;
mod eval;
mod extract;
mod network;
mod params;
mod targets;
mod train;

pub use config::{CpnConfig, TSampling, TrainConfig};
pub use eval::{evaluate, predict};
pub use extract::extract;
pub use network::{forward, forward_graph, Outputs, ProposalGrid};
pub use params::Parameters;
pub use targets::{build_targets, TargetCell, TargetGrid};
pub use train::{batch_loss, train, Batch, EpochStats, LossBreakdown, LossVars, Trainer};

use alloc::string::String;

use crate::autodiff::AutodiffError;
use crate::efd::EfdError;
use crate::loss::LossError;
use crate::metrics::MetricsError;
use crate::nms::NmsError;
use crate::refine::RefineError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("image {height}x{width} not usable: {reason}")]
    ImageSize {
        height: usize,
        width: usize,
        reason: String,
    },
    #[error("parameter {0} missing or misshapen")]
    Parameter(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("empty training set")]
    EmptyDataset,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Efd(#[from] EfdError),
    #[error(transparent)]
    Nms(#[from] NmsError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = core::result::Result<T, ModelError>;

/// Center of grid cell `(row, col)` in input pixels.
#[inline]
pub fn cell_center(row: usize, col: usize, stride: usize) -> (f64, f64) {
    let s = stride as f64;
    ((col as f64 + 0.5) * s, (row as f64 + 0.5) * s)
}
