//! Training objectives, built on the autodiff graph.
//!
//! Reductions: the detection term is averaged over every grid cell; the
//! contour, refinement and representation terms are averaged over positive
//! cells only. Contour terms are already per-point means.

use alloc::vec::Vec;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::efd::{EfdError, FourierDescriptor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Efd(#[from] EfdError),
    #[error("beta has {got} weights, order {order} needs {}", order + 1)]
    BetaLength { order: usize, got: usize },
    #[error("descriptor orders differ: {0} vs {1}")]
    OrderMismatch(usize, usize),
    #[error("need at least one sample location")]
    NoSamples,
    #[error("{0} targets for {1} predicted rows")]
    RowMismatch(usize, usize),
    #[error("refinement margin must be positive, got {0}")]
    Margin(f64),
}

pub type Result<T> = core::result::Result<T, LossError>;

/// Weights of the representation term.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct LossWeights {
    /// Weight of the representation loss in the total.
    pub lambda: f64,
    /// Per-frequency factors `beta_0..beta_N`.
    pub beta: Vec<f64>,
}

impl LossWeights {
    /// `lambda = 1`, `beta_n = 2^-n`.
    pub fn default_for_order(order: usize) -> Self {
        Self {
            lambda: 1.0,
            beta: (0..=order).map(|n| libm::pow(2.0, -(n as f64))).collect(),
        }
    }

    pub fn validate(&self, order: usize) -> Result<()> {
        if self.beta.len() != order + 1 {
            return Err(LossError::BetaLength {
                order,
                got: self.beta.len(),
            });
        }
        if !(self.lambda >= 0.0) || self.beta.iter().any(|b| !(*b >= 0.0)) {
            return Err(LossError::Autodiff(AutodiffError::Invalid(
                "loss weights must be non-negative".into(),
            )));
        }
        Ok(())
    }

    /// Weight of every slot of a flat descriptor row.
    pub fn flat_weights(&self, order: usize) -> Vec<f64> {
        let mut w = Vec::with_capacity(4 * order + 2);
        w.extend_from_slice(&self.beta);
        w.extend_from_slice(&self.beta[1..]);
        w.extend_from_slice(&self.beta);
        w.extend_from_slice(&self.beta[1..]);
        w
    }
}

/// Per-coordinate L1 loss `(|x - x^| + |y - y^|) / 2`.
pub fn coord_loss(x: f64, y: f64, x_hat: f64, y_hat: f64) -> f64 {
    0.5 * ((x - x_hat).abs() + (y - y_hat).abs())
}

/// Mean binary cross-entropy of the classification logits.
pub fn detection_loss(g: &mut Graph, logits: Var, targets: &[f64]) -> Result<Var> {
    Ok(g.bce_with_logits(logits, targets)?)
}

/// Target contour points `[P, S, 2]` of several descriptors.
pub fn sample_targets(targets: &[FourierDescriptor], ts: &[f64]) -> Result<Tensor> {
    if ts.is_empty() {
        return Err(LossError::NoSamples);
    }
    let mut data = Vec::with_capacity(targets.len() * ts.len() * 2);
    for t in targets {
        for p in crate::efd::sample_contour(t, ts)? {
            data.push(p.x);
            data.push(p.y);
        }
    }
    Ok(Tensor::new([targets.len(), ts.len(), 2], data)?)
}

/// Mean absolute difference between two `[P, S, 2]` point sets, i.e. the
/// mean of [`coord_loss`] over all `P * S` pairs.
pub fn points_l1(g: &mut Graph, predicted: Var, target: Var) -> Result<Var> {
    let diff = g.sub(predicted, target)?;
    let abs = g.abs(diff)?;
    Ok(g.mean(abs)?)
}

fn check_rows(g: &Graph, targets: &[FourierDescriptor], pred: Var) -> Result<usize> {
    let shape = g.value(pred).shape();
    let order = targets.first().map(|t| t.order).unwrap_or(0);
    if targets.iter().any(|t| t.order != order) {
        return Err(LossError::OrderMismatch(order, targets.iter().map(|t| t.order).max().unwrap_or(0)));
    }
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(LossError::RowMismatch(targets.len(), shape.first().copied().unwrap_or(0)));
    }
    if shape[1] != 4 * order + 2 {
        return Err(LossError::OrderMismatch(order, (shape[1].saturating_sub(2)) / 4));
    }
    Ok(order)
}

/// Contour loss of predicted descriptor rows `[P, 4N + 2]` against targets,
/// both sampled at `ts`; averaged over rows.
pub fn contour_loss(g: &mut Graph, targets: &[FourierDescriptor], pred: Var, ts: &[f64]) -> Result<Var> {
    let order = check_rows(g, targets, pred)?;
    let target = g.input(sample_targets(targets, ts)?)?;
    let sampled = g.fourier_sample(pred, ts, order)?;
    points_l1(g, sampled, target)
}

/// Contour loss after refining the predicted points through `field`
/// (`[B, 2, H, W]`); row `p` refers to batch image `batch[p]`.
#[allow(clippy::too_many_arguments)]
pub fn refine_loss(
    g: &mut Graph,
    targets: &[FourierDescriptor],
    pred: Var,
    field: Var,
    batch: &[usize],
    ts: &[f64],
    iterations: usize,
    margin: f64,
) -> Result<Var> {
    if !(margin > 0.0) {
        return Err(LossError::Margin(margin));
    }
    let order = check_rows(g, targets, pred)?;
    let target = g.input(sample_targets(targets, ts)?)?;
    let sampled = g.fourier_sample(pred, ts, order)?;
    let refined = g.refine_points(sampled, field, batch, iterations, margin)?;
    points_l1(g, refined, target)
}

/// `beta`-weighted absolute coefficient error, summed per row and averaged
/// over rows. `beta_0` weighs the offsets `a_0`, `c_0`.
pub fn repr_loss(g: &mut Graph, targets: &[FourierDescriptor], pred: Var, beta: &[f64]) -> Result<Var> {
    let order = check_rows(g, targets, pred)?;
    if beta.len() != order + 1 {
        return Err(LossError::BetaLength {
            order,
            got: beta.len(),
        });
    }
    let flat: Vec<f64> = targets.iter().flat_map(|t| t.to_flat()).collect();
    let target = g.input(Tensor::new([targets.len(), 4 * order + 2], flat)?)?;
    let weights = LossWeights {
        lambda: 0.0,
        beta: beta.to_vec(),
    }
    .flat_weights(order);
    repr_from_parts(g, pred, target, &weights)
}

pub(crate) fn repr_from_parts(g: &mut Graph, pred: Var, target: Var, flat_weights: &[f64]) -> Result<Var> {
    let rows = g.value(pred).shape()[0];
    let tiled: Vec<f64> = (0..rows).flat_map(|_| flat_weights.iter().copied()).collect();
    let w = g.input(Tensor::new(g.value(pred).shape(), tiled)?)?;
    let diff = g.sub(pred, target)?;
    let abs = g.abs(diff)?;
    let weighted = g.mul(abs, w)?;
    let total = g.sum(weighted)?;
    Ok(g.scale(total, 1.0 / rows as f64)?)
}

/// The positive-cell terms, each already averaged over positive cells.
#[derive(Debug, Clone, Copy)]
pub struct PositiveTerms {
    pub contour: Var,
    pub refine: Var,
    pub repr: Var,
}

/// `L_inst + mean over positives of (L_contour + L_refine + lambda L_repr)`.
pub fn cpn_loss(
    g: &mut Graph,
    logits: Var,
    o: &[f64],
    positives: Option<PositiveTerms>,
    lambda: f64,
) -> Result<Var> {
    let inst = detection_loss(g, logits, o)?;
    let Some(t) = positives else {
        return Ok(inst);
    };
    let repr = g.scale(t.repr, lambda)?;
    let s = g.add(t.contour, t.refine)?;
    let s = g.add(s, repr)?;
    Ok(g.add(inst, s)?)
}
