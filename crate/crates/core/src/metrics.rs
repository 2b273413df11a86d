//! Instance matching and F1 scores over IoU thresholds.
//!
//! Matching is greedy: all prediction/ground-truth pairs are visited in
//! descending IoU order and a pair is accepted when its IoU reaches the
//! threshold and neither side is matched yet. Dataset scores sum the
//! TP/FP/FN counts of all images before computing F1.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::geometry::{iou_box, iou_mask, BBox, GeometryError, Mask};

/// The nine thresholds `0.50, 0.55, ..., 0.90`.
pub const F1_THRESHOLDS: [f64; 9] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("predictions and ground truth must all be masks or all be boxes")]
    MixedKinds,
    #[error("IoU threshold must be in [0, 1], got {0}")]
    Threshold(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A shape to compare, by mask or by box.
#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Mask(Mask),
    Box(BBox),
}

fn iou(a: &Region, b: &Region) -> Result<f64, MetricsError> {
    match (a, b) {
        (Region::Mask(x), Region::Mask(y)) => Ok(iou_mask(x, y)?),
        (Region::Box(x), Region::Box(y)) => Ok(iou_box(x, y)),
        _ => Err(MetricsError::MixedKinds),
    }
}

/// Pairwise IoU, `[pred][gt]`.
pub fn iou_matrix(preds: &[Region], gts: &[Region]) -> Result<Vec<Vec<f64>>, MetricsError> {
    let mut kinds = preds.iter().chain(gts).map(|r| matches!(r, Region::Mask(_)));
    if let Some(first) = kinds.next() {
        if kinds.any(|k| k != first) {
            return Err(MetricsError::MixedKinds);
        }
    }
    preds
        .iter()
        .map(|p| gts.iter().map(|g| iou(p, g)).collect())
        .collect()
}

/// Counts at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn f1(&self) -> f64 {
        f1(*self)
    }

    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }
}

impl core::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// Matching at one threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub threshold: f64,
    pub counts: Counts,
    /// Accepted `(pred, gt)` pairs in acceptance order.
    pub pairs: Vec<(usize, usize)>,
}

/// Greedy matching on a precomputed IoU matrix (`[pred][gt]`).
pub fn match_iou(ious: &[Vec<f64>], n_gt: usize, threshold: f64) -> Result<MatchResult, MetricsError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MetricsError::Threshold(threshold));
    }
    let n_pred = ious.len();
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (i, row) in ious.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v >= threshold && v > 0.0 {
                cand.push((v, i, j));
            }
        }
    }
    cand.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut pred_used = alloc::vec![false; n_pred];
    let mut gt_used = alloc::vec![false; n_gt];
    let mut pairs = Vec::new();
    for (_, i, j) in cand {
        if !pred_used[i] && !gt_used[j] {
            pred_used[i] = true;
            gt_used[j] = true;
            pairs.push((i, j));
        }
    }
    let tp = pairs.len();
    Ok(MatchResult {
        threshold,
        counts: Counts {
            tp,
            fp: n_pred - tp,
            fn_: n_gt - tp,
        },
        pairs,
    })
}

/// Greedy matching of predicted against ground-truth regions.
pub fn match_regions(preds: &[Region], gts: &[Region], threshold: f64) -> Result<MatchResult, MetricsError> {
    let m = iou_matrix(preds, gts)?;
    match_iou(&m, gts.len(), threshold)
}

/// `TP / (TP + (FP + FN) / 2)`; an empty-vs-empty comparison scores 1.
pub fn f1(c: Counts) -> f64 {
    if c.tp + c.fp + c.fn_ == 0 {
        return 1.0;
    }
    c.tp as f64 / (c.tp as f64 + 0.5 * (c.fp + c.fn_) as f64)
}

/// Mean F1 over the given per-threshold counts.
pub fn f1_avg(per_threshold: &[Counts]) -> f64 {
    if per_threshold.is_empty() {
        return 0.0;
    }
    per_threshold.iter().map(|c| f1(*c)).sum::<f64>() / per_threshold.len() as f64
}

/// Dataset-level accumulator over a fixed threshold list.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub thresholds: Vec<f64>,
    pub counts: Vec<Counts>,
}

impl Evaluation {
    pub fn new(thresholds: &[f64]) -> Self {
        Self {
            thresholds: thresholds.to_vec(),
            counts: alloc::vec![Counts::default(); thresholds.len()],
        }
    }

    /// Evaluation over [`F1_THRESHOLDS`].
    pub fn standard() -> Self {
        Self::new(&F1_THRESHOLDS)
    }

    /// Adds one image.
    pub fn add(&mut self, preds: &[Region], gts: &[Region]) -> Result<(), MetricsError> {
        let m = iou_matrix(preds, gts)?;
        for (t, c) in self.thresholds.iter().zip(self.counts.iter_mut()) {
            *c += match_iou(&m, gts.len(), *t)?.counts;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Evaluation) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += *b;
        }
    }

    pub fn f1_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| (t - threshold).abs() < 1e-12)
            .map(|i| f1(self.counts[i]))
    }

    pub fn f1_avg(&self) -> f64 {
        f1_avg(&self.counts)
    }
}
