//! Greedy bounding-box non-maximum suppression.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::efd::{FourierDescriptor, Point};
use crate::geometry::{iou_box, BBox};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NmsError {
    #[error("IoU threshold must be in (0, 1], got {0}")]
    Threshold(f64),
    #[error("detection {0} has a non-finite score")]
    Score(usize),
}

/// A contour proposal that survived score thresholding.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub score: f64,
    pub descriptor: FourierDescriptor,
    /// Sampled (and refined) contour.
    pub contour: Vec<Point>,
    /// Bounding box of `contour`.
    pub bbox: BBox,
    /// Row-major index of the grid cell the proposal came from.
    pub cell: usize,
}

/// Anything NMS can rank and compare.
pub trait Scored {
    fn score(&self) -> f64;
    fn bbox(&self) -> BBox;
    /// Secondary sort key among equal scores; lower wins.
    fn tie_key(&self) -> usize {
        0
    }
}

impl Scored for Detection {
    fn score(&self) -> f64 {
        self.score
    }

    fn bbox(&self) -> BBox {
        self.bbox
    }

    fn tie_key(&self) -> usize {
        self.cell
    }
}

impl Scored for (BBox, f64) {
    fn score(&self) -> f64 {
        self.1
    }

    fn bbox(&self) -> BBox {
        self.0
    }
}

/// Processing order: score descending, then lower tie key, then input position.
pub fn priority_order<T: Scored>(items: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&i, &j| {
        items[j]
            .score()
            .partial_cmp(&items[i].score())
            .unwrap_or(Ordering::Equal)
            .then(items[i].tie_key().cmp(&items[j].tie_key()))
            .then(i.cmp(&j))
    });
    order
}

/// Keeps the best remaining item and drops every other item whose box IoU
/// with it strictly exceeds `iou_threshold`, until none remain.
///
/// Returns kept indices in processing order.
pub fn nms<T: Scored>(items: &[T], iou_threshold: f64) -> Result<Vec<usize>, NmsError> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(NmsError::Threshold(iou_threshold));
    }
    if let Some(i) = items.iter().position(|d| !d.score().is_finite()) {
        return Err(NmsError::Score(i));
    }
    let order = priority_order(items);
    let boxes: Vec<BBox> = order.iter().map(|&i| items[i].bbox()).collect();
    let mut suppressed = vec![false; order.len()];
    let mut keep = Vec::new();
    for i in 0..order.len() {
        if suppressed[i] {
            continue;
        }
        keep.push(order[i]);
        for j in i + 1..order.len() {
            if !suppressed[j] && iou_box(&boxes[i], &boxes[j]) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    Ok(keep)
}
