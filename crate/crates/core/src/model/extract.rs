use alloc::vec::Vec;

use super::{CpnConfig, ProposalGrid, Result};
use crate::efd::{sample_contour, uniform_ts};
use crate::geometry::bbox_of;
use crate::nms::{nms, Detection};
use crate::refine::refine_contour;

/// Turns a proposal grid into final detections: threshold scores, decode
/// descriptors at `S` uniform locations, refine, then suppress duplicates.
/// Detections come back in NMS order (best first).
pub fn extract(grid: &ProposalGrid, cfg: &CpnConfig) -> Result<Vec<Detection>> {
    let ts = uniform_ts(cfg.samples);
    let mut proposals = Vec::new();
    for (cell, &score) in grid.scores.iter().enumerate() {
        if score <= cfg.score_threshold {
            continue;
        }
        let descriptor = grid.descriptor(cell);
        let sampled = sample_contour(&descriptor, &ts)?;
        let contour = refine_contour(
            &sampled,
            &grid.residual_field,
            cfg.refine_iterations,
            cfg.refine_margin,
        )?;
        let bbox = bbox_of(&contour).expect("S >= 3 points");
        proposals.push(Detection {
            score,
            descriptor,
            contour,
            bbox,
            cell,
        });
    }
    let keep = nms(&proposals, cfg.nms_threshold)?;
    let mut slots: Vec<Option<Detection>> = proposals.into_iter().map(Some).collect();
    Ok(keep
        .into_iter()
        .map(|i| slots[i].take().expect("kept once"))
        .collect())
}
