use alloc::vec::Vec;

use super::{extract, forward, CpnConfig, Parameters, Result};
use crate::data::LabeledImage;
use crate::geometry::rasterize;
use crate::metrics::{Evaluation, Region};
use crate::nms::Detection;

/// Forward pass plus extraction for one image.
pub fn predict(cfg: &CpnConfig, params: &Parameters, img: &LabeledImage) -> Result<Vec<Detection>> {
    let grid = forward(cfg, params, &img.pixels, img.height, img.width)?;
    extract(&grid, cfg)
}

/// Mask-IoU evaluation of the model on labeled images over `thresholds`.
pub fn evaluate(
    cfg: &CpnConfig,
    params: &Parameters,
    images: &[LabeledImage],
    thresholds: &[f64],
) -> Result<Evaluation> {
    let mut eval = Evaluation::new(thresholds);
    for img in images {
        let dets = predict(cfg, params, img)?;
        let preds: Vec<Region> = dets
            .iter()
            .map(|d| Region::Mask(rasterize(&d.contour, img.height, img.width)))
            .collect();
        let gts = img.masks().into_iter().map(Region::Mask).collect::<Vec<_>>();
        eval.add(&preds, &gts)?;
    }
    Ok(eval)
}
