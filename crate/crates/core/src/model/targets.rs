use alloc::vec;
use alloc::vec::Vec;

use super::{cell_center, CpnConfig, Result};
use crate::data::LabeledImage;
use crate::efd::{canonicalize, fit_descriptor, FourierDescriptor, Point, Polyline};
use crate::geometry::point_in_polygon;

/// Supervision for one positive cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetCell {
    /// Row-major cell index.
    pub cell: usize,
    /// Index of the assigned instance in the image.
    pub instance: usize,
    /// Target descriptor with absolute offset `(a_0, c_0)`.
    pub descriptor: FourierDescriptor,
    /// `(a_0, c_0)` minus the cell center, in pixels.
    pub relative_offset: (f64, f64),
}

/// Per-cell detection targets of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGrid {
    pub rows: usize,
    pub cols: usize,
    /// `rows * cols` values in `{0, 1}`.
    pub o: Vec<f64>,
    /// Positive cells in row-major order.
    pub cells: Vec<TargetCell>,
    /// Instances dropped because their polygon is degenerate.
    pub skipped: usize,
}

impl TargetGrid {
    pub fn positives(&self) -> usize {
        self.cells.len()
    }
}

/// A cell is positive when its center lies inside at least one instance;
/// it is assigned to the containing instance whose descriptor offset is
/// nearest to the cell center (ties: lower instance index).
pub fn build_targets(img: &LabeledImage, cfg: &CpnConfig) -> Result<TargetGrid> {
    cfg.validate()?;
    let s = cfg.stride;
    let rows = img.height.div_ceil(s);
    let cols = img.width.div_ceil(s);

    let mut skipped = 0;
    let mut instances: Vec<(usize, Polyline, FourierDescriptor)> = Vec::new();
    for (k, poly) in img.instances.iter().enumerate() {
        match canonicalize(poly).and_then(|c| fit_descriptor(&c, cfg.order).map(|d| (c, d))) {
            Ok((c, d)) => instances.push((k, c, d)),
            Err(_) => skipped += 1,
        }
    }

    let mut o = vec![0.0; rows * cols];
    let mut cells = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let (cx, cy) = cell_center(r, c, s);
            let center = Point::new(cx, cy);
            let mut best: Option<(f64, usize)> = None;
            for (slot, (_, poly, desc)) in instances.iter().enumerate() {
                if !point_in_polygon(poly.points(), center) {
                    continue;
                }
                let d2 = (desc.a[0] - cx) * (desc.a[0] - cx) + (desc.c[0] - cy) * (desc.c[0] - cy);
                if best.is_none_or(|(bd, _)| d2 < bd) {
                    best = Some((d2, slot));
                }
            }
            if let Some((_, slot)) = best {
                let (instance, _, desc) = &instances[slot];
                o[r * cols + c] = 1.0;
                cells.push(TargetCell {
                    cell: r * cols + c,
                    instance: *instance,
                    descriptor: desc.clone(),
                    relative_offset: (desc.a[0] - cx, desc.c[0] - cy),
                });
            }
        }
    }
    Ok(TargetGrid {
        rows,
        cols,
        o,
        cells,
        skipped,
    })
}
