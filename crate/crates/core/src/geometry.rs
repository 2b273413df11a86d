//! Boxes, masks, polygon rasterization and IoU.
//!
//! Pixel `(row i, col j)` covers `[j, j+1) x [i, i+1)` and is sampled at its
//! center `(j + 0.5, i + 0.5)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::efd::Point;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("bounding box of an empty point set")]
    Empty,
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    MaskDims(usize, usize, usize, usize),
    #[error("invalid box: min exceeds max")]
    InvalidBox,
}

/// Axis-aligned box `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        if !(x_min <= x_max && y_min <= y_max) {
            return Err(GeometryError::InvalidBox);
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

/// Componentwise min/max of the points.
pub fn bbox_of(points: &[Point]) -> Result<BBox, GeometryError> {
    let first = points.first().ok_or(GeometryError::Empty)?;
    let mut b = BBox {
        x_min: first.x,
        y_min: first.y,
        x_max: first.x,
        y_max: first.y,
    };
    for p in &points[1..] {
        b.x_min = b.x_min.min(p.x);
        b.y_min = b.y_min.min(p.y);
        b.x_max = b.x_max.max(p.x);
        b.y_max = b.y_max.max(p.y);
    }
    Ok(b)
}

/// IoU of two closed boxes. Zero-area boxes have IoU 0 with anything.
pub fn iou_box(a: &BBox, b: &BBox) -> f64 {
    let (aa, ab) = (a.area(), b.area());
    if aa <= 0.0 || ab <= 0.0 {
        return 0.0;
    }
    let w = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let h = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    inter / (aa + ab - inter)
}

/// Binary `height x width` image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Option<Self> {
        (bits.len() == height * width).then_some(Self {
            height,
            width,
            bits,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.bits[row * self.width + col] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn intersects(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b)
    }
}

/// `|A & B| / |A | B|`, 0 when both are empty.
pub fn iou_mask(a: &Mask, b: &Mask) -> Result<f64, GeometryError> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(GeometryError::MaskDims(a.height, a.width, b.height, b.width));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Winding contribution of edge `p -> q` for a horizontal ray at height `y`:
/// `+1` going up (`p.y <= y < q.y`), `-1` going down, else `None`.
/// Returns the crossing abscissa alongside.
#[inline]
fn edge_crossing(p: Point, q: Point, y: f64) -> Option<(f64, i32)> {
    let dir = if p.y <= y && y < q.y {
        1
    } else if q.y <= y && y < p.y {
        -1
    } else {
        return None;
    };
    let x = p.x + (y - p.y) * (q.x - p.x) / (q.y - p.y);
    Some((x, dir))
}

/// Nonzero-winding point-in-polygon test.
///
/// Counts edges crossing the horizontal ray to the right of `pt`; a point
/// exactly on a crossing is not to its right, and edges follow the
/// half-open `[lower y, upper y)` rule.
pub fn point_in_polygon(points: &[Point], pt: Point) -> bool {
    let n = points.len();
    if n < 3 {
        return false;
    }
    let mut winding = 0;
    for i in 0..n {
        if let Some((x, dir)) = edge_crossing(points[i], points[(i + 1) % n], pt.y) {
            if x > pt.x {
                winding += dir;
            }
        }
    }
    winding != 0
}

/// Scanline rasterization of a closed polygon under the nonzero rule,
/// sampling pixel centers. Same decision rule as [`point_in_polygon`].
/// Degenerate polygons give an empty mask.
pub fn rasterize(points: &[Point], height: usize, width: usize) -> Mask {
    let mut mask = Mask::new(height, width);
    let n = points.len();
    if n < 3 || width == 0 {
        return mask;
    }
    let y_lo = points.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let y_hi = points.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    if !(y_lo.is_finite() && y_hi.is_finite()) {
        return mask;
    }
    let mut crossings: Vec<(f64, i32)> = Vec::with_capacity(n);
    for row in 0..height {
        let y = row as f64 + 0.5;
        if y < y_lo || y >= y_hi {
            continue;
        }
        crossings.clear();
        for i in 0..n {
            if let Some(c) = edge_crossing(points[i], points[(i + 1) % n], y) {
                crossings.push(c);
            }
        }
        if crossings.is_empty() {
            continue;
        }
        crossings.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Winding to the right of x = total - (crossings at or left of x);
        // the total over a closed polygon is zero.
        let mut next = 0;
        let mut left = 0;
        for col in 0..width {
            let x = col as f64 + 0.5;
            while next < crossings.len() && crossings[next].0 <= x {
                left += crossings[next].1;
                next += 1;
            }
            if left != 0 {
                mask.set(row, col, true);
            }
        }
    }
    mask
}
