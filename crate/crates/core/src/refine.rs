//! Local refinement of contour coordinates through a residual field.
//!
//! Each iteration snaps the point to the nearest integer grid position and
//! adds `margin * tanh(v)` read from the field at that position, so a single
//! step moves the point by at most `margin` per axis away from the rounded
//! position. Rounding is half-to-even; lookups outside the field are
//! clamped to the border.

use alloc::vec::Vec;

use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RefineError {
    #[error("refinement margin must be positive and finite, got {0}")]
    Margin(f64),
    #[error("residual field needs {expected} values for {height}x{width}x2, got {got}")]
    FieldSize {
        height: usize,
        width: usize,
        expected: usize,
        got: usize,
    },
    #[error("residual field contains non-finite values")]
    NonFinite,
}

/// Read access to a two-channel residual map.
pub trait Residuals {
    fn height(&self) -> usize;
    fn width(&self) -> usize;
    /// Pre-activation `(vx, vy)` at column `ix`, row `iy`.
    fn residual(&self, ix: usize, iy: usize) -> (f64, f64);
}

/// Full-resolution residual field, stored channel-planar (`[2, H, W]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ResidualField {
    /// From channel-planar data: all x residuals, then all y residuals.
    pub fn from_planar(height: usize, width: usize, data: Vec<f64>) -> Result<Self, RefineError> {
        let expected = 2 * height * width;
        if data.len() != expected || expected == 0 {
            return Err(RefineError::FieldSize {
                height,
                width,
                expected,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(RefineError::NonFinite);
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// From pixel-interleaved data (`[H, W, 2]`).
    pub fn from_interleaved(height: usize, width: usize, data: &[f64]) -> Result<Self, RefineError> {
        let plane = height * width;
        if data.len() != 2 * plane {
            return Err(RefineError::FieldSize {
                height,
                width,
                expected: 2 * plane,
                got: data.len(),
            });
        }
        let mut planar = alloc::vec![0.0; 2 * plane];
        for i in 0..plane {
            planar[i] = data[2 * i];
            planar[plane + i] = data[2 * i + 1];
        }
        Self::from_planar(height, width, planar)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: alloc::vec![0.0; 2 * height * width],
        }
    }

    pub fn planar(&self) -> &[f64] {
        &self.data
    }

    pub fn set(&mut self, ix: usize, iy: usize, vx: f64, vy: f64) {
        let plane = self.height * self.width;
        let i = iy * self.width + ix;
        self.data[i] = vx;
        self.data[plane + i] = vy;
    }
}

impl Residuals for ResidualField {
    fn height(&self) -> usize {
        self.height
    }

    fn width(&self) -> usize {
        self.width
    }

    fn residual(&self, ix: usize, iy: usize) -> (f64, f64) {
        let plane = self.height * self.width;
        let i = iy * self.width + ix;
        (self.data[i], self.data[plane + i])
    }
}

/// Where the final iteration read the field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lookup {
    pub ix: usize,
    pub iy: usize,
    /// `(tanh(vx), tanh(vy))` at that position.
    pub tanh: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refined {
    pub x: f64,
    pub y: f64,
    /// `None` when zero iterations ran.
    pub last: Option<Lookup>,
    /// Fingerprint of every rounded position visited, before clamping.
    pub path: u64,
}

#[inline]
fn clamp_index(v: f64, len: usize) -> usize {
    if v <= 0.0 {
        0
    } else if v >= (len - 1) as f64 {
        len - 1
    } else {
        v as usize
    }
}

/// Refinement that also reports the last field lookup (for gradients).
/// `margin` is assumed valid.
pub fn refine_traced<R: Residuals + ?Sized>(
    mut x: f64,
    mut y: f64,
    field: &R,
    iterations: usize,
    margin: f64,
) -> Refined {
    let mut last = None;
    let mut path: u64 = 0xcbf2_9ce4_8422_2325;
    for _ in 0..iterations {
        let (rx, ry) = (math::round_half_even(x), math::round_half_even(y));
        for v in [rx, ry] {
            path = (path ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3);
        }
        let ix = clamp_index(rx, field.width());
        let iy = clamp_index(ry, field.height());
        let (vx, vy) = field.residual(ix, iy);
        let tanh = (math::tanh(vx), math::tanh(vy));
        x = rx + margin * tanh.0;
        y = ry + margin * tanh.1;
        last = Some(Lookup { ix, iy, tanh });
    }
    Refined { x, y, last, path }
}

/// Applies `iterations` refinement steps with correction margin `margin`.
pub fn refine<R: Residuals + ?Sized>(
    x: f64,
    y: f64,
    field: &R,
    iterations: usize,
    margin: f64,
) -> Result<(f64, f64), RefineError> {
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(RefineError::Margin(margin));
    }
    let r = refine_traced(x, y, field, iterations, margin);
    Ok((r.x, r.y))
}

/// Refines every point of a contour.
pub fn refine_contour<R: Residuals + ?Sized>(
    points: &[crate::Point],
    field: &R,
    iterations: usize,
    margin: f64,
) -> Result<Vec<crate::Point>, RefineError> {
    points
        .iter()
        .map(|p| refine(p.x, p.y, field, iterations, margin).map(|(x, y)| crate::Point::new(x, y)))
        .collect()
}
