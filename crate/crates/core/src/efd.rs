//! Fourier contour descriptors.
//!
//! A descriptor of order `N` maps a location `t` in `[0, 1]` to
//!
//! ```text
//! x(t) = a_0 + sum_{n=1..N} a_n sin(2 pi n t) + b_n cos(2 pi n t)
//! y(t) = c_0 + sum_{n=1..N} c_n sin(2 pi n t) + d_n cos(2 pi n t)
//! ```
//!
//! and always traces a closed curve. Ground-truth descriptors are fitted
//! from annotation polygons traversed at constant speed (arc length), after
//! bringing the polygon into a canonical orientation and start vertex.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EfdError {
    #[error("descriptor order must be at least 1, got {0}")]
    Order(usize),
    #[error("no sample locations given")]
    NoSamples,
    #[error("sample location {0} outside [0, 1]")]
    SampleRange(f64),
    #[error("sample locations must be strictly increasing")]
    NotIncreasing,
    #[error("polygon needs at least 3 distinct points, got {0}")]
    TooFewPoints(usize),
    #[error("polygon encloses zero area")]
    Degenerate,
    #[error("non-finite coordinate or coefficient")]
    NonFinite,
    #[error("coefficient arrays do not match order {order}")]
    Length { order: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        math::sqrt((self.x - other.x) * (self.x - other.x) + (self.y - other.y) * (self.y - other.y))
    }
}

/// Distance from `p` to the segment `a`-`b`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.distance(Point::new(a.x + t * dx, a.y + t * dy))
}

/// A closed polygon. The edge from the last point back to the first is implied.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Point>,
}

impl Polyline {
    /// Builds a polygon, dropping consecutive duplicates (including a
    /// repeated closing point).
    pub fn new(points: Vec<Point>) -> Result<Self, EfdError> {
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(EfdError::NonFinite);
        }
        let mut out: Vec<Point> = Vec::with_capacity(points.len());
        for p in points {
            if out.last() != Some(&p) {
                out.push(p);
            }
        }
        while out.len() > 1 && out.first() == out.last() {
            out.pop();
        }
        if out.len() < 3 {
            return Err(EfdError::TooFewPoints(out.len()));
        }
        Ok(Self { points: out })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    /// Shoelace area; positive for counter-clockwise order in a y-up frame.
    pub fn signed_area(&self) -> f64 {
        signed_area(&self.points)
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| a.distance(b)).sum()
    }

    /// Consecutive vertex pairs, closing edge included.
    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.points.len();
        (0..n).map(move |i| (self.points[i], self.points[(i + 1) % n]))
    }

    /// Arc-length location of every vertex, plus a final `1.0` for the
    /// closing vertex: `len() + 1` non-decreasing values from `0` to `1`.
    pub fn arc_params(&self) -> Vec<f64> {
        let total = self.perimeter();
        let mut ts = Vec::with_capacity(self.points.len() + 1);
        let mut acc = 0.0;
        ts.push(0.0);
        for (a, b) in self.edges().take(self.points.len() - 1) {
            acc += a.distance(b);
            ts.push(acc / total);
        }
        ts.push(1.0);
        ts
    }

    /// Distance from `p` to the polygon boundary.
    pub fn distance_to(&self, p: Point) -> f64 {
        self.edges()
            .map(|(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Polyline {
        Polyline {
            points: self
                .points
                .iter()
                .map(|p| Point::new(p.x + dx, p.y + dy))
                .collect(),
        }
    }
}

pub fn signed_area(points: &[Point]) -> f64 {
    let n = points.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (p, q) = (points[i], points[(i + 1) % n]);
            p.x * q.y - q.x * p.y
        })
        .sum();
    0.5 * twice
}

/// Canonical form: positive signed area, starting at the vertex with the
/// smallest `y` (ties: smallest `x`). Vertices are otherwise unchanged; the
/// curve parameter is arc length (see [`Polyline::arc_params`]).
pub fn canonicalize(p: &Polyline) -> Result<Polyline, EfdError> {
    let area = p.signed_area();
    if area == 0.0 || !area.is_finite() {
        return Err(EfdError::Degenerate);
    }
    let mut pts = p.points.clone();
    if area < 0.0 {
        pts.reverse();
    }
    let start = pts
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    pts.rotate_left(start);
    Ok(Polyline { points: pts })
}

/// Length of the flat descriptor vector, `4N + 2`.
pub fn descriptor_dim(order: usize) -> Result<usize, EfdError> {
    if order < 1 {
        return Err(EfdError::Order(order));
    }
    Ok(4 * order + 2)
}

/// `S` uniform locations `t_s = s / S`, `s = 0..S`.
pub fn uniform_ts(samples: usize) -> Vec<f64> {
    (0..samples).map(|s| s as f64 / samples as f64).collect()
}

/// Truncated Fourier series of a closed contour (period 1).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FourierDescriptor {
    pub order: usize,
    /// `a_0..a_N`: `a_0` is the x offset, `a_n` the sine terms of x.
    pub a: Vec<f64>,
    /// `b_1..b_N`: cosine terms of x.
    pub b: Vec<f64>,
    /// `c_0..c_N`: `c_0` is the y offset, `c_n` the sine terms of y.
    pub c: Vec<f64>,
    /// `d_1..d_N`: cosine terms of y.
    pub d: Vec<f64>,
}

impl FourierDescriptor {
    pub fn zeros(order: usize) -> Result<Self, EfdError> {
        descriptor_dim(order)?;
        Ok(Self {
            order,
            a: vec![0.0; order + 1],
            b: vec![0.0; order],
            c: vec![0.0; order + 1],
            d: vec![0.0; order],
        })
    }

    /// Circle of radius `r` around `(cx, cy)`, starting at angle 0.
    pub fn circle(order: usize, cx: f64, cy: f64, r: f64) -> Result<Self, EfdError> {
        let mut d = Self::zeros(order)?;
        d.a[0] = cx;
        d.c[0] = cy;
        d.b[0] = r;
        d.c[1] = r;
        Ok(d)
    }

    /// Checks array lengths and finiteness.
    pub fn validate(&self) -> Result<(), EfdError> {
        descriptor_dim(self.order)?;
        let n = self.order;
        if self.a.len() != n + 1 || self.c.len() != n + 1 || self.b.len() != n || self.d.len() != n {
            return Err(EfdError::Length { order: n });
        }
        if self.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(EfdError::NonFinite);
        }
        Ok(())
    }

    /// `[a_0..a_N, b_1..b_N, c_0..c_N, d_1..d_N]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(4 * self.order + 2);
        v.extend_from_slice(&self.a);
        v.extend_from_slice(&self.b);
        v.extend_from_slice(&self.c);
        v.extend_from_slice(&self.d);
        v
    }

    pub fn from_flat(order: usize, flat: &[f64]) -> Result<Self, EfdError> {
        if flat.len() != descriptor_dim(order)? {
            return Err(EfdError::Length { order });
        }
        let n = order;
        let d = Self {
            order,
            a: flat[..=n].to_vec(),
            b: flat[n + 1..2 * n + 1].to_vec(),
            c: flat[2 * n + 1..3 * n + 2].to_vec(),
            d: flat[3 * n + 2..].to_vec(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn offset(&self) -> Point {
        Point::new(self.a[0], self.c[0])
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut d = self.clone();
        d.a[0] += dx;
        d.c[0] += dy;
        d
    }

    /// The same curve started at location `delta`: `x'(t) = x(t + delta)`.
    pub fn shift_phase(&self, delta: f64) -> Self {
        let mut d = self.clone();
        for k in 0..self.order {
            let (s, c) = math::sin_cos(math::TAU * (k + 1) as f64 * delta);
            let (a, b) = (self.a[k + 1], self.b[k]);
            d.a[k + 1] = a * c - b * s;
            d.b[k] = a * s + b * c;
            let (cc, dd) = (self.c[k + 1], self.d[k]);
            d.c[k + 1] = cc * c - dd * s;
            d.d[k] = cc * s + dd * c;
        }
        d
    }

    /// Point at a single location (no range check).
    pub fn point_at(&self, t: f64) -> Point {
        let (mut x, mut y) = (self.a[0], self.c[0]);
        for k in 0..self.order {
            let (s, c) = math::sin_cos(math::TAU * (k + 1) as f64 * t);
            x += self.a[k + 1] * s + self.b[k] * c;
            y += self.c[k + 1] * s + self.d[k] * c;
        }
        Point::new(x, y)
    }
}

fn check_ts(ts: &[f64]) -> Result<(), EfdError> {
    if ts.is_empty() {
        return Err(EfdError::NoSamples);
    }
    for &t in ts {
        if !(0.0..=1.0).contains(&t) {
            return Err(EfdError::SampleRange(t));
        }
    }
    if ts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EfdError::NotIncreasing);
    }
    Ok(())
}

/// Contour points at strictly increasing locations `ts` in `[0, 1]`.
pub fn sample_contour(desc: &FourierDescriptor, ts: &[f64]) -> Result<Vec<Point>, EfdError> {
    desc.validate()?;
    check_ts(ts)?;
    Ok(ts.iter().map(|&t| desc.point_at(t)).collect())
}

/// Order-`order` descriptor of the polygon traversed at constant speed.
///
/// The polygon is canonicalized first. Coefficients are exact integrals of
/// the piecewise-linear coordinate functions: for a segment with slope
/// `m = dx/dt`, integrating by parts over one period gives
/// `a_n = 2/w^2 * sum m (sin w t_{k+1} - sin w t_k)` and
/// `b_n = 2/w^2 * sum m (cos w t_{k+1} - cos w t_k)` with `w = 2 pi n`.
pub fn fit_descriptor(p: &Polyline, order: usize) -> Result<FourierDescriptor, EfdError> {
    descriptor_dim(order)?;
    let canon = canonicalize(p)?;
    let pts = canon.points();
    let ts = canon.arc_params();
    let nseg = pts.len();
    let mut desc = FourierDescriptor::zeros(order)?;

    let mut slopes = Vec::with_capacity(nseg);
    for k in 0..nseg {
        let (p0, p1) = (pts[k], pts[(k + 1) % nseg]);
        let dt = ts[k + 1] - ts[k];
        desc.a[0] += dt * 0.5 * (p0.x + p1.x);
        desc.c[0] += dt * 0.5 * (p0.y + p1.y);
        if dt > 0.0 {
            slopes.push(((p1.x - p0.x) / dt, (p1.y - p0.y) / dt));
        } else {
            slopes.push((0.0, 0.0));
        }
    }

    for n in 1..=order {
        let w = math::TAU * n as f64;
        let (mut sx, mut cx, mut sy, mut cy) = (0.0, 0.0, 0.0, 0.0);
        let (mut s_prev, mut c_prev) = math::sin_cos(w * ts[0]);
        for (k, &(mx, my)) in slopes.iter().enumerate() {
            let (s_next, c_next) = math::sin_cos(w * ts[k + 1]);
            let (ds, dc) = (s_next - s_prev, c_next - c_prev);
            sx += mx * ds;
            cx += mx * dc;
            sy += my * ds;
            cy += my * dc;
            s_prev = s_next;
            c_prev = c_next;
        }
        let scale = 2.0 / (w * w);
        desc.a[n] = scale * sx;
        desc.b[n - 1] = scale * cx;
        desc.c[n] = scale * sy;
        desc.d[n - 1] = scale * cy;
    }
    desc.validate()?;
    Ok(desc)
}
