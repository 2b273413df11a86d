//! Independent reference implementations used by the integration and
//! acceptance tests. None of these call into the crate's own math.

#![allow(dead_code)]

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Direct evaluation of the truncated series at `t`, from plain coefficient
/// slices laid out as `a[0..=N], b[1..=N], c[0..=N], d[1..=N]`.
pub fn series_point(a: &[f64], b: &[f64], c: &[f64], d: &[f64], t: f64) -> (f64, f64) {
    let mut x = a[0];
    let mut y = c[0];
    for n in 1..a.len() {
        let w = 2.0 * PI * n as f64 * t;
        x += a[n] * w.sin() + b[n - 1] * w.cos();
        y += c[n] * w.sin() + d[n - 1] * w.cos();
    }
    (x, y)
}

/// Shortest distance from `p` to the closed polygon `poly`.
pub fn distance_to_polygon(poly: &[(f64, f64)], p: (f64, f64)) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (ax, ay) = poly[i];
            let (bx, by) = poly[(i + 1) % n];
            let (dx, dy) = (bx - ax, by - ay);
            let len2 = dx * dx + dy * dy;
            let u = if len2 == 0.0 {
                0.0
            } else {
                (((p.0 - ax) * dx + (p.1 - ay) * dy) / len2).clamp(0.0, 1.0)
            };
            let (qx, qy) = (ax + u * dx, ay + u * dy);
            ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// `m` points equally spaced in arc length along the closed polygon,
/// starting at its first vertex.
pub fn resample_arclength(poly: &[(f64, f64)], m: usize) -> Vec<(f64, f64)> {
    let n = poly.len();
    let seg: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt()
        })
        .collect();
    let total: f64 = seg.iter().sum();
    let mut out = Vec::with_capacity(m);
    let mut i = 0;
    let mut start = 0.0;
    for k in 0..m {
        let s = total * k as f64 / m as f64;
        while i + 1 < n && start + seg[i] <= s {
            start += seg[i];
            i += 1;
        }
        let u = if seg[i] > 0.0 { (s - start) / seg[i] } else { 0.0 };
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        out.push((a.0 + u * (b.0 - a.0), a.1 + u * (b.1 - a.1)));
    }
    out
}

/// Fourier coefficients of the arc-length parametrized polygon by FFT of
/// `m` equally spaced samples. Returns `(a, b, c, d)`.
pub fn fft_descriptor(poly: &[(f64, f64)], order: usize, m: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let pts = resample_arclength(poly, m);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(m);
    let spectrum = |vals: Vec<f64>| {
        let mut buf: Vec<Complex<f64>> = vals.into_iter().map(|v| Complex::new(v, 0.0)).collect();
        fft.process(&mut buf);
        buf
    };
    let xs = spectrum(pts.iter().map(|p| p.0).collect());
    let ys = spectrum(pts.iter().map(|p| p.1).collect());
    let mf = m as f64;
    let mut a = vec![xs[0].re / mf];
    let mut c = vec![ys[0].re / mf];
    let mut b = Vec::new();
    let mut d = Vec::new();
    for k in 1..=order {
        // X_k / M = (b_k - i a_k) / 2 for x(t) = sum a_k sin + b_k cos.
        a.push(-2.0 * xs[k].im / mf);
        b.push(2.0 * xs[k].re / mf);
        c.push(-2.0 * ys[k].im / mf);
        d.push(2.0 * ys[k].re / mf);
    }
    (a, b, c, d)
}

fn is_left(p0: (f64, f64), p1: (f64, f64), p: (f64, f64)) -> f64 {
    (p1.0 - p0.0) * (p.1 - p0.1) - (p.0 - p0.0) * (p1.1 - p0.1)
}

/// Winding number of `poly` around `p` (isLeft formulation, half-open in y).
pub fn winding_number(poly: &[(f64, f64)], p: (f64, f64)) -> i32 {
    let n = poly.len();
    let mut wn = 0;
    for i in 0..n {
        let (v0, v1) = (poly[i], poly[(i + 1) % n]);
        if v0.1 <= p.1 {
            if v1.1 > p.1 && is_left(v0, v1, p) > 0.0 {
                wn += 1;
            }
        } else if v1.1 <= p.1 && is_left(v0, v1, p) < 0.0 {
            wn -= 1;
        }
    }
    wn
}

/// Row-major mask by testing every pixel center.
pub fn brute_force_mask(poly: &[(f64, f64)], height: usize, width: usize) -> Vec<bool> {
    let mut out = Vec::with_capacity(height * width);
    for i in 0..height {
        for j in 0..width {
            out.push(winding_number(poly, (j as f64 + 0.5, i as f64 + 0.5)) != 0);
        }
    }
    out
}

/// Round half to even, written out.
pub fn rint(v: f64) -> f64 {
    let f = v.floor();
    let diff = v - f;
    if diff > 0.5 {
        f + 1.0
    } else if diff < 0.5 {
        f
    } else if f % 2.0 == 0.0 {
        f
    } else {
        f + 1.0
    }
}

/// Line-by-line refinement loop over a field given as `field[y][x] = (vx, vy)`.
/// tanh comes from libm, the routine the crate links, so results compare
/// bit for bit.
pub fn refine_literal(x0: f64, y0: f64, field: &[Vec<(f64, f64)>], r: usize, sigma: f64) -> (f64, f64) {
    let h = field.len() as i64;
    let w = field[0].len() as i64;
    let (mut x, mut y) = (x0, y0);
    for _ in 0..r {
        let xr = rint(x);
        let yr = rint(y);
        let ix = (xr as i64).clamp(0, w - 1) as usize;
        let iy = (yr as i64).clamp(0, h - 1) as usize;
        let (vx, vy) = field[iy][ix];
        x = xr + sigma * libm::tanh(vx);
        y = yr + sigma * libm::tanh(vy);
    }
    (x, y)
}

/// Box IoU for `[x0, y0, x1, y1]`.
pub fn box_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 || area(a) <= 0.0 || area(b) <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Reference NMS: repeatedly take the best remaining box (score, then tie
/// key, then index) and delete everything overlapping it by more than `thr`.
pub fn nms_reference(boxes: &[[f64; 4]], scores: &[f64], keys: &[usize], thr: f64) -> Vec<usize> {
    let mut alive: Vec<usize> = (0..boxes.len()).collect();
    let mut keep = Vec::new();
    while !alive.is_empty() {
        let mut best = alive[0];
        for &i in &alive[1..] {
            let better = scores[i] > scores[best]
                || (scores[i] == scores[best] && (keys[i] < keys[best] || (keys[i] == keys[best] && i < best)));
            if better {
                best = i;
            }
        }
        keep.push(best);
        alive.retain(|&i| i != best && box_iou(boxes[i], boxes[best]) <= thr);
    }
    keep
}

/// Largest number of disjoint (pred, gt) pairs with IoU >= tau and IoU > 0,
/// by trying every assignment.
pub fn best_assignment(ious: &[Vec<f64>], n_gt: usize, tau: f64) -> usize {
    fn go(i: usize, ious: &[Vec<f64>], used: &mut Vec<bool>, tau: f64) -> usize {
        if i == ious.len() {
            return 0;
        }
        let mut best = go(i + 1, ious, used, tau);
        for j in 0..used.len() {
            if !used[j] && ious[i][j] >= tau && ious[i][j] > 0.0 {
                used[j] = true;
                best = best.max(1 + go(i + 1, ious, used, tau));
                used[j] = false;
            }
        }
        best
    }
    go(0, ious, &mut vec![false; n_gt], tau)
}

/// Greedy matching written as a loop that repeatedly picks the largest
/// remaining admissible IoU (lowest pred, then gt index on ties).
pub fn greedy_script(ious: &[Vec<f64>], n_gt: usize, tau: f64) -> Vec<(usize, usize)> {
    let mut pu = vec![false; ious.len()];
    let mut gu = vec![false; n_gt];
    let mut pairs = Vec::new();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, row) in ious.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if pu[i] || gu[j] || v < tau || v <= 0.0 {
                    continue;
                }
                if best.map_or(true, |(bv, _, _)| v > bv) {
                    best = Some((v, i, j));
                }
            }
        }
        match best {
            Some((_, i, j)) => {
                pu[i] = true;
                gu[j] = true;
                pairs.push((i, j));
            }
            None => return pairs,
        }
    }
}

/// Fixed random polygon generators shared by tests.
pub mod polygons {
    use rand::Rng;

    /// Star-ish polygon with `n` vertices around `(cx, cy)`; may self-intersect
    /// when `jitter` is large.
    pub fn random_polygon<R: Rng>(rng: &mut R, n: usize, cx: f64, cy: f64, rmax: f64, jitter: f64) -> Vec<(f64, f64)> {
        (0..n)
            .map(|k| {
                let base = std::f64::consts::TAU * k as f64 / n as f64;
                let ang = base + rng.random_range(-jitter..=jitter);
                let r = rng.random_range(0.2 * rmax..rmax);
                (cx + r * ang.cos(), cy + r * ang.sin())
            })
            .collect()
    }

    /// Arbitrary vertices on the integer lattice (self-intersections allowed).
    pub fn lattice_polygon<R: Rng>(rng: &mut R, n: usize, size: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|_| (rng.random_range(0..=size) as f64, rng.random_range(0..=size) as f64))
            .collect()
    }

    /// `per_side` vertices on each side of the axis-aligned square.
    pub fn square(x0: f64, y0: f64, side: f64, per_side: usize) -> Vec<(f64, f64)> {
        let mut v = Vec::with_capacity(4 * per_side);
        let corners = [(x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side)];
        for k in 0..4 {
            let (a, b) = (corners[k], corners[(k + 1) % 4]);
            for i in 0..per_side {
                let u = i as f64 / per_side as f64;
                v.push((a.0 + u * (b.0 - a.0), a.1 + u * (b.1 - a.1)));
            }
        }
        v
    }
}
