//! Labeled images and the synthetic shape generator.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::efd::{canonicalize, sample_contour, uniform_ts, EfdError, FourierDescriptor, Point, Polyline};
use crate::geometry::{bbox_of, rasterize, Mask};
use crate::math;

/// Smallest accepted image side.
pub const MIN_SIDE: usize = 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("image {height}x{width}: {reason}")]
    Image {
        height: usize,
        width: usize,
        reason: String,
    },
    #[error("image {image}: could not place object {object} after {attempts} attempts")]
    Placement {
        image: usize,
        object: usize,
        attempts: usize,
    },
    #[error(transparent)]
    Efd(#[from] EfdError),
}

/// Grayscale image in `[0, 1]` (row-major) with instance outlines.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
    pub instances: Vec<Polyline>,
}

impl LabeledImage {
    pub fn new(
        height: usize,
        width: usize,
        pixels: Vec<f64>,
        instances: Vec<Polyline>,
    ) -> Result<Self, DataError> {
        let bad = |reason: String| DataError::Image {
            height,
            width,
            reason,
        };
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(bad(format!("sides must be at least {MIN_SIDE}")));
        }
        if pixels.len() != height * width {
            return Err(bad(format!("{} pixel values", pixels.len())));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(bad(format!("pixel value {v} outside [0, 1]")));
        }
        for (k, p) in instances.iter().enumerate() {
            if p.signed_area() == 0.0 {
                return Err(bad(format!("instance {k} has zero area")));
            }
        }
        Ok(Self {
            height,
            width,
            pixels,
            instances,
        })
    }

    pub fn pixel(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Rasterized instance masks, in instance order.
    pub fn masks(&self) -> Vec<Mask> {
        self.instances
            .iter()
            .map(|p| rasterize(p.points(), self.height, self.width))
            .collect()
    }
}

/// Relative frequency of each shape family.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ShapeMix {
    pub circle: f64,
    pub ellipse: f64,
    pub triangle: f64,
    /// Random low-order Fourier outlines, usually non-convex.
    pub blob: f64,
}

impl Default for ShapeMix {
    fn default() -> Self {
        Self {
            circle: 1.0,
            ellipse: 1.0,
            triangle: 1.0,
            blob: 1.0,
        }
    }
}

impl ShapeMix {
    fn weights(&self) -> [f64; 4] {
        [self.circle, self.ellipse, self.triangle, self.blob]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Circle,
    Ellipse,
    Triangle,
    Blob,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Number of images to generate.
    pub images: usize,
    /// Inclusive range of objects per image.
    pub objects: [usize; 2],
    /// Inclusive range of object radii in pixels.
    pub radius: [f64; 2],
    pub shapes: ShapeMix,
    pub allow_overlap: bool,
    pub background: [f64; 2],
    pub foreground: [f64; 2],
    /// Standard deviation of the additive Gaussian pixel noise.
    pub noise: f64,
    /// Placement tries per object before giving up.
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            images: 200,
            objects: [1, 3],
            radius: [4.0, 8.0],
            shapes: ShapeMix::default(),
            allow_overlap: false,
            background: [0.65, 0.9],
            foreground: [0.1, 0.4],
            noise: 0.03,
            max_attempts: 200,
            seed: 0,
        }
    }
}

/// Vertices used for circles and ellipses.
const ROUND_VERTICES: usize = 64;
/// Free space kept between an object and the image border.
const BORDER: f64 = 1.0;
/// Objects covering fewer pixels are redrawn.
const MIN_PIXELS: usize = 6;

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |m: String| Err(DataError::Config(m));
        if self.height < MIN_SIDE || self.width < MIN_SIDE {
            return fail(format!("image sides must be at least {MIN_SIDE}"));
        }
        let [lo, hi] = self.objects;
        if lo > hi {
            return fail(format!("object range [{lo}, {hi}] is empty"));
        }
        let [rlo, rhi] = self.radius;
        if !(rlo.is_finite() && rhi.is_finite() && rlo > 0.0 && rlo <= rhi) {
            return fail(format!("radius range [{rlo}, {rhi}] is invalid"));
        }
        let side = self.height.min(self.width) as f64;
        if 2.0 * (rlo + BORDER) > side {
            return fail(format!("radius {rlo} does not fit a {}x{} image", self.height, self.width));
        }
        let w = self.shapes.weights();
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return fail("shape weights must be non-negative with a positive sum".into());
        }
        for (name, [a, b]) in [("background", self.background), ("foreground", self.foreground)] {
            if !(0.0 <= a && a <= b && b <= 1.0) {
                return fail(format!("{name} range [{a}, {b}] is not inside [0, 1]"));
            }
        }
        if self.foreground[1] >= self.background[0] {
            return fail("foreground must be darker than background".into());
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return fail(format!("noise {} is invalid", self.noise));
        }
        if self.max_attempts == 0 {
            return fail("max_attempts must be positive".into());
        }
        Ok(())
    }

    /// Largest radius that still fits the image with the border.
    fn radius_cap(&self) -> f64 {
        let side = self.height.min(self.width) as f64;
        self.radius[1].min(side / 2.0 - BORDER)
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn pick_shape(rng: &mut ChaCha8Rng, mix: &ShapeMix) -> Shape {
    let w = mix.weights();
    let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
    let shapes = [Shape::Circle, Shape::Ellipse, Shape::Triangle, Shape::Blob];
    for (s, wi) in shapes.iter().zip(w) {
        if u < wi {
            return *s;
        }
        u -= wi;
    }
    // Rounding can leave u just above the last positive weight.
    shapes[w.iter().rposition(|v| *v > 0.0).unwrap_or(0)]
}

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, angle: f64) -> Vec<Point> {
    let (sa, ca) = math::sin_cos(angle);
    (0..ROUND_VERTICES)
        .map(|k| {
            let (s, c) = math::sin_cos(TAU * k as f64 / ROUND_VERTICES as f64);
            let (x, y) = (rx * c, ry * s);
            Point::new(cx + ca * x - sa * y, cy + sa * x + ca * y)
        })
        .collect()
}

fn outline(rng: &mut ChaCha8Rng, shape: Shape, cx: f64, cy: f64, r: f64) -> Result<Vec<Point>, DataError> {
    Ok(match shape {
        Shape::Circle => ellipse(cx, cy, r, r, 0.0),
        Shape::Ellipse => {
            let ry = r * rng.random_range(0.45..0.85);
            ellipse(cx, cy, r, ry, rng.random_range(0.0..TAU))
        }
        Shape::Triangle => {
            let base = rng.random_range(0.0..TAU);
            (0..3)
                .map(|k| {
                    let a = base + TAU * k as f64 / 3.0 + rng.random_range(-0.35..0.35);
                    let (s, c) = math::sin_cos(a);
                    Point::new(cx + r * c, cy + r * s)
                })
                .collect()
        }
        Shape::Blob => {
            let order = rng.random_range(3..=6);
            // Harmonic k gets amplitude below r / (4 k^2) per coefficient,
            // which keeps the outline simple.
            let mut d = FourierDescriptor::circle(order, cx, cy, 0.8 * r)?;
            for k in 2..=order {
                let amp = r / (4.0 * (k * k) as f64);
                d.a[k] = rng.random_range(-amp..amp);
                d.b[k - 1] = rng.random_range(-amp..amp);
                d.c[k] = rng.random_range(-amp..amp);
                d.d[k - 1] = rng.random_range(-amp..amp);
            }
            sample_contour(&d, &uniform_ts(ROUND_VERTICES))?
        }
    })
}

fn inside_image(points: &[Point], height: usize, width: usize) -> bool {
    match bbox_of(points) {
        Ok(b) => {
            b.x_min >= BORDER
                && b.y_min >= BORDER
                && b.x_max <= width as f64 - BORDER
                && b.y_max <= height as f64 - BORDER
        }
        Err(_) => false,
    }
}

/// One image of the synthetic set, drawn from its own stream `seed + index`.
pub fn generate_one(cfg: &SynthConfig, index: usize) -> Result<LabeledImage, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(index as u64));
    let (h, w) = (cfg.height, cfg.width);
    let count = rng.random_range(cfg.objects[0]..=cfg.objects[1]);
    let radius = [cfg.radius[0], cfg.radius_cap()];

    let mut instances: Vec<Polyline> = Vec::with_capacity(count);
    let mut masks: Vec<Mask> = Vec::with_capacity(count);
    for object in 0..count {
        let mut placed = false;
        for _ in 0..cfg.max_attempts {
            let shape = pick_shape(&mut rng, &cfg.shapes);
            let r = uniform(&mut rng, radius);
            let cx = uniform(&mut rng, [r + BORDER, w as f64 - r - BORDER]);
            let cy = uniform(&mut rng, [r + BORDER, h as f64 - r - BORDER]);
            let points = outline(&mut rng, shape, cx, cy, r)?;
            if !inside_image(&points, h, w) {
                continue;
            }
            let Ok(poly) = Polyline::new(points).and_then(|p| canonicalize(&p)) else {
                continue;
            };
            let mask = rasterize(poly.points(), h, w);
            if mask.count() < MIN_PIXELS {
                continue;
            }
            if !cfg.allow_overlap && masks.iter().any(|m| m.intersects(&mask)) {
                continue;
            }
            instances.push(poly);
            masks.push(mask);
            placed = true;
            break;
        }
        if !placed {
            return Err(DataError::Placement {
                image: index,
                object,
                attempts: cfg.max_attempts,
            });
        }
    }

    let mut pixels = vec![uniform(&mut rng, cfg.background); h * w];
    for mask in &masks {
        let level = uniform(&mut rng, cfg.foreground);
        for (p, &on) in pixels.iter_mut().zip(mask.bits()) {
            if on {
                *p = level;
            }
        }
    }
    if cfg.noise > 0.0 {
        let normal = Normal::new(0.0, cfg.noise).map_err(|e| DataError::Config(format!("{e}")))?;
        for p in &mut pixels {
            *p = (*p + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    LabeledImage::new(h, w, pixels, instances)
}

/// `cfg.images` images; image `i` depends only on `cfg` and `i`.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<LabeledImage>, DataError> {
    cfg.validate()?;
    (0..cfg.images).map(|i| generate_one(cfg, i)).collect()
}
