//! Inference throughput.

use std::time::Instant;

use cpn_core::data::LabeledImage;
use cpn_core::model::{predict, CpnConfig, ModelError, Parameters};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spread {
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
}

impl Spread {
    /// Percentiles with linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            if v.is_empty() {
                return f64::NAN;
            }
            let x = p * (v.len() - 1) as f64;
            let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (x - lo as f64)
        };
        Self {
            median: q(0.5),
            p10: q(0.1),
            p90: q(0.9),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub images: usize,
    pub warmup: usize,
    pub repeats: usize,
    /// Over timed passes through the whole image set.
    pub images_per_sec: Spread,
    pub detections: usize,
}

/// Runs `warmup` untimed passes, then `repeats` timed passes over `images`.
pub fn run(
    cfg: &CpnConfig,
    params: &Parameters,
    images: &[LabeledImage],
    warmup: usize,
    repeats: usize,
) -> Result<BenchReport, ModelError> {
    let mut detections = 0;
    for _ in 0..warmup {
        for img in images {
            predict(cfg, params, img)?;
        }
    }
    let mut rates = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        detections = 0;
        for img in images {
            detections += predict(cfg, params, img)?.len();
        }
        rates.push(images.len() as f64 / t0.elapsed().as_secs_f64());
    }
    Ok(BenchReport {
        images: images.len(),
        warmup,
        repeats,
        images_per_sec: Spread::of(&rates),
        detections,
    })
}
