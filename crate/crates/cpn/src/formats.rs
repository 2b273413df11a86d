//! JSON documents written and read by the tools.

use cpn_core::metrics::Evaluation;
use cpn_core::nms::Detection;
use cpn_core::{FourierDescriptor, Point};
use serde::{Deserialize, Serialize};

/// Descriptors fitted to the instances of one annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorFile {
    pub descriptors: Vec<FourierDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionJson {
    pub score: f64,
    pub descriptor: FourierDescriptor,
    pub contour: Vec<[f64; 2]>,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionFile {
    pub detections: Vec<DetectionJson>,
}

impl DetectionFile {
    pub fn of(dets: &[Detection]) -> Self {
        Self {
            detections: dets
                .iter()
                .map(|d| DetectionJson {
                    score: d.score,
                    descriptor: d.descriptor.clone(),
                    contour: d.contour.iter().map(|p| [p.x, p.y]).collect(),
                    bbox: d.bbox.to_array(),
                })
                .collect(),
        }
    }
}

impl DetectionJson {
    pub fn points(&self) -> Vec<Point> {
        self.contour.iter().map(|&[x, y]| Point::new(x, y)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub tau: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub images: usize,
    pub thresholds: Vec<ThresholdReport>,
    pub f1_avg: f64,
}

impl EvalReport {
    pub fn new(eval: &Evaluation, images: usize, config_hash: String) -> Self {
        Self {
            config_hash,
            images,
            thresholds: eval
                .thresholds
                .iter()
                .zip(&eval.counts)
                .map(|(&tau, c)| ThresholdReport {
                    tau,
                    f1: c.f1(),
                    precision: c.precision(),
                    recall: c.recall(),
                    tp: c.tp,
                    fp: c.fp,
                    fn_: c.fn_,
                })
                .collect(),
            f1_avg: eval.f1_avg(),
        }
    }

    pub fn f1_at(&self, tau: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .find(|t| (t.tau - tau).abs() < 1e-12)
            .map(|t| t.f1)
    }
}
