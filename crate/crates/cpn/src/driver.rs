//! Training and evaluation runs with their on-disk artifacts.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use cpn_core::data::LabeledImage;
use cpn_core::geometry::rasterize;
use cpn_core::metrics::{Evaluation, Region};
use cpn_core::model::{evaluate, train, EpochStats, ModelError, Parameters};

use crate::config::RunConfig;
use crate::formats::{DetectionFile, EvalReport};
use crate::{checkpoint, write_json, FormatError};

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub const CSV_HEADER: &str = "epoch,steps,total,inst,contour,refine,repr";

/// One history line; floats use the shortest exact decimal form.
pub fn csv_row(s: &EpochStats) -> String {
    let l = &s.loss;
    format!(
        "{},{},{},{},{},{},{}",
        s.epoch, s.steps, l.total, l.inst, l.contour, l.refine, l.repr
    )
}

pub struct TrainOutput {
    pub params: Parameters,
    pub history: Vec<EpochStats>,
    pub history_csv: PathBuf,
    pub model: PathBuf,
}

/// Trains on `images`, writing into `out`:
/// `run.json`, `checkpoints/epoch_NNN.cpnw`, `loss_history.csv`, `model.cpnw`.
pub fn train_run(images: &[LabeledImage], run: &RunConfig, out: &Path) -> Result<TrainOutput, DriverError> {
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| FormatError::io(&ckpt_dir, e))?;
    write_json(
        &out.join("run.json"),
        &serde_json::json!({ "config_hash": run.hash(), "config": run }),
    )?;
    let csv_path = out.join("loss_history.csv");
    let mut csv = File::create(&csv_path).map_err(|e| FormatError::io(&csv_path, e))?;
    writeln!(csv, "{CSV_HEADER}").map_err(|e| FormatError::io(&csv_path, e))?;

    let mut failure: Option<FormatError> = None;
    let (params, history) = train(images, &run.model, &run.train, |stats, params| {
        if failure.is_some() {
            return;
        }
        log::info!(
            "epoch {} loss {:.5} (inst {:.4} contour {:.4} refine {:.4} repr {:.4})",
            stats.epoch,
            stats.loss.total,
            stats.loss.inst,
            stats.loss.contour,
            stats.loss.refine,
            stats.loss.repr
        );
        let row = writeln!(csv, "{}", csv_row(stats)).and_then(|_| csv.flush());
        if let Err(e) = row {
            failure = Some(FormatError::io(&csv_path, e));
            return;
        }
        let path = ckpt_dir.join(format!("epoch_{:03}.cpnw", stats.epoch));
        if let Err(e) = checkpoint::save(&path, params) {
            failure = Some(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    let model = out.join("model.cpnw");
    checkpoint::save(&model, &params)?;
    Ok(TrainOutput {
        params,
        history,
        history_csv: csv_path,
        model,
    })
}

/// Model evaluation over the standard thresholds.
pub fn eval_model(run: &RunConfig, params: &Parameters, images: &[LabeledImage]) -> Result<EvalReport, DriverError> {
    let e = evaluate(&run.model, params, images, &Evaluation::standard().thresholds)?;
    Ok(EvalReport::new(&e, images.len(), run.hash()))
}

/// Evaluation of stored detections against ground truth.
pub fn eval_detections(
    images: &[LabeledImage],
    detections: &[DetectionFile],
    config_hash: String,
) -> Result<EvalReport, DriverError> {
    let mut e = Evaluation::standard();
    for (img, dets) in images.iter().zip(detections) {
        let preds: Vec<Region> = dets
            .detections
            .iter()
            .map(|d| Region::Mask(rasterize(&d.points(), img.height, img.width)))
            .collect();
        let gts: Vec<Region> = img.masks().into_iter().map(Region::Mask).collect();
        e.add(&preds, &gts).map_err(ModelError::from)?;
    }
    Ok(EvalReport::new(&e, images.len(), config_hash))
}

/// Ground truth written as detections (score 1, fitted descriptor).
pub fn ground_truth_detections(img: &LabeledImage, order: usize) -> Result<DetectionFile, DriverError> {
    let mut detections = Vec::new();
    for poly in &img.instances {
        let descriptor = cpn_core::efd::fit_descriptor(poly, order).map_err(ModelError::from)?;
        let bbox = cpn_core::geometry::bbox_of(poly.points()).expect("three or more points");
        detections.push(crate::formats::DetectionJson {
            score: 1.0,
            descriptor,
            contour: poly.points().iter().map(|p| [p.x, p.y]).collect(),
            bbox: bbox.to_array(),
        });
    }
    Ok(DetectionFile { detections })
}

#[cfg(test)]
mod tests {
    use super::*;
    use cpn_core::model::LossBreakdown;

    #[test]
    fn csv_rows_are_exact() {
        let s = EpochStats {
            epoch: 3,
            steps: 50,
            loss: LossBreakdown {
                total: 0.1 + 0.2,
                inst: 1.0,
                contour: 1e-20,
                refine: 2.5,
                repr: 0.0,
            },
        };
        let row = csv_row(&s);
        assert_eq!(row, "3,50,0.30000000000000004,1,0.00000000000000000001,2.5,0");
        let total: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(total, 0.1 + 0.2);
    }

    #[test]
    fn ground_truth_scores_perfectly() {
        let mut run = RunConfig::default();
        run.synth.images = 4;
        let images = run.training_images().unwrap();
        let dets: Vec<_> = images
            .iter()
            .map(|i| ground_truth_detections(i, 4).unwrap())
            .collect();
        let r = eval_detections(&images, &dets, run.hash()).unwrap();
        assert_eq!(r.f1_avg, 1.0);
    }
}
