//! Datasets on disk: `img_%06d.pgm` pixels next to `img_%06d.json` outlines.

use std::fs;
use std::path::{Path, PathBuf};

use cpn_core::data::LabeledImage;
use cpn_core::{Point, Polyline};
use serde::{Deserialize, Serialize};

use crate::pgm::{self, Gray};
use crate::{read_json, write_json, FormatError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub width: usize,
    pub height: usize,
    pub instances: Vec<Instance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub polygon: Vec<[f64; 2]>,
}

impl Annotation {
    pub fn of(img: &LabeledImage) -> Self {
        Self {
            width: img.width,
            height: img.height,
            instances: img
                .instances
                .iter()
                .map(|p| Instance {
                    polygon: p.points().iter().map(|q| [q.x, q.y]).collect(),
                })
                .collect(),
        }
    }

    pub fn polylines(&self, file: &Path) -> Result<Vec<Polyline>, FormatError> {
        self.instances
            .iter()
            .enumerate()
            .map(|(k, inst)| {
                Polyline::new(inst.polygon.iter().map(|&[x, y]| Point::new(x, y)).collect())
                    .map_err(|e| FormatError::invalid(file, format!("instance {k}: {e}")))
            })
            .collect()
    }
}

pub fn stem(index: usize) -> String {
    format!("img_{index:06}")
}

pub fn save_image(dir: &Path, index: usize, img: &LabeledImage) -> Result<(), FormatError> {
    let s = stem(index);
    pgm::write(
        &dir.join(format!("{s}.pgm")),
        &Gray::from_unit(img.height, img.width, &img.pixels),
    )?;
    write_json(&dir.join(format!("{s}.json")), &Annotation::of(img))
}

pub fn save_dataset(dir: &Path, images: &[LabeledImage]) -> Result<(), FormatError> {
    fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    for (i, img) in images.iter().enumerate() {
        save_image(dir, i, img)?;
    }
    Ok(())
}

/// Annotation files of a dataset directory, in index order.
pub fn list(dir: &Path) -> Result<Vec<PathBuf>, FormatError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| FormatError::io(dir, e))? {
        let path = entry.map_err(|e| FormatError::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let is_stem = name
            .strip_prefix("img_")
            .and_then(|r| r.strip_suffix(".json"))
            .is_some_and(|d| d.len() == 6 && d.bytes().all(|b| b.is_ascii_digit()));
        if is_stem {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn load_image(json: &Path) -> Result<LabeledImage, FormatError> {
    let ann: Annotation = read_json(json)?;
    let pgm_path = json.with_extension("pgm");
    let gray = pgm::read(&pgm_path)?;
    if (gray.height, gray.width) != (ann.height, ann.width) {
        return Err(FormatError::invalid(
            &pgm_path,
            format!(
                "image is {}x{}, annotation says {}x{}",
                gray.height, gray.width, ann.height, ann.width
            ),
        ));
    }
    let instances = ann.polylines(json)?;
    LabeledImage::new(ann.height, ann.width, gray.to_unit(), instances).map_err(|e| FormatError::invalid(json, e))
}

pub fn load_dataset(dir: &Path) -> Result<Vec<LabeledImage>, FormatError> {
    let files = list(dir)?;
    if files.is_empty() {
        return Err(FormatError::invalid(dir, "no img_NNNNNN.json files"));
    }
    files.iter().map(|f| load_image(f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use cpn_core::data::{generate, SynthConfig};

    #[test]
    fn round_trip_is_exact_for_outlines() {
        let dir = tempfile::tempdir().unwrap();
        let images = generate(&SynthConfig {
            images: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        save_dataset(dir.path(), &images).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 5);
        for (a, b) in images.iter().zip(&back) {
            assert_eq!(a.instances, b.instances);
            for (x, y) in a.pixels.iter().zip(&b.pixels) {
                assert!((x - y).abs() <= 1.0 / 255.0);
            }
        }
    }

    #[test]
    fn errors_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path()).is_err());
        let json = dir.path().join("img_000000.json");
        fs::write(&json, "{\"width\": 16, \"height\": 16, \"instan").unwrap();
        let msg = load_image(&json).unwrap_err().to_string();
        assert!(msg.contains("img_000000.json"), "{msg}");
        assert!(msg.contains("at byte"), "{msg}");
        fs::write(&json, "{\"width\": 16, \"height\": 16, \"instances\": [], \"extra\": 1}").unwrap();
        assert!(load_image(&json).is_err());
    }
}
