//! Predictions interchange: JSON lines, one image per line.
//!
//! ```text
//! {"image_id":"img_001","detections":[{"x1":0,"y1":0,"x2":10,"y2":10,"score":0.9,"label":0}]}
//! ```
//!
//! Detections may carry an optional `features` array so externally produced
//! candidates can be vetted by the ensemble.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ImageRecord;
use crate::detector::{Detection, Detector};
use crate::error::{Error, Result};
use crate::geom::{BBox, ScoredBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictedBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
    pub label: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub image_id: String,
    pub detections: Vec<PredictedBox>,
}

impl PredictionRecord {
    pub fn from_scored(image_id: impl Into<String>, dets: &[ScoredBox]) -> Self {
        PredictionRecord {
            image_id: image_id.into(),
            detections: dets
                .iter()
                .map(|d| {
                    let [x1, y1, x2, y2] = d.bbox.coords();
                    PredictedBox {
                        x1,
                        y1,
                        x2,
                        y2,
                        score: d.score,
                        label: d.label,
                        features: None,
                    }
                })
                .collect(),
        }
    }
}

/// Parsed predictions keyed by image id. Repeated ids are concatenated.
pub type Predictions = BTreeMap<String, Vec<Detection>>;

fn to_detection(p: &PredictedBox, source: &str, line: usize, k: usize) -> Result<Detection> {
    let at = |field: &str, reason: String| Error::Parse {
        path: source.to_string(),
        line,
        field: format!("detections[{k}].{field}"),
        reason,
    };
    let bbox = BBox::new(p.x1, p.y1, p.x2, p.y2).map_err(|e| at("box", e.to_string()))?;
    let scored = ScoredBox::new(bbox, p.score, p.label)
        .map_err(|_| at("score", format!("{} not in [0, 1]", p.score)))?;
    let features = p.features.clone().unwrap_or_default();
    if features.iter().any(|f| !f.is_finite()) {
        return Err(at("features", "non-finite value".into()));
    }
    Ok(Detection { scored, features })
}

/// Reads a predictions stream; errors name `source:line` and the field.
pub fn parse_predictions<R: Read>(reader: R, source: &str) -> Result<Predictions> {
    let mut out = Predictions::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: source.to_string(),
            line: line_no,
            field: "record".into(),
            reason: e.to_string(),
        })?;
        let dets = rec
            .detections
            .iter()
            .enumerate()
            .map(|(k, p)| to_detection(p, source, line_no, k))
            .collect::<Result<Vec<_>>>()?;
        out.entry(rec.image_id).or_default().extend(dets);
    }
    Ok(out)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Predictions> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(f, &path.display().to_string())
}

pub fn write_predictions<W: Write>(mut w: W, records: &[PredictionRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io("<predictions>", e))?;
    }
    Ok(())
}

/// Replays detections read from a file, ignoring the seed.
#[derive(Debug, Clone, Default)]
pub struct FileDetector {
    pub predictions: Predictions,
}

impl Detector for FileDetector {
    fn detect(&self, image: &ImageRecord, _seed: u64) -> Vec<Detection> {
        self.predictions
            .get(&image.image_id)
            .cloned()
            .unwrap_or_default()
    }
}
