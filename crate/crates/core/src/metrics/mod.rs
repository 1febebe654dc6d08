//! COCO-style detection evaluation.
//!
//! Detections are matched greedily per image in descending score order: each
//! one takes the unmatched same-label ground truth with the highest IoU, if
//! that IoU reaches the threshold. AP is the 101-point interpolated area under
//! the dataset-wide precision-recall curve; mAP averages AP over IoU
//! thresholds 0.50:0.05:0.95; AR@k averages recall over the same thresholds
//! with at most `k` detections per image.
//!
//! A dataset with no ground truth has no defined recall. Such cases come back
//! as an absent value (no detections either) or zero with a warning, never 1.

pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::geom::{iou, rank_by_score, LabeledBox, ScoredBox};
use crate::par;

pub use oracle::brute_force_ap_oracle;

/// Number of recall levels in the interpolated PR curve.
pub const RECALL_POINTS: usize = 101;
pub const DEFAULT_MAX_DETS: usize = 300;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

pub fn recall_level(k: usize) -> f64 {
    k as f64 / 100.0
}

/// One image's detections and ground truth.
#[derive(Debug, Clone, Copy)]
pub struct EvalImage<'a> {
    pub dets: &'a [ScoredBox],
    pub gts: &'a [LabeledBox],
}

impl<'a> EvalImage<'a> {
    pub fn new(dets: &'a [ScoredBox], gts: &'a [LabeledBox]) -> Self {
        EvalImage { dets, gts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MetricWarning {
    /// Detections were supplied but there is no ground truth; AP is 0.
    NoGroundTruth { detections: usize },
    /// Neither detections nor ground truth; the metric is undefined.
    Undefined,
}

/// A metric that may be undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricValue {
    pub value: Option<f64>,
    pub warning: Option<MetricWarning>,
}

impl MetricValue {
    fn of(v: f64) -> Self {
        MetricValue {
            value: Some(v),
            warning: None,
        }
    }

    fn no_gt(n_dets: usize) -> Self {
        if n_dets == 0 {
            MetricValue {
                value: None,
                warning: Some(MetricWarning::Undefined),
            }
        } else {
            MetricValue {
                value: Some(0.0),
                warning: Some(MetricWarning::NoGroundTruth { detections: n_dets }),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub threshold: f64,
    /// Per detection (input order): whether it is a true positive.
    pub det_tp: Vec<bool>,
    /// Per detection: matched ground-truth index.
    pub det_match: Vec<Option<usize>>,
    /// Per detection: IoU with the matched ground truth (0 if unmatched).
    pub det_iou: Vec<f64>,
    /// Per ground truth: whether some detection claimed it.
    pub gt_matched: Vec<bool>,
}

/// Greedy matching of one image's detections against its ground truth.
pub fn match_detections(dets: &[ScoredBox], gts: &[LabeledBox], t: f64) -> MatchResult {
    let mut res = MatchResult {
        threshold: t,
        det_tp: vec![false; dets.len()],
        det_match: vec![None; dets.len()],
        det_iou: vec![0.0; dets.len()],
        gt_matched: vec![false; gts.len()],
    };
    for d in rank_by_score(dets) {
        let det = &dets[d];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if res.gt_matched[g] || gt.label != det.label {
                continue;
            }
            let v = iou(&det.bbox, &gt.bbox);
            if v >= t && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            res.gt_matched[g] = true;
            res.det_tp[d] = true;
            res.det_match[d] = Some(g);
            res.det_iou[d] = v;
        }
    }
    res
}

/// Dataset-wide ranked TP flags: `(score, is_tp)` in descending score order,
/// ties broken by image order then detection order.
fn ranked_flags(images: &[EvalImage<'_>], t: f64) -> Vec<(f64, bool)> {
    let per_image = par::map(images, |im| match_detections(im.dets, im.gts, t).det_tp);
    let mut flags: Vec<(f64, bool)> = images
        .iter()
        .zip(per_image)
        .flat_map(|(im, tp)| im.dets.iter().map(|d| d.score).zip(tp))
        .collect();
    // stable sort keeps the concatenation order for equal scores
    flags.sort_by(|a, b| b.0.total_cmp(&a.0));
    flags
}

fn total_gts(images: &[EvalImage<'_>]) -> usize {
    images.iter().map(|im| im.gts.len()).sum()
}

fn total_dets(images: &[EvalImage<'_>]) -> usize {
    images.iter().map(|im| im.dets.len()).sum()
}

/// Raw precision-recall points along the ranked detection list.
pub fn pr_points(images: &[EvalImage<'_>], t: f64) -> Vec<(f64, f64)> {
    let n_gt = total_gts(images);
    if n_gt == 0 {
        return Vec::new();
    }
    let mut tp = 0usize;
    ranked_flags(images, t)
        .into_iter()
        .enumerate()
        .map(|(i, (_, hit))| {
            tp += hit as usize;
            (tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64)
        })
        .collect()
}

/// Interpolated precision at the 101 recall levels.
fn interpolated_curve(points: &[(f64, f64)]) -> Vec<f64> {
    let recall: Vec<f64> = points.iter().map(|p| p.0).collect();
    let mut precision: Vec<f64> = points.iter().map(|p| p.1).collect();
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    (0..RECALL_POINTS)
        .map(|k| {
            let idx = recall.partition_point(|&r| r < recall_level(k));
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .collect()
}

fn ap_from_curve(curve: &[f64]) -> f64 {
    curve.iter().sum::<f64>() / RECALL_POINTS as f64
}

pub fn average_precision(images: &[EvalImage<'_>], t: f64) -> MetricValue {
    let n_gt = total_gts(images);
    if n_gt == 0 {
        return MetricValue::no_gt(total_dets(images));
    }
    MetricValue::of(ap_from_curve(&interpolated_curve(&pr_points(images, t))))
}

/// Keeps each image's `k` highest-scored detections.
pub fn truncate_top_k(dets: &[ScoredBox], k: usize) -> Vec<ScoredBox> {
    rank_by_score(dets)
        .into_iter()
        .take(k)
        .map(|i| dets[i])
        .collect()
}

/// Mean recall over the COCO thresholds with at most `k` detections per image.
pub fn average_recall_at(images: &[EvalImage<'_>], k: usize) -> MetricValue {
    let n_gt = total_gts(images);
    if n_gt == 0 {
        return MetricValue::no_gt(total_dets(images));
    }
    let truncated: Vec<Vec<ScoredBox>> = par::map(images, |im| truncate_top_k(im.dets, k));
    let thresholds = coco_thresholds();
    let recalls: Vec<f64> = thresholds
        .iter()
        .map(|&t| {
            let matched: usize = images
                .iter()
                .zip(&truncated)
                .map(|(im, dets)| {
                    match_detections(dets, im.gts, t)
                        .gt_matched
                        .iter()
                        .filter(|&&m| m)
                        .count()
                })
                .sum();
            matched as f64 / n_gt as f64
        })
        .collect();
    MetricValue::of(recalls.iter().sum::<f64>() / thresholds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAp {
    pub iou: f64,
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub iou: f64,
    /// `(recall level, interpolated precision)` at the 101 recall levels.
    pub points: Vec<(f64, f64)>,
}

/// The full metric set for one detector on one image set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap_per_threshold: Vec<ThresholdAp>,
    pub map_coco: Option<f64>,
    pub ap75: Option<f64>,
    pub ar300: Option<f64>,
    pub max_dets: usize,
    pub pr_curves: Vec<PrCurve>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn ap_at(&self, iou: f64) -> Option<f64> {
        self.ap_per_threshold
            .iter()
            .find(|t| (t.iou - iou).abs() < 1e-9)
            .and_then(|t| t.ap)
    }

    /// mAP with undefined values read as 0, for objectives and ranking.
    pub fn map_or_zero(&self) -> f64 {
        self.map_coco.unwrap_or(0.0)
    }
}

/// mAP@[.50:.95] and AP@.75 only.
pub fn mean_average_precision(images: &[EvalImage<'_>]) -> (Option<f64>, Option<f64>) {
    let aps: Vec<MetricValue> = coco_thresholds()
        .iter()
        .map(|&t| average_precision(images, t))
        .collect();
    summarize(&aps)
}

fn summarize(aps: &[MetricValue]) -> (Option<f64>, Option<f64>) {
    let values: Option<Vec<f64>> = aps.iter().map(|a| a.value).collect();
    let map = values.map(|v| v.iter().sum::<f64>() / v.len() as f64);
    (map, aps[5].value)
}

/// Computes every metric in [`EvalReport`].
pub fn evaluate(images: &[EvalImage<'_>], max_dets: usize) -> EvalReport {
    let thresholds = coco_thresholds();
    let n_gt = total_gts(images);
    let mut warnings = Vec::new();
    let per_t: Vec<(MetricValue, Vec<f64>)> = thresholds
        .iter()
        .map(|&t| {
            if n_gt == 0 {
                (MetricValue::no_gt(total_dets(images)), Vec::new())
            } else {
                let curve = interpolated_curve(&pr_points(images, t));
                (MetricValue::of(ap_from_curve(&curve)), curve)
            }
        })
        .collect();
    if let Some(w) = &per_t[0].0.warning {
        let msg = match w {
            MetricWarning::NoGroundTruth { detections } => {
                format!("no ground truth but {detections} detections: AP reported as 0")
            }
            MetricWarning::Undefined => {
                "no ground truth and no detections: metrics undefined".to_string()
            }
        };
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let aps: Vec<MetricValue> = per_t.iter().map(|(a, _)| a.clone()).collect();
    let (map_coco, ap75) = summarize(&aps);
    let ar = average_recall_at(images, max_dets);
    EvalReport {
        ap_per_threshold: thresholds
            .iter()
            .zip(&aps)
            .map(|(&iou, a)| ThresholdAp { iou, ap: a.value })
            .collect(),
        map_coco,
        ap75,
        ar300: ar.value,
        max_dets,
        pr_curves: thresholds
            .iter()
            .zip(&per_t)
            .map(|(&iou, (_, curve))| PrCurve {
                iou,
                points: curve
                    .iter()
                    .enumerate()
                    .map(|(k, &p)| (recall_level(k), p))
                    .collect(),
            })
            .collect(),
        warnings,
    }
}
