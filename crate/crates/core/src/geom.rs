//! Axis-aligned box geometry.
//!
//! Boxes use continuous corner coordinates `(x1, y1, x2, y2)` with the origin
//! at the top-left and no `+1` pixel correction, so a `(0, 0, 10, 10)` box has
//! area 100.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An axis-aligned rectangle with strictly positive extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl TryFrom<RawBox> for BBox {
    type Error = Error;

    fn try_from(r: RawBox) -> Result<Self> {
        BBox::new(r.x1, r.y1, r.x2, r.y2)
    }
}

impl From<BBox> for RawBox {
    fn from(b: BBox) -> Self {
        RawBox {
            x1: b.x1,
            y1: b.y1,
            x2: b.x2,
            y2: b.y2,
        }
    }
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let bad = |reason| Error::InvalidBox {
            x1,
            y1,
            x2,
            y2,
            reason,
        };
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(bad("non-finite coordinate"));
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(bad("zero or negative extent"));
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    /// Box from center and size.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    #[inline]
    pub fn x1(&self) -> f64 {
        self.x1
    }
    #[inline]
    pub fn y1(&self) -> f64 {
        self.y1
    }
    #[inline]
    pub fn x2(&self) -> f64 {
        self.x2
    }
    #[inline]
    pub fn y2(&self) -> f64 {
        self.y2
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Clamps to `[0, width] x [0, height]`. `None` if nothing of positive
    /// extent remains.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<BBox> {
        BBox::new(
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
            self.x2.clamp(0.0, width),
            self.y2.clamp(0.0, height),
        )
        .ok()
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width && self.y2 <= height
    }
}

pub fn area(b: &BBox) -> f64 {
    b.area()
}

/// Intersection over union. Symmetric, in `[0, 1]`, exactly 1 for `iou(a, a)`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = a.intersection(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A box with a class label, as carried by ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub bbox: BBox,
    pub label: u32,
}

/// A box with a confidence score and class label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
    pub label: u32,
}

impl ScoredBox {
    pub fn new(bbox: BBox, score: f64, label: u32) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::param("score", format!("{score} not in [0, 1]")));
        }
        Ok(ScoredBox { bbox, score, label })
    }
}

/// Anything NMS can rank and compare.
pub trait Scored {
    fn scored(&self) -> &ScoredBox;
}

impl Scored for ScoredBox {
    fn scored(&self) -> &ScoredBox {
        self
    }
}

/// Indices into `items` sorted by descending score, ties kept in input order.
pub fn rank_by_score<T: Scored>(items: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[b].scored().score.total_cmp(&items[a].scored().score));
    order
}

/// Greedy per-label non-maximum suppression.
///
/// A candidate is kept iff its IoU with every already-kept box of the same
/// label is strictly below `iou_threshold`; IoU equal to the threshold
/// suppresses. Output is in kept (descending score) order.
pub fn nms<T: Scored + Clone>(dets: &[T], iou_threshold: f64) -> Vec<T> {
    nms_indices(dets, iou_threshold)
        .into_iter()
        .map(|i| dets[i].clone())
        .collect()
}

pub fn nms_indices<T: Scored>(dets: &[T], iou_threshold: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in rank_by_score(dets) {
        let cand = dets[i].scored();
        let clear = kept.iter().all(|&k| {
            let other = dets[k].scored();
            other.label != cand.label || iou(&other.bbox, &cand.bbox) < iou_threshold
        });
        if clear {
            kept.push(i);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn sb(bbox: BBox, score: f64) -> ScoredBox {
        ScoredBox::new(bbox, score, 0).unwrap()
    }

    #[test]
    fn area_examples() {
        assert_eq!(area(&b(0.0, 0.0, 10.0, 10.0)), 100.0);
        assert_eq!(area(&b(0.0, 0.0, 1.0, 1.0)), 1.0);
        assert_eq!(area(&b(2.0, 3.0, 5.0, 7.0)), 12.0);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BBox::new(1.0, 0.0, 1.0, 5.0).is_err());
        assert!(BBox::new(0.0, 5.0, 3.0, 2.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::INFINITY, 1.0).is_err());
        let json = r#"{"x1":3,"y1":0,"x2":1,"y2":1}"#;
        assert!(serde_json::from_str::<BBox>(json).is_err());
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0.0, 0.0, 10.0, 10.0), &b(0.0, 0.0, 10.0, 10.0)), 1.0);
        assert_eq!(iou(&b(0.0, 0.0, 1.0, 1.0), &b(5.0, 5.0, 6.0, 6.0)), 0.0);
        let v = iou(&b(0.0, 0.0, 2.0, 2.0), &b(1.0, 1.0, 3.0, 3.0));
        assert!((v - 1.0 / 7.0).abs() < 1e-15);
        // touching edges share no area
        assert_eq!(iou(&b(0.0, 0.0, 1.0, 1.0), &b(1.0, 0.0, 2.0, 1.0)), 0.0);
    }

    #[test]
    fn nms_examples() {
        let empty: Vec<ScoredBox> = vec![];
        assert!(nms(&empty, 0.5).is_empty());

        let same = vec![
            sb(b(0.0, 0.0, 4.0, 4.0), 0.8),
            sb(b(0.0, 0.0, 4.0, 4.0), 0.9),
        ];
        let out = nms(&same, 0.5);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.9);

        let disjoint = vec![
            sb(b(0.0, 0.0, 1.0, 1.0), 0.3),
            sb(b(5.0, 5.0, 6.0, 6.0), 0.7),
        ];
        assert_eq!(nms(&disjoint, 0.01).len(), 2);
    }

    #[test]
    fn nms_boundary_suppresses_and_labels_are_independent() {
        // iou = 1/7 exactly at the threshold: suppressed
        let pair = vec![
            sb(b(0.0, 0.0, 2.0, 2.0), 0.9),
            sb(b(1.0, 1.0, 3.0, 3.0), 0.8),
        ];
        let t = iou(&pair[0].bbox, &pair[1].bbox);
        assert_eq!(nms(&pair, t).len(), 1);
        assert_eq!(nms(&pair, t + 1e-12).len(), 2);

        let mut other = pair.clone();
        other[1].label = 1;
        assert_eq!(nms(&other, 0.01).len(), 2);
    }

    #[test]
    fn nms_ties_keep_input_order() {
        let dets = vec![
            sb(b(0.0, 0.0, 4.0, 4.0), 0.5),
            sb(b(0.5, 0.0, 4.5, 4.0), 0.5),
        ];
        assert_eq!(nms_indices(&dets, 0.5), vec![0]);
    }

    prop_compose! {
        fn arb_box()(x in -50.0..50.0f64, y in -50.0..50.0f64,
                     w in 0.01..40.0f64, h in 0.01..40.0f64) -> BBox {
            b(x, y, x + w, y + h)
        }
    }

    proptest! {
        #[test]
        fn iou_properties(a in arb_box(), c in arb_box()) {
            let ab = iou(&a, &c);
            prop_assert_eq!(ab, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn nms_properties(boxes in prop::collection::vec((arb_box(), 0.0..1.0f64, 0u32..2), 0..30),
                          t in 0.05..0.95f64) {
            let dets: Vec<ScoredBox> = boxes.iter()
                .map(|&(bx, s, l)| ScoredBox { bbox: bx, score: s, label: l })
                .collect();
            let kept = nms(&dets, t);
            prop_assert!(kept.len() <= dets.len());
            for k in &kept {
                prop_assert!(dets.contains(k));
            }
            for (i, p) in kept.iter().enumerate() {
                for q in &kept[i + 1..] {
                    if p.label == q.label {
                        prop_assert!(iou(&p.bbox, &q.bbox) < t);
                    }
                }
            }
            prop_assert_eq!(nms(&kept, t), kept);
        }
    }
}
