//! Brute-force AP reference used to cross-check [`super::average_precision`].
//!
//! Shares no matching, ranking, or interpolation code with the main path:
//! overlap is recomputed from raw coordinates, detections are ranked by
//! repeated selection of the best remaining one, and every recall level scans
//! the whole ranked list. Quadratic in everything; keep inputs small.

use super::{EvalImage, MetricValue, MetricWarning};

fn overlap(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    if inter == 0.0 {
        return 0.0;
    }
    let ua = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    inter / ua
}

pub fn brute_force_ap_oracle(images: &[EvalImage<'_>], t: f64) -> MetricValue {
    let n_gt: usize = images.iter().map(|im| im.gts.len()).sum();
    let n_det: usize = images.iter().map(|im| im.dets.len()).sum();
    if n_gt == 0 {
        return if n_det == 0 {
            MetricValue {
                value: None,
                warning: Some(MetricWarning::Undefined),
            }
        } else {
            MetricValue {
                value: Some(0.0),
                warning: Some(MetricWarning::NoGroundTruth { detections: n_det }),
            }
        };
    }

    // (score, image, det index, tp)
    let mut entries: Vec<(f64, usize, usize, bool)> = Vec::new();
    for (ii, im) in images.iter().enumerate() {
        let mut taken = vec![false; im.gts.len()];
        let mut done = vec![false; im.dets.len()];
        for _ in 0..im.dets.len() {
            // highest remaining score, earliest index on ties
            let mut pick = usize::MAX;
            for (d, det) in im.dets.iter().enumerate() {
                if !done[d] && (pick == usize::MAX || det.score > im.dets[pick].score) {
                    pick = d;
                }
            }
            done[pick] = true;
            let det = &im.dets[pick];
            let mut best_g = usize::MAX;
            let mut best_v = -1.0;
            for (g, gt) in im.gts.iter().enumerate() {
                if taken[g] || gt.label != det.label {
                    continue;
                }
                let v = overlap(det.bbox.coords(), gt.bbox.coords());
                if v >= t && v > best_v {
                    best_v = v;
                    best_g = g;
                }
            }
            let hit = best_g != usize::MAX;
            if hit {
                taken[best_g] = true;
            }
            entries.push((det.score, ii, pick, hit));
        }
    }

    // global ranking by selection; ties resolved by (image, detection) order
    let mut ranked = Vec::with_capacity(entries.len());
    let mut used = vec![false; entries.len()];
    for _ in 0..entries.len() {
        let mut pick = usize::MAX;
        for e in 0..entries.len() {
            if used[e] {
                continue;
            }
            let better = pick == usize::MAX || {
                let (s, i, d, _) = entries[e];
                let (ps, pi, pd, _) = entries[pick];
                s > ps || (s == ps && (i, d) < (pi, pd))
            };
            if better {
                pick = e;
            }
        }
        used[pick] = true;
        ranked.push(entries[pick].3);
    }

    // full staircase: (recall, precision) after each ranked detection
    let mut stairs = Vec::with_capacity(ranked.len());
    let mut hits = 0.0;
    for (i, &hit) in ranked.iter().enumerate() {
        if hit {
            hits += 1.0;
        }
        stairs.push((hits / n_gt as f64, hits / (i as f64 + 1.0)));
    }

    let mut total = 0.0;
    for k in 0..=100 {
        let level = k as f64 / 100.0;
        let mut best: f64 = 0.0;
        for &(r, p) in &stairs {
            if r >= level && p > best {
                best = p;
            }
        }
        total += best;
    }
    MetricValue {
        value: Some(total / 101.0),
        warning: None,
    }
}
