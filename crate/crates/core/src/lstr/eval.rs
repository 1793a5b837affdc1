//! Frame-level mean average precision at a fixed IoU threshold.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lstr::pool::{iou_2d, Box2d};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    pub class: usize,
    #[serde(rename = "box")]
    pub bbox: Box2d,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frame: usize,
    pub class: usize,
    #[serde(rename = "box")]
    pub bbox: Box2d,
}

pub const FRAME_IOU: f64 = 0.5;

/// Score desc; equal scores fall back to frame and box coordinates so the
/// ranking does not depend on input order.
fn rank(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.frame.cmp(&b.frame))
        .then(a.bbox.x1.total_cmp(&b.bbox.x1))
        .then(a.bbox.y1.total_cmp(&b.bbox.y1))
        .then(a.bbox.x2.total_cmp(&b.bbox.x2))
        .then(a.bbox.y2.total_cmp(&b.bbox.y2))
}

/// Average precision of one class with all-points interpolation.
pub fn average_precision(dets: &[&Detection], gts: &[&GroundTruth], iou_thr: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut order: Vec<&Detection> = dets.to_vec();
    order.sort_by(|a, b| rank(a, b));

    let mut used = vec![false; gts.len()];
    let mut hits = Vec::with_capacity(order.len());
    for d in &order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if used[gi] || g.frame != d.frame {
                continue;
            }
            let iou = iou_2d(&d.bbox, &g.bbox);
            if iou >= iou_thr && best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, _)) = best {
            used[gi] = true;
        }
        hits.push(best.is_some());
    }

    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &hit) in hits.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    // recall rises by 1/npos at every true positive
    let total: f64 = hits
        .iter()
        .zip(&precision)
        .filter(|(&h, _)| h)
        .map(|(_, &p)| p)
        .sum();
    total / gts.len() as f64
}

/// Mean AP over the classes that have ground truth. Returns 0 when there is
/// no ground truth at all.
pub fn frame_map(dets: &[Detection], gts: &[GroundTruth], iou_thr: f64) -> f64 {
    let classes: Vec<usize> = gts.iter().map(|g| g.class).collect::<BTreeSet<_>>().into_iter().collect();
    if classes.is_empty() {
        return 0.0;
    }
    let aps: Vec<f64> = classes
        .par_iter()
        .map(|&c| {
            let d: Vec<&Detection> = dets.iter().filter(|d| d.class == c).collect();
            let g: Vec<&GroundTruth> = gts.iter().filter(|g| g.class == c).collect();
            average_precision(&d, &g, iou_thr)
        })
        .collect();
    aps.iter().sum::<f64>() / aps.len() as f64
}
