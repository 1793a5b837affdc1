//! Temporal event proposals by classification: score every frame for
//! actionness, slide multi-scale windows, rank by mean actionness and thin
//! out with non-maximum suppression.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WINDOW_LENGTHS: [usize; 5] = [8, 16, 32, 64, 128];
pub const NMS_IOU: f64 = 0.7;
pub const PROPOSALS_PER_VIDEO: usize = 5;

/// Frame interval `[start, end)` with its ranking score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalProposal {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

impl TemporalProposal {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// `sigmoid(frame_feats · clf)` per frame.
pub fn score_actionness(frame_feats: &Tensor, clf: &Tensor) -> Result<Tensor> {
    let (fd, cd) = (frame_feats.dims(), clf.dims());
    if fd.len() != 2 || cd.len() != 1 || fd[1] != cd[0] {
        return Err(Error::shape("score_actionness", fd, cd));
    }
    let col = clf.reshape(&[cd[0], 1])?;
    frame_feats.matmul(&col)?.sigmoid().reshape(&[fd[0]])
}

pub fn temporal_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter = a.1.min(b.1).saturating_sub(a.0.max(b.0));
    let union = a.1.max(b.1) - a.0.min(b.0);
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

/// Window lengths `{8,16,32,64,128} ∩ [1,T]` plus `T`, each slid with stride
/// `max(1, len/4)`.
pub fn candidate_windows(t: usize) -> Vec<(usize, usize)> {
    let mut lengths: Vec<usize> = WINDOW_LENGTHS.iter().copied().filter(|&l| l <= t).collect();
    if !lengths.contains(&t) {
        lengths.push(t);
    }
    let mut out = Vec::new();
    for len in lengths {
        let stride = (len / 4).max(1);
        let mut start = 0;
        while start + len <= t {
            out.push((start, start + len));
            start += stride;
        }
    }
    out
}

/// Score desc, then start asc, then length desc.
fn rank_order(a: &TemporalProposal, b: &TemporalProposal) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.start.cmp(&b.start))
        .then(b.len().cmp(&a.len()))
}

/// Top `n` windows after greedy NMS at [`NMS_IOU`]. A candidate is suppressed
/// when its IoU with an already kept window exceeds the threshold. If fewer
/// than `n` survive, suppressed candidates are appended in rank order so the
/// count is `min(n, #candidates)`.
pub fn generate_proposals(scores: &Tensor, n: usize) -> Result<Vec<TemporalProposal>> {
    if n < 1 {
        return Err(Error::Contract("proposal count must be at least 1".into()));
    }
    if scores.rank() != 1 {
        return Err(Error::Contract(format!("actionness must be [T], got {:?}", scores.dims())));
    }
    let s = scores.data();
    let mut cands: Vec<TemporalProposal> = candidate_windows(s.len())
        .into_iter()
        .map(|(start, end)| TemporalProposal {
            start,
            end,
            score: s[start..end].iter().sum::<f64>() / (end - start) as f64,
        })
        .collect();
    cands.sort_by(rank_order);

    let mut kept: Vec<TemporalProposal> = Vec::with_capacity(n);
    let mut suppressed = Vec::new();
    for c in cands {
        if kept.len() == n {
            break;
        }
        let overlaps = kept
            .iter()
            .any(|k| temporal_iou((k.start, k.end), (c.start, c.end)) > NMS_IOU);
        if overlaps {
            suppressed.push(c);
        } else {
            kept.push(c);
        }
    }
    let missing = n - kept.len();
    kept.extend(suppressed.into_iter().take(missing));
    Ok(kept)
}
