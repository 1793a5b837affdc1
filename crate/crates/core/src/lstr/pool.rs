//! Per-actor pooling on a clip feature map `[C, T, H, W]`: RoI max pooling
//! of the keyframe box over the whole clip, and an actor-conditioned
//! attention map used to pool a context vector.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Keyframe box in normalized `[0, 1]` coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Box2d {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Box2d {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let inside = [x1, y1, x2, y2].iter().all(|v| (0.0..=1.0).contains(v));
        if !inside || x1 >= x2 || y1 >= y2 {
            return Err(Error::Contract(format!("invalid box ({x1}, {y1}, {x2}, {y2})")));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

impl TryFrom<[f64; 4]> for Box2d {
    type Error = Error;

    fn try_from(b: [f64; 4]) -> Result<Self> {
        Self::new(b[0], b[1], b[2], b[3])
    }
}

impl From<Box2d> for [f64; 4] {
    fn from(b: Box2d) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

pub fn iou_2d(a: &Box2d, b: &Box2d) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Splits `n` cells into `k` bins with edges rounded outward, so every bin
/// covers at least one cell and neighbouring bins may share one.
pub(crate) fn bin_edges(n: usize, k: usize) -> Vec<(usize, usize)> {
    (0..k)
        .map(|i| ((i * n) / k, ((i + 1) * n).div_ceil(k)))
        .collect()
}

fn cell_span(lo: f64, hi: f64, n: usize) -> (usize, usize) {
    let a = ((lo * n as f64).floor() as usize).min(n);
    let b = ((hi * n as f64).ceil() as usize).min(n);
    (a, b)
}

fn check_map(feat: &[usize]) -> Result<()> {
    if feat.len() != 4 {
        return Err(Error::Contract(format!("feature map must be [C, T, H, W], got {feat:?}")));
    }
    Ok(())
}

/// Flat input index of the maximum in every output cell, with output dims.
fn roi_argmax(feat: &Tensor, b: &Box2d, out: (usize, usize, usize)) -> Result<(Vec<usize>, Vec<usize>)> {
    check_map(feat.dims())?;
    let (to, ho, wo) = out;
    if to == 0 || ho == 0 || wo == 0 {
        return Err(Error::Contract("roi output extents must be positive".into()));
    }
    let [c, t, h, w] = [feat.dims()[0], feat.dims()[1], feat.dims()[2], feat.dims()[3]];
    let (r0, r1) = cell_span(b.y1, b.y2, h);
    let (c0, c1) = cell_span(b.x1, b.x2, w);
    if r1 <= r0 || c1 <= c0 {
        return Err(Error::Contract(format!("box {b:?} covers no cells of a {h}x{w} map")));
    }
    let tb = bin_edges(t, to);
    let hb = bin_edges(r1 - r0, ho);
    let wb = bin_edges(c1 - c0, wo);
    let d = feat.data();
    let mut idx = Vec::with_capacity(c * to * ho * wo);
    for ch in 0..c {
        for &(ta, tz) in &tb {
            for &(ha, hz) in &hb {
                for &(wa, wz) in &wb {
                    let mut best = usize::MAX;
                    for ti in ta..tz {
                        for hi in r0 + ha..r0 + hz {
                            for wi in c0 + wa..c0 + wz {
                                let i = ((ch * t + ti) * h + hi) * w + wi;
                                if best == usize::MAX || d[i] > d[best] {
                                    best = i;
                                }
                            }
                        }
                    }
                    idx.push(best);
                }
            }
        }
    }
    Ok((vec![c, to, ho, wo], idx))
}

/// Max-pools the keyframe box, extended over the full clip length, into a
/// `[C, t_o, h_o, w_o]` grid.
pub fn roi_pool_3d(feat: &Tensor, b: &Box2d, out: (usize, usize, usize)) -> Result<Tensor> {
    let (dims, idx) = roi_argmax(feat, b, out)?;
    Ok(feat.gather(&dims, &idx))
}

pub fn roi_pool_3d_graph(g: &mut Graph, feat: Var, b: &Box2d, out: (usize, usize, usize)) -> Result<Var> {
    let (dims, idx) = roi_argmax(g.value(feat), b, out)?;
    g.gather(feat, &dims, idx, true)
}

/// Softmax over all `T·H·W` positions of `θ · feat`, where the 1×1×1 filter
/// `θ = actor · kernel` is generated from the actor feature.
///
/// `actor: [1, Dp]`, `kernel: [Dp, C]`, `feat: [C, T, H, W]`; returns `[T, H, W]`.
pub fn adaptive_attention_graph(g: &mut Graph, actor: Var, feat: Var, kernel: Var) -> Result<Var> {
    let fd = g.dims(feat).to_vec();
    check_map(&fd)?;
    let (c, thw) = (fd[0], fd[1] * fd[2] * fd[3]);
    if g.dims(kernel).len() != 2 || g.dims(kernel)[1] != c {
        return Err(Error::shape("adaptive_attention", g.dims(kernel), &fd));
    }
    let theta = g.matmul(actor, kernel)?;
    let flat = g.reshape(feat, &[c, thw])?;
    let score = g.matmul(theta, flat)?;
    let attn = g.softmax(score, 1)?;
    g.reshape(attn, &fd[1..])
}

/// `context[c] = Σ attn[t,h,w] · feat[c,t,h,w]`, returned as `[1, C]`.
pub fn attention_pool_3d_graph(g: &mut Graph, feat: Var, attn: Var) -> Result<Var> {
    let fd = g.dims(feat).to_vec();
    check_map(&fd)?;
    if g.dims(attn) != &fd[1..] {
        return Err(Error::shape("attention_pool_3d", &fd, g.dims(attn)));
    }
    let (c, thw) = (fd[0], fd[1] * fd[2] * fd[3]);
    let flat = g.reshape(feat, &[c, thw])?;
    let a = g.reshape(attn, &[thw, 1])?;
    let ctx = g.matmul(flat, a)?;
    g.reshape(ctx, &[1, c])
}

/// `actor: [Dp]`, `kernel: [Dp, C]`.
pub fn adaptive_attention(actor: &Tensor, feat: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let a = g.constant(actor.reshape(&[1, actor.len()])?);
    let f = g.constant(feat.clone());
    let k = g.constant(kernel.clone());
    let out = adaptive_attention_graph(&mut g, a, f, k)?;
    Ok(g.value(out).clone())
}

pub fn attention_pool_3d(feat: &Tensor, attn: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let f = g.constant(feat.clone());
    let a = g.constant(attn.clone());
    let out = attention_pool_3d_graph(&mut g, f, a)?;
    g.value(out).reshape(&[feat.dims()[0]])
}
