//! Spatio-temporal action localization head over a window of eight clips.
//!
//! Each box proposal is RoI-pooled into an actor feature, which generates an
//! attention map over its clip and pools a context feature from it. Actor and
//! context are concatenated into a node of a relation graph spanning all
//! proposals of the window; two graph convolutions propagate information
//! between nodes before a multi-label sigmoid classifier.

pub mod eval;
pub mod pool;
pub mod relation;

use serde::{Deserialize, Serialize};

pub use eval::{frame_map, Detection, GroundTruth, FRAME_IOU};
pub use pool::{
    adaptive_attention, attention_pool_3d, iou_2d, roi_pool_3d, Box2d,
};
pub use relation::{build_relation_graph, gcn_layer, RelationGraph};

use crate::autodiff::{bind_const, Graph, ParamTree, Var};
use crate::backbone::init_uniform;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{sigmoid, Tensor};

pub const CLIPS_PER_WINDOW: usize = 8;
pub const GCN_LAYERS: usize = 2;
pub const DEFAULT_LAMBDA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct ClipFeatureMap {
    pub index: usize,
    /// `[C, T, H, W]`
    pub feat: Tensor,
}

/// Checks that `clips` is a full window with indices `0..8` in order and a
/// shared feature shape.
pub fn validate_window(clips: &[ClipFeatureMap]) -> Result<()> {
    if clips.len() != CLIPS_PER_WINDOW {
        return Err(Error::Contract(format!(
            "expected {CLIPS_PER_WINDOW} clips, got {}",
            clips.len()
        )));
    }
    let dims = clips[0].feat.dims();
    if dims.len() != 4 {
        return Err(Error::Contract(format!("clip features must be [C, T, H, W], got {dims:?}")));
    }
    for (k, c) in clips.iter().enumerate() {
        if c.index != k {
            return Err(Error::Contract(format!("clip at position {k} has index {}", c.index)));
        }
        if c.feat.dims() != dims {
            return Err(Error::shape("clip window", c.feat.dims(), dims));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxProposal {
    pub clip: usize,
    #[serde(rename = "box")]
    pub bbox: Box2d,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstrConfig {
    pub channels: usize,
    /// RoI grid `(t, h, w)`.
    pub pool: [usize; 3],
    pub actor_dim: usize,
    pub classes: usize,
    pub lambda: f64,
}

impl LstrConfig {
    pub fn node_dim(&self) -> usize {
        self.actor_dim + self.channels
    }

    fn pooled_dim(&self) -> usize {
        self.channels * self.pool.iter().product::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstrParams<T = Tensor> {
    /// `[C·t·h·w, Dp]`
    pub proj: T,
    /// `[Dp, C]`, generates the per-actor 1×1×1 filter.
    pub kernel: T,
    /// Each `[F, F]` with `F = Dp + C`.
    pub gcn: Vec<T>,
    /// `[F, K]`
    pub classifier: T,
    /// `[1, K]`
    pub bias: T,
}

impl<T> ParamTree for LstrParams<T> {
    type Leaf = T;
    type With<U> = LstrParams<U>;

    fn map_leaves<U>(&self, f: &mut impl FnMut(&T) -> U) -> LstrParams<U> {
        LstrParams {
            proj: f(&self.proj),
            kernel: f(&self.kernel),
            gcn: self.gcn.iter().map(|w| f(w)).collect(),
            classifier: f(&self.classifier),
            bias: f(&self.bias),
        }
    }

    fn leaves(&self) -> Vec<&T> {
        let mut v = vec![&self.proj, &self.kernel];
        v.extend(self.gcn.iter());
        v.extend([&self.classifier, &self.bias]);
        v
    }

    fn leaves_mut(&mut self) -> Vec<&mut T> {
        let mut v = vec![&mut self.proj, &mut self.kernel];
        v.extend(self.gcn.iter_mut());
        v.extend([&mut self.classifier, &mut self.bias]);
        v
    }
}

impl LstrParams {
    pub fn init(cfg: &LstrConfig, rng: &mut SplitMix64) -> Result<Self> {
        if cfg.channels == 0 || cfg.actor_dim == 0 || cfg.classes == 0 || cfg.pool.contains(&0) {
            return Err(Error::Config(format!("LSTR dims must be positive: {cfg:?}")));
        }
        let (pd, f) = (cfg.pooled_dim(), cfg.node_dim());
        Ok(Self {
            proj: init_uniform(&[pd, cfg.actor_dim], pd, rng),
            kernel: init_uniform(&[cfg.actor_dim, cfg.channels], cfg.actor_dim, rng),
            gcn: (0..GCN_LAYERS).map(|_| init_uniform(&[f, f], f, rng)).collect(),
            classifier: init_uniform(&[f, cfg.classes], f, rng),
            bias: Tensor::zeros(&[1, cfg.classes]),
        })
    }
}

/// Tape nodes of one forward pass.
pub(crate) struct LstrVars {
    pub actors: Var,
    pub nodes: Var,
    pub hidden: Var,
    pub logits: Var,
}

/// Forward pass over bound clip maps. The relation graph is computed from
/// the actor feature values and enters the tape as a constant.
pub(crate) fn lstr_graph(
    g: &mut Graph,
    clips: &[Var],
    proposals: &[BoxProposal],
    p: &LstrParams<Var>,
    cfg: &LstrConfig,
) -> Result<(LstrVars, RelationGraph)> {
    if proposals.is_empty() {
        return Err(Error::Contract("no box proposals".into()));
    }
    let pool = (cfg.pool[0], cfg.pool[1], cfg.pool[2]);
    let mut actors = Vec::with_capacity(proposals.len());
    let mut nodes = Vec::with_capacity(proposals.len());
    for prop in proposals {
        let clip = *clips.get(prop.clip).ok_or_else(|| {
            Error::Contract(format!("proposal clip index {} outside the window", prop.clip))
        })?;
        let pooled = pool::roi_pool_3d_graph(g, clip, &prop.bbox, pool)?;
        let flat = g.reshape(pooled, &[1, cfg.pooled_dim()])?;
        let actor = g.matmul(flat, p.proj)?;
        let actor = g.relu(actor);
        let attn = pool::adaptive_attention_graph(g, actor, clip, p.kernel)?;
        let context = pool::attention_pool_3d_graph(g, clip, attn)?;
        nodes.push(g.concat(&[actor, context], 1)?);
        actors.push(actor);
    }
    let actors = g.concat(&actors, 0)?;
    let nodes = g.concat(&nodes, 0)?;
    let boxes: Vec<Box2d> = proposals.iter().map(|p| p.bbox).collect();
    let relation = build_relation_graph(g.value(actors), &boxes, cfg.lambda)?;
    let ahat = g.constant(relation.normalized.clone());
    let mut hidden = nodes;
    for &w in &p.gcn {
        hidden = relation::gcn_layer_graph(g, hidden, ahat, w)?;
    }
    let logits = g.matmul(hidden, p.classifier)?;
    let logits = g.add(logits, p.bias)?;
    Ok((
        LstrVars {
            actors,
            nodes,
            hidden,
            logits,
        },
        relation,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstrOutput {
    /// `[M, Dp]`
    pub actors: Tensor,
    /// `[M, Dp + C]`, actor and context before the graph.
    pub nodes: Tensor,
    pub relation: RelationGraph,
    /// `[M, F]` after the graph convolutions.
    pub hidden: Tensor,
    /// `[M, K]` per-class sigmoid scores.
    pub scores: Tensor,
}

pub fn lstr_forward(
    clips: &[ClipFeatureMap],
    proposals: &[BoxProposal],
    p: &LstrParams,
    cfg: &LstrConfig,
) -> Result<LstrOutput> {
    validate_window(clips)?;
    if clips[0].feat.dims()[0] != cfg.channels {
        return Err(Error::shape("lstr_forward", clips[0].feat.dims(), &[cfg.channels]));
    }
    let mut g = Graph::new();
    let cv: Vec<Var> = clips.iter().map(|c| g.constant(c.feat.clone())).collect();
    let pv = bind_const(&mut g, p);
    let (v, relation) = lstr_graph(&mut g, &cv, proposals, &pv, cfg)?;
    Ok(LstrOutput {
        actors: g.value(v.actors).clone(),
        nodes: g.value(v.nodes).clone(),
        relation,
        hidden: g.value(v.hidden).clone(),
        scores: g.value(v.logits).sigmoid(),
    })
}

/// Elementwise mean of two score tensors.
pub fn two_stream_average(rgb: &Tensor, flow: &Tensor) -> Result<Tensor> {
    if rgb.dims() != flow.dims() {
        return Err(Error::shape("two_stream_average", rgb.dims(), flow.dims()));
    }
    Ok(rgb.add(flow)?.scale(0.5))
}

/// Fits the classifier and bias on fixed node features `hidden: [M, F]`
/// against 0/1 targets `[M, K]` by full-batch gradient descent on the mean
/// binary cross-entropy.
pub fn fit_classifier(
    hidden: &Tensor,
    targets: &Tensor,
    steps: usize,
    lr: f64,
) -> Result<(Tensor, Tensor)> {
    let (m, f) = (hidden.dims()[0], hidden.dims()[1]);
    if targets.rank() != 2 || targets.dims()[0] != m {
        return Err(Error::shape("fit_classifier", hidden.dims(), targets.dims()));
    }
    let k = targets.dims()[1];
    let mut w = Tensor::zeros(&[f, k]);
    let mut b = Tensor::zeros(&[1, k]);
    let ht = hidden.transpose()?;
    let norm = 1.0 / (m * k) as f64;
    for _ in 0..steps {
        let z = hidden.matmul(&w)?.add(&b)?;
        let resid = Tensor::from_vec(
            &[m, k],
            z.data()
                .iter()
                .zip(targets.data())
                .map(|(&zi, &y)| (sigmoid(zi) - y) * norm)
                .collect(),
        );
        let gw = ht.matmul(&resid)?;
        let gb = resid.sum_axis(0)?;
        for (x, g) in w.data_mut().iter_mut().zip(gw.data()) {
            *x -= lr * g;
        }
        for (x, g) in b.data_mut().iter_mut().zip(gb.data()) {
            *x -= lr * g;
        }
    }
    Ok((w, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(seed: u64, nonneg: bool) -> (Vec<ClipFeatureMap>, LstrConfig, LstrParams, SplitMix64) {
        let mut rng = SplitMix64::new(seed);
        let cfg = LstrConfig {
            channels: 3,
            pool: [1, 2, 2],
            actor_dim: 4,
            classes: 3,
            lambda: DEFAULT_LAMBDA,
        };
        let clips = (0..CLIPS_PER_WINDOW)
            .map(|index| {
                let f = Tensor::randn(&[3, 2, 4, 4], &mut rng);
                ClipFeatureMap {
                    index,
                    feat: if nonneg { f.map(f64::abs) } else { f },
                }
            })
            .collect();
        let p = LstrParams::init(&cfg, &mut rng).unwrap();
        (clips, cfg, p, rng)
    }

    fn proposal(clip: usize, b: [f64; 4]) -> BoxProposal {
        BoxProposal {
            clip,
            bbox: Box2d::try_from(b).unwrap(),
            score: 0.9,
        }
    }

    #[test]
    fn single_proposal_hand_recomputation() {
        let (clips, mut cfg, mut p, mut rng) = setup(1, true);
        cfg.lambda = 1.0;
        p.gcn = vec![Tensor::identity(7); 2];
        p.bias = Tensor::randn(&[1, 3], &mut rng);
        let prop = proposal(2, [0.0, 0.25, 0.5, 1.0]);
        let out = lstr_forward(&clips, std::slice::from_ref(&prop), &p, &cfg).unwrap();
        assert_eq!(out.relation.normalized, Tensor::identity(1));

        let feat = &clips[2].feat;
        let pooled = roi_pool_3d(feat, &prop.bbox, (1, 2, 2)).unwrap();
        let actor = pooled.reshape(&[1, 12]).unwrap().matmul(&p.proj).unwrap().relu();
        let attn = adaptive_attention(&actor.reshape(&[4]).unwrap(), feat, &p.kernel).unwrap();
        let ctx = attention_pool_3d(feat, &attn).unwrap();
        let node: Vec<f64> = actor.data().iter().chain(ctx.data()).copied().collect();
        for k in 0..3 {
            let z: f64 = (0..7).map(|i| node[i] * p.classifier.get(&[i, k])).sum::<f64>() + p.bias.data()[k];
            assert!((out.scores.get(&[0, k]) - sigmoid(z)).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_proposals_score_identically() {
        let (clips, cfg, p, _) = setup(2, false);
        let a = proposal(0, [0.1, 0.1, 0.6, 0.7]);
        let b = proposal(5, [0.3, 0.2, 0.9, 0.8]);
        let out = lstr_forward(&clips, &[a.clone(), b, a], &p, &cfg).unwrap();
        let s = &out.scores;
        for k in 0..3 {
            assert_eq!(s.get(&[0, k]), s.get(&[2, k]));
        }
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let r = &out.relation;
        for i in 0..3 {
            assert_eq!(r.adjacency.get(&[i, i]), 1.0);
            for j in 0..3 {
                assert_eq!(r.adjacency.get(&[i, j]), r.adjacency.get(&[j, i]));
            }
        }
    }

    #[test]
    fn window_contract() {
        let (mut clips, cfg, p, _) = setup(3, false);
        assert!(lstr_forward(&clips, &[proposal(8, [0.0, 0.0, 1.0, 1.0])], &p, &cfg).is_err());
        assert!(lstr_forward(&clips, &[], &p, &cfg).is_err());
        clips.pop();
        assert!(lstr_forward(&clips, &[proposal(0, [0.0, 0.0, 1.0, 1.0])], &p, &cfg).is_err());
    }

    #[test]
    fn two_stream_examples() {
        let a = Tensor::vector(vec![0.2]);
        let b = Tensor::vector(vec![0.8]);
        assert_eq!(two_stream_average(&a, &b).unwrap().data(), &[0.5]);
        assert_eq!(two_stream_average(&a, &a).unwrap(), a);
        assert!(two_stream_average(&a, &Tensor::vector(vec![0.1, 0.2])).is_err());
    }

    #[test]
    fn classifier_fits_separable_targets() {
        let h = Tensor::matrix(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.1], &[0.1, 1.0]]);
        let y = Tensor::matrix(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let (w, b) = fit_classifier(&h, &y, 2000, 1.0).unwrap();
        let s = h.matmul(&w).unwrap().add(&b).unwrap().sigmoid();
        for (p, t) in s.data().iter().zip(y.data()) {
            assert!((p - t).abs() < 0.3, "{p} vs {t}");
        }
    }
}
