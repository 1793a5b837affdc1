//! Pseudo-3D residual blocks, local/global diffusion blocks, and a small
//! configurable backbone built from them.
//!
//! A P3D block is a bottleneck whose 3×3×3 core is factorized into a 3×3
//! spatial conv `S` and a 3-tap temporal conv `T`:
//!
//! * A (cascade):  `T(S(h))`
//! * B (parallel): `S(h) + T(h)`
//! * C (mixed):    `s + T(s)` with `s = S(h)`
//!
//! An LGD block carries a per-clip global vector next to the local feature
//! map, injects the global vector into the local path before the P3D block,
//! and updates the global vector from itself and the pooled local output.

use serde::{Deserialize, Serialize};

use crate::autodiff::{bind_const, Graph, ParamTree, Var};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum P3DVariant {
    A,
    B,
    C,
}

#[derive(Clone, Debug, PartialEq)]
pub struct P3DBlockParams<T = Tensor> {
    pub variant: P3DVariant,
    /// `[C', C, 1, 1]`
    pub reduce: T,
    /// `[C', C', 3, 3]`
    pub spatial: T,
    /// `[C', C', 3]`
    pub temporal: T,
    /// `[C, C', 1, 1]`
    pub expand: T,
}

impl<T> ParamTree for P3DBlockParams<T> {
    type Leaf = T;
    type With<U> = P3DBlockParams<U>;

    fn map_leaves<U>(&self, f: &mut impl FnMut(&T) -> U) -> P3DBlockParams<U> {
        P3DBlockParams {
            variant: self.variant,
            reduce: f(&self.reduce),
            spatial: f(&self.spatial),
            temporal: f(&self.temporal),
            expand: f(&self.expand),
        }
    }

    fn leaves(&self) -> Vec<&T> {
        vec![&self.reduce, &self.spatial, &self.temporal, &self.expand]
    }

    fn leaves_mut(&mut self) -> Vec<&mut T> {
        vec![&mut self.reduce, &mut self.spatial, &mut self.temporal, &mut self.expand]
    }
}

/// uniform(-s, s) with s = 1/sqrt(fan_in)
pub(crate) fn init_uniform(dims: &[usize], fan_in: usize, rng: &mut SplitMix64) -> Tensor {
    Tensor::uniform(dims, 1.0 / (fan_in as f64).sqrt(), rng)
}

impl P3DBlockParams {
    pub fn init(variant: P3DVariant, channels: usize, bottleneck: usize, rng: &mut SplitMix64) -> Self {
        let (c, m) = (channels, bottleneck);
        Self {
            variant,
            reduce: init_uniform(&[m, c, 1, 1], c, rng),
            spatial: init_uniform(&[m, m, 3, 3], m * 9, rng),
            temporal: init_uniform(&[m, m, 3], m * 3, rng),
            expand: init_uniform(&[c, m, 1, 1], m, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.reduce.dims()[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LgdBlockParams<T = Tensor> {
    pub p3d: P3DBlockParams<T>,
    /// `[C, C]`, global → local injection.
    pub g2l: T,
    /// `[C, 2C]`, combiner over `[global; pooled local]`.
    pub l2g: T,
}

impl<T> ParamTree for LgdBlockParams<T> {
    type Leaf = T;
    type With<U> = LgdBlockParams<U>;

    fn map_leaves<U>(&self, f: &mut impl FnMut(&T) -> U) -> LgdBlockParams<U> {
        LgdBlockParams {
            p3d: self.p3d.map_leaves(f),
            g2l: f(&self.g2l),
            l2g: f(&self.l2g),
        }
    }

    fn leaves(&self) -> Vec<&T> {
        let mut v = self.p3d.leaves();
        v.extend([&self.g2l, &self.l2g]);
        v
    }

    fn leaves_mut(&mut self) -> Vec<&mut T> {
        let mut v = self.p3d.leaves_mut();
        v.extend([&mut self.g2l, &mut self.l2g]);
        v
    }
}

impl LgdBlockParams {
    pub fn init(variant: P3DVariant, channels: usize, bottleneck: usize, rng: &mut SplitMix64) -> Self {
        let c = channels;
        Self {
            p3d: P3DBlockParams::init(variant, c, bottleneck, rng),
            g2l: init_uniform(&[c, c], c, rng),
            l2g: init_uniform(&[c, 2 * c], 2 * c, rng),
        }
    }

    /// Diffusion switched off: no injection, global passes through unchanged.
    pub fn decoupled(p3d: P3DBlockParams) -> Self {
        let c = p3d.channels();
        let mut l2g = Tensor::zeros(&[c, 2 * c]);
        for i in 0..c {
            l2g.data_mut()[i * 2 * c + i] = 1.0;
        }
        Self {
            p3d,
            g2l: Tensor::zeros(&[c, c]),
            l2g,
        }
    }
}

fn check_p3d(g: &Graph, x: Var, p: &P3DBlockParams<Var>) -> Result<()> {
    let xd = g.dims(x);
    let rd = g.dims(p.reduce);
    let ed = g.dims(p.expand);
    if xd.len() != 5 || rd.len() != 4 || xd[1] != rd[1] || ed[0] != rd[1] || ed[1] != rd[0] {
        return Err(Error::shape("p3d_block", xd, rd));
    }
    Ok(())
}

pub fn p3d_block_graph(g: &mut Graph, x: Var, p: &P3DBlockParams<Var>) -> Result<Var> {
    check_p3d(g, x, p)?;
    let h = g.conv_spatial(x, p.reduce)?;
    let h = g.relu(h);
    let y = match p.variant {
        P3DVariant::A => {
            let s = g.conv_spatial(h, p.spatial)?;
            g.conv_temporal(s, p.temporal)?
        }
        P3DVariant::B => {
            let s = g.conv_spatial(h, p.spatial)?;
            let t = g.conv_temporal(h, p.temporal)?;
            g.add(s, t)?
        }
        P3DVariant::C => {
            let s = g.conv_spatial(h, p.spatial)?;
            let t = g.conv_temporal(s, p.temporal)?;
            g.add(s, t)?
        }
    };
    let y = g.relu(y);
    let e = g.conv_spatial(y, p.expand)?;
    let out = g.add(x, e)?;
    Ok(g.relu(out))
}

pub fn p3d_block(x: &Tensor, p: &P3DBlockParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let pv = bind_const(&mut g, p);
    let y = p3d_block_graph(&mut g, xv, &pv)?;
    Ok(g.value(y).clone())
}

/// Mean over every axis after the channel axis: `[N, C, ...] -> [N, C]`.
pub(crate) fn global_avg_pool(g: &mut Graph, x: Var) -> Result<Var> {
    let d = g.dims(x).to_vec();
    let rest: usize = d[2..].iter().product();
    let flat = g.reshape(x, &[d[0], d[1], rest])?;
    g.mean_axis(flat, 2)
}

pub fn lgd_block_graph(
    g: &mut Graph,
    local: Var,
    global: Var,
    p: &LgdBlockParams<Var>,
) -> Result<(Var, Var)> {
    let ld = g.dims(local).to_vec();
    let gd = g.dims(global).to_vec();
    let c = ld.get(1).copied().unwrap_or(0);
    if ld.len() != 5 || gd != [ld[0], c] || g.dims(p.g2l) != [c, c] || g.dims(p.l2g) != [c, 2 * c] {
        return Err(Error::shape("lgd_block", &ld, &gd));
    }
    let g2l_t = g.transpose(p.g2l)?;
    let inj = g.matmul(global, g2l_t)?;
    let inj = g.reshape(inj, &[ld[0], c, 1, 1, 1])?;
    let injected = g.add(local, inj)?;
    let local_out = p3d_block_graph(g, injected, &p.p3d)?;
    let pooled = global_avg_pool(g, local_out)?;
    let joined = g.concat(&[global, pooled], 1)?;
    let l2g_t = g.transpose(p.l2g)?;
    let global_out = g.matmul(joined, l2g_t)?;
    Ok((local_out, global_out))
}

pub fn lgd_block(local: &Tensor, global: &Tensor, p: &LgdBlockParams) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let l = g.constant(local.clone());
    let gl = g.constant(global.clone());
    let pv = bind_const(&mut g, p);
    let (lo, go) = lgd_block_graph(&mut g, l, gl, &pv)?;
    Ok((g.value(lo).clone(), g.value(go).clone()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    #[serde(rename = "P3D-A")]
    P3dA,
    #[serde(rename = "P3D-B")]
    P3dB,
    #[serde(rename = "P3D-C")]
    P3dC,
    #[serde(rename = "LGD")]
    Lgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub width: usize,
    pub blocks: usize,
    pub kind: BlockKind,
    /// Bottleneck width; defaults to `max(1, width / 2)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bottleneck: Option<usize>,
    /// P3D variant on the local path of LGD blocks (default A).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_variant: Option<P3DVariant>,
}

impl StageConfig {
    pub fn new(width: usize, blocks: usize, kind: BlockKind) -> Self {
        Self {
            width,
            blocks,
            kind,
            bottleneck: None,
            local_variant: None,
        }
    }

    fn bottleneck_width(&self) -> usize {
        self.bottleneck.unwrap_or((self.width / 2).max(1))
    }

    fn variant(&self) -> P3DVariant {
        match self.kind {
            BlockKind::P3dA => P3DVariant::A,
            BlockKind::P3dB => P3DVariant::B,
            BlockKind::P3dC => P3DVariant::C,
            BlockKind::Lgd => self.local_variant.unwrap_or(P3DVariant::A),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub stages: Vec<StageConfig>,
    /// `[C_in, T, H, W]`
    pub input: [usize; 4],
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            stages: vec![
                StageConfig::new(8, 1, BlockKind::P3dA),
                StageConfig::new(16, 1, BlockKind::Lgd),
            ],
            input: [3, 16, 16, 16],
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("backbone needs at least one stage".into()));
        }
        if self.input.contains(&0) {
            return Err(Error::Config(format!("input dims {:?} must be positive", self.input)));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.width == 0 || s.bottleneck == Some(0) {
                return Err(Error::Config(format!("stage {i}: widths must be positive")));
            }
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        self.stages.last().map_or(self.input[0], |s| s.width)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BlockParams<T = Tensor> {
    P3d(P3DBlockParams<T>),
    Lgd(LgdBlockParams<T>),
}

impl<T> ParamTree for BlockParams<T> {
    type Leaf = T;
    type With<U> = BlockParams<U>;

    fn map_leaves<U>(&self, f: &mut impl FnMut(&T) -> U) -> BlockParams<U> {
        match self {
            BlockParams::P3d(p) => BlockParams::P3d(p.map_leaves(f)),
            BlockParams::Lgd(p) => BlockParams::Lgd(p.map_leaves(f)),
        }
    }

    fn leaves(&self) -> Vec<&T> {
        match self {
            BlockParams::P3d(p) => p.leaves(),
            BlockParams::Lgd(p) => p.leaves(),
        }
    }

    fn leaves_mut(&mut self) -> Vec<&mut T> {
        match self {
            BlockParams::P3d(p) => p.leaves_mut(),
            BlockParams::Lgd(p) => p.leaves_mut(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageParams<T = Tensor> {
    /// 1×1×1 channel projection into the stage width, `[width, C_prev, 1, 1]`.
    pub proj: T,
    pub blocks: Vec<BlockParams<T>>,
}

impl<T> ParamTree for StageParams<T> {
    type Leaf = T;
    type With<U> = StageParams<U>;

    fn map_leaves<U>(&self, f: &mut impl FnMut(&T) -> U) -> StageParams<U> {
        StageParams {
            proj: f(&self.proj),
            blocks: self.blocks.map_leaves(f),
        }
    }

    fn leaves(&self) -> Vec<&T> {
        let mut v = vec![&self.proj];
        v.extend(self.blocks.leaves());
        v
    }

    fn leaves_mut(&mut self) -> Vec<&mut T> {
        let mut v = vec![&mut self.proj];
        v.extend(self.blocks.leaves_mut());
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneParams<T = Tensor> {
    pub stages: Vec<StageParams<T>>,
}

impl<T> ParamTree for BackboneParams<T> {
    type Leaf = T;
    type With<U> = BackboneParams<U>;

    fn map_leaves<U>(&self, f: &mut impl FnMut(&T) -> U) -> BackboneParams<U> {
        BackboneParams {
            stages: self.stages.map_leaves(f),
        }
    }

    fn leaves(&self) -> Vec<&T> {
        self.stages.leaves()
    }

    fn leaves_mut(&mut self) -> Vec<&mut T> {
        self.stages.leaves_mut()
    }
}

impl BackboneParams {
    pub fn init(cfg: &BackboneConfig, rng: &mut SplitMix64) -> Result<Self> {
        cfg.validate()?;
        let mut prev = cfg.input[0];
        let mut stages = Vec::with_capacity(cfg.stages.len());
        for s in &cfg.stages {
            let proj = init_uniform(&[s.width, prev, 1, 1], prev, rng);
            let blocks = (0..s.blocks)
                .map(|_| match s.kind {
                    BlockKind::Lgd => {
                        BlockParams::Lgd(LgdBlockParams::init(s.variant(), s.width, s.bottleneck_width(), rng))
                    }
                    _ => BlockParams::P3d(P3DBlockParams::init(s.variant(), s.width, s.bottleneck_width(), rng)),
                })
                .collect();
            stages.push(StageParams { proj, blocks });
            prev = s.width;
        }
        Ok(Self { stages })
    }
}

/// `[N, C_in, T, H, W] -> [N, T, D]`: stages in order, then a spatial mean
/// per time step.
pub fn backbone_forward_graph(
    g: &mut Graph,
    clip: Var,
    cfg: &BackboneConfig,
    params: &BackboneParams<Var>,
) -> Result<Var> {
    let d = g.dims(clip).to_vec();
    if d.len() != 5 || d[1..] != cfg.input {
        let mut want = vec![d.first().copied().unwrap_or(1)];
        want.extend_from_slice(&cfg.input);
        return Err(Error::shape("backbone_forward", &d, &want));
    }
    if params.stages.len() != cfg.stages.len() {
        return Err(Error::Config("backbone params do not match stage count".into()));
    }
    let mut x = clip;
    for stage in &params.stages {
        let p = g.conv_spatial(x, stage.proj)?;
        x = g.relu(p);
        let mut global = None;
        for block in &stage.blocks {
            match block {
                BlockParams::P3d(bp) => x = p3d_block_graph(g, x, bp)?,
                BlockParams::Lgd(bp) => {
                    let gl = match global {
                        Some(v) => v,
                        None => global_avg_pool(g, x)?,
                    };
                    let (l, gn) = lgd_block_graph(g, x, gl, bp)?;
                    x = l;
                    global = Some(gn);
                }
            }
        }
    }
    let od = g.dims(x).to_vec();
    let flat = g.reshape(x, &[od[0], od[1], od[2], od[3] * od[4]])?;
    let per_t = g.mean_axis(flat, 3)?;
    g.permute(per_t, &[0, 2, 1])
}

pub fn backbone_forward(clip: &Tensor, cfg: &BackboneConfig, params: &BackboneParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let c = g.constant(clip.clone());
    let pv = bind_const(&mut g, params);
    let out = backbone_forward_graph(&mut g, c, cfg, &pv)?;
    Ok(g.value(out).clone())
}

/// Feature sequence `[T, D]` of a single clip `[C_in, T, H, W]`.
pub fn clip_features(clip: &Tensor, cfg: &BackboneConfig, params: &BackboneParams) -> Result<Tensor> {
    let mut dims = vec![1];
    dims.extend_from_slice(clip.dims());
    let batched = clip.reshape(&dims)?;
    let out = backbone_forward(&batched, cfg, params)?;
    out.reshape(&out.dims()[1..])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> SplitMix64 {
        SplitMix64::new(42)
    }

    #[test]
    fn zero_expand_is_relu_identity() {
        let mut r = rng();
        for variant in [P3DVariant::A, P3DVariant::B, P3DVariant::C] {
            let mut p = P3DBlockParams::init(variant, 4, 2, &mut r);
            p.expand = Tensor::zeros(p.expand.dims());
            let x = Tensor::randn(&[2, 4, 3, 4, 4], &mut r);
            assert_eq!(p3d_block(&x, &p).unwrap(), x.relu());
            let nonneg = x.relu();
            assert_eq!(p3d_block(&nonneg, &p).unwrap(), nonneg);
        }
    }

    #[test]
    fn variant_b_without_temporal_equals_a_with_identity_temporal() {
        let mut r = rng();
        let base = P3DBlockParams::init(P3DVariant::B, 4, 3, &mut r);
        let x = Tensor::randn(&[1, 4, 5, 4, 3], &mut r);

        let mut b = base.clone();
        b.temporal = Tensor::zeros(&[3, 3, 3]);
        let mut a = base;
        a.variant = P3DVariant::A;
        let mut ident = Tensor::zeros(&[3, 3, 3]);
        for i in 0..3 {
            ident.data_mut()[(i * 3 + i) * 3 + 1] = 1.0;
        }
        a.temporal = ident;

        let diff = p3d_block(&x, &b).unwrap().max_abs_diff(&p3d_block(&x, &a).unwrap());
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn shapes_preserved_and_mismatch_rejected() {
        let mut r = rng();
        let x = Tensor::randn(&[2, 6, 3, 5, 4], &mut r);
        for variant in [P3DVariant::A, P3DVariant::B, P3DVariant::C] {
            let p = P3DBlockParams::init(variant, 6, 3, &mut r);
            assert_eq!(p3d_block(&x, &p).unwrap().dims(), x.dims());
            let wrong = P3DBlockParams::init(variant, 5, 3, &mut r);
            assert!(matches!(p3d_block(&x, &wrong), Err(Error::Shape { .. })));
        }
    }

    #[test]
    fn lgd_zero_diffusion_decouples() {
        let mut r = rng();
        let p3d = P3DBlockParams::init(P3DVariant::C, 4, 2, &mut r);
        let lgd = LgdBlockParams::decoupled(p3d.clone());
        let local = Tensor::randn(&[2, 4, 3, 3, 3], &mut r);
        let global = Tensor::randn(&[2, 4], &mut r);
        let (l, g) = lgd_block(&local, &global, &lgd).unwrap();
        assert_eq!(l, p3d_block(&local, &p3d).unwrap());
        assert_eq!(g, global);
    }

    #[test]
    fn lgd_zero_global_gets_no_injection() {
        let mut r = rng();
        let lgd = LgdBlockParams::init(P3DVariant::A, 4, 2, &mut r);
        let local = Tensor::randn(&[1, 4, 2, 3, 3], &mut r);
        let (l, _) = lgd_block(&local, &Tensor::zeros(&[1, 4]), &lgd).unwrap();
        assert_eq!(l, p3d_block(&local, &lgd.p3d).unwrap());
    }

    #[test]
    fn lgd_global_update_matches_direct_recomputation() {
        let mut r = rng();
        let lgd = LgdBlockParams::init(P3DVariant::B, 3, 2, &mut r);
        let local = Tensor::randn(&[2, 3, 2, 2, 3], &mut r);
        let global = Tensor::randn(&[2, 3], &mut r);
        let (l, g) = lgd_block(&local, &global, &lgd).unwrap();
        for n in 0..2 {
            let mut mean = [0.0; 3];
            for (c, m) in mean.iter_mut().enumerate() {
                let mut s = 0.0;
                for t in 0..2 {
                    for h in 0..2 {
                        for w in 0..3 {
                            s += l.get(&[n, c, t, h, w]);
                        }
                    }
                }
                *m = s / 12.0;
            }
            for i in 0..3 {
                let mut e = 0.0;
                for j in 0..3 {
                    e += lgd.l2g.get(&[i, j]) * global.get(&[n, j]);
                    e += lgd.l2g.get(&[i, 3 + j]) * mean[j];
                }
                assert!((g.get(&[n, i]) - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lgd_channel_mismatch() {
        let mut r = rng();
        let lgd = LgdBlockParams::init(P3DVariant::A, 4, 2, &mut r);
        let local = Tensor::zeros(&[1, 4, 2, 2, 2]);
        assert!(lgd_block(&local, &Tensor::zeros(&[1, 3]), &lgd).is_err());
    }

    fn small_cfg(kind: BlockKind) -> BackboneConfig {
        BackboneConfig {
            stages: vec![StageConfig::new(4, 2, kind)],
            input: [2, 5, 4, 4],
        }
    }

    #[test]
    fn backbone_output_shape_and_batch_independence() {
        let cfg = BackboneConfig {
            stages: vec![StageConfig::new(4, 1, BlockKind::P3dB), StageConfig::new(6, 1, BlockKind::Lgd)],
            input: [2, 5, 4, 4],
        };
        let mut r = rng();
        let params = BackboneParams::init(&cfg, &mut r).unwrap();
        let a = Tensor::randn(&[1, 2, 5, 4, 4], &mut r);
        let b = Tensor::randn(&[1, 2, 5, 4, 4], &mut r);
        let ab = Tensor::concat(&[&a, &b], 0).unwrap();
        let ba = Tensor::concat(&[&b, &a], 0).unwrap();
        let yab = backbone_forward(&ab, &cfg, &params).unwrap();
        let yba = backbone_forward(&ba, &cfg, &params).unwrap();
        assert_eq!(yab.dims(), &[2, 5, 6]);
        assert_eq!(yab.slice(0, 0, 1).unwrap(), yba.slice(0, 1, 2).unwrap());
        assert_eq!(yab.slice(0, 1, 2).unwrap(), yba.slice(0, 0, 1).unwrap());

        let aa = Tensor::concat(&[&a, &a], 0).unwrap();
        let yaa = backbone_forward(&aa, &cfg, &params).unwrap();
        assert_eq!(yaa.slice(0, 0, 1).unwrap(), yaa.slice(0, 1, 2).unwrap());
        let single = clip_features(&a.reshape(&[2, 5, 4, 4]).unwrap(), &cfg, &params).unwrap();
        assert_eq!(single.dims(), &[5, 6]);
    }

    #[test]
    fn zero_diffusion_lgd_stage_is_plain_p3d_stage() {
        let mut r = rng();
        let lgd_cfg = small_cfg(BlockKind::Lgd);
        let p3d_cfg = small_cfg(BlockKind::P3dA);
        let lgd_params = BackboneParams::init(&lgd_cfg, &mut r).unwrap();
        let mut p3d_params = lgd_params.clone();
        let mut decoupled = lgd_params.clone();
        for (sp, sd) in p3d_params.stages.iter_mut().zip(decoupled.stages.iter_mut()) {
            for (bp, bd) in sp.blocks.iter_mut().zip(sd.blocks.iter_mut()) {
                let BlockParams::Lgd(l) = bp.clone() else { unreachable!() };
                *bp = BlockParams::P3d(l.p3d.clone());
                *bd = BlockParams::Lgd(LgdBlockParams::decoupled(l.p3d));
            }
        }
        let clip = Tensor::randn(&[1, 2, 5, 4, 4], &mut r);
        let y1 = backbone_forward(&clip, &lgd_cfg, &decoupled).unwrap();
        let y2 = backbone_forward(&clip, &p3d_cfg, &p3d_params).unwrap();
        assert_eq!(y1, y2);
    }

    #[test]
    fn backbone_rejects_wrong_input_dims() {
        let cfg = small_cfg(BlockKind::P3dC);
        let params = BackboneParams::init(&cfg, &mut rng()).unwrap();
        let clip = Tensor::zeros(&[1, 2, 5, 4, 3]);
        assert!(matches!(backbone_forward(&clip, &cfg, &params), Err(Error::Shape { .. })));
    }

    #[test]
    fn config_validation() {
        let mut cfg = BackboneConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.stages[0].width = 0;
        assert!(cfg.validate().is_err());
        cfg.stages.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_kinds() {
        let cfg: BackboneConfig = serde_json::from_str(
            r#"{"stages":[{"width":8,"blocks":1,"kind":"P3D-C"},{"width":16,"blocks":2,"kind":"LGD","local_variant":"B"}],"input":[3,16,16,16]}"#,
        )
        .unwrap();
        assert_eq!(cfg.stages[0].kind, BlockKind::P3dC);
        assert_eq!(cfg.stages[1].local_variant, Some(P3DVariant::B));
    }
}
