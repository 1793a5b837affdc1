//! Finite-difference checks of every differentiable op and of the composed
//! training losses.

use rayon::prelude::*;

use crate::autodiff::{rebind, Graph, ParamTree, Var};
use crate::backbone::{
    backbone_forward_graph, lgd_block_graph, p3d_block_graph, BackboneConfig, BackboneParams, BlockKind,
    LgdBlockParams, P3DBlockParams, P3DVariant, StageConfig,
};
use crate::captioning::decoder::{xent_graph, CaptionConfig, CaptionModelParams};
use crate::captioning::scst::surrogate_graph;
use crate::captioning::EOS;
use crate::error::Result;
use crate::gradcheck::{check, GradCheckConfig, GradCheckReport};
use crate::lstr::{lstr_graph, pool, relation, BoxProposal, Box2d, LstrConfig, LstrParams, CLIPS_PER_WINDOW};
use crate::quantization::{tcp_graph, TcpParams};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

type Job = Box<dyn Fn(&GradCheckConfig) -> Result<GradCheckReport> + Send + Sync>;

/// `Σ v ⊙ R` for a fixed random `R`, turning any output into a scalar whose
/// gradient reaches every element.
fn probe(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let r = Tensor::randn(g.dims(v), &mut SplitMix64::new(seed));
    let r = g.constant(r);
    let m = g.mul(v, r)?;
    Ok(g.sum_all(m))
}

fn unary(name: &'static str, input: Tensor, op: fn(&mut Graph, Var) -> Result<Var>) -> Job {
    Box::new(move |cfg| {
        check(
            name,
            std::slice::from_ref(&input),
            |g, v| {
                let y = op(g, v[0])?;
                probe(g, y, 1)
            },
            cfg,
        )
    })
}

fn binary(name: &'static str, a: Tensor, b: Tensor, op: fn(&mut Graph, Var, Var) -> Result<Var>) -> Job {
    Box::new(move |cfg| {
        check(
            name,
            &[a.clone(), b.clone()],
            |g, v| {
                let y = op(g, v[0], v[1])?;
                probe(g, y, 2)
            },
            cfg,
        )
    })
}

/// Gradient check over the leaves of a parameter bundle plus extra inputs.
fn with_params<P, F>(name: &'static str, params: P, extra: Vec<Tensor>, f: F) -> Job
where
    P: ParamTree<Leaf = Tensor> + Send + Sync + 'static,
    F: Fn(&mut Graph, &P::With<Var>, &[Var]) -> Result<Var> + Send + Sync + 'static,
{
    Box::new(move |cfg| {
        let mut inputs: Vec<Tensor> = params.leaves().into_iter().cloned().collect();
        let n = inputs.len();
        inputs.extend(extra.iter().cloned());
        check(
            name,
            &inputs,
            |g, v| {
                let pv = rebind(&params, &v[..n])?;
                f(g, &pv, &v[n..])
            },
            cfg,
        )
    })
}

fn tiny_backbone() -> BackboneConfig {
    BackboneConfig {
        stages: vec![
            StageConfig::new(4, 1, BlockKind::P3dB),
            StageConfig::new(4, 1, BlockKind::Lgd),
        ],
        input: [2, 3, 4, 4],
    }
}

fn jobs() -> Result<Vec<Job>> {
    let mut rng = SplitMix64::new(0x6772_6164);
    let mut r = |dims: &[usize]| Tensor::randn(dims, &mut rng);

    let mut jobs: Vec<Job> = vec![
        binary("matmul", r(&[3, 4]), r(&[4, 2]), |g, a, b| g.matmul(a, b)),
        binary("add_broadcast", r(&[4, 4]), r(&[1, 4]), |g, a, b| g.add(a, b)),
        binary("sub_broadcast", r(&[4, 4]), r(&[4, 1]), |g, a, b| g.sub(a, b)),
        binary("mul", r(&[2, 3, 2]), r(&[2, 3, 2]), |g, a, b| g.mul(a, b)),
        unary("scale", r(&[24]), |g, a| Ok(g.scale(a, -1.7))),
        unary("relu", r(&[4, 5]), |g, a| Ok(g.relu(a))),
        unary("sigmoid", r(&[4, 5]), |g, a| Ok(g.sigmoid(a))),
        unary("tanh", r(&[4, 5]), |g, a| Ok(g.tanh(a))),
        unary("exp", r(&[24]), |g, a| Ok(g.exp(a))),
        unary("ln", r(&[24]).map(|v| v.abs() + 0.5), |g, a| Ok(g.ln(a))),
        unary("reshape", r(&[4, 6]), |g, a| g.reshape(a, &[3, 8])),
        unary("permute", r(&[2, 3, 4]), |g, a| g.permute(a, &[2, 0, 1])),
        unary("index_select", r(&[5, 4]), |g, a| g.index_select(a, 0, &[3, 1, 1])),
        unary("slice", r(&[4, 6]), |g, a| g.slice(a, 1, 2, 5)),
        unary("max_axis", r(&[4, 5]), |g, a| g.max_axis(a, 1)),
        binary("concat", r(&[4, 3]), r(&[4, 2]), |g, a, b| g.concat(&[a, b], 1)),
        unary("sum_all", r(&[5, 5]), |g, a| Ok(g.sum_all(a))),
        unary("mean_axis", r(&[3, 4, 2]), |g, a| g.mean_axis(a, 1)),
        unary("softmax", r(&[4, 5]), |g, a| g.softmax(a, 1)),
        unary("log_softmax", r(&[4, 5]), |g, a| g.log_softmax(a, 0)),
        binary("conv_spatial", r(&[2, 2, 2, 4, 5]), r(&[3, 2, 3, 3]), |g, x, w| g.conv_spatial(x, w)),
        binary("conv_temporal", r(&[1, 2, 4, 3, 3]), r(&[2, 2, 3]), |g, x, w| g.conv_temporal(x, w)),
        binary("depthwise_temporal_conv", r(&[6, 3]), r(&[3, 3]), |g, x, k| {
            g.depthwise_temporal_conv(x, k)
        }),
        unary("roi_pool_3d", r(&[2, 3, 4, 5]), |g, f| {
            let b = Box2d::new(0.1, 0.2, 0.8, 0.9)?;
            pool::roi_pool_3d_graph(g, f, &b, (2, 2, 2))
        }),
        binary("adaptive_attention_pool", r(&[2, 3, 2, 3, 3]), r(&[4, 3]), |g, f, k| {
            let actor = g.slice(f, 0, 0, 1)?;
            let actor = g.reshape(actor, &[1, 54])?;
            let actor = g.slice(actor, 1, 0, 4)?;
            let map = g.slice(f, 0, 1, 2)?;
            let map = g.reshape(map, &[3, 2, 3, 3])?;
            let attn = pool::adaptive_attention_graph(g, actor, map, k)?;
            pool::attention_pool_3d_graph(g, map, attn)
        }),
    ];

    let x = r(&[4, 3]).map(f64::abs);
    let a = relation::normalize_adjacency(&Tensor::matrix(&[
        &[1.0, 0.3, 0.0, 0.5],
        &[0.3, 1.0, 0.2, 0.0],
        &[0.0, 0.2, 1.0, 0.7],
        &[0.5, 0.0, 0.7, 1.0],
    ]));
    jobs.push(Box::new(move |cfg| {
        check(
            "gcn_layer",
            &[x.clone(), Tensor::randn(&[3, 3], &mut SplitMix64::new(9))],
            |g, v| {
                let ahat = g.constant(a.clone());
                let y = relation::gcn_layer_graph(g, v[0], ahat, v[1])?;
                probe(g, y, 3)
            },
            cfg,
        )
    }));

    for (name, variant) in [("p3d_a", P3DVariant::A), ("p3d_b", P3DVariant::B), ("p3d_c", P3DVariant::C)] {
        let mut prng = SplitMix64::new(name.len() as u64 + variant as u64);
        let p = P3DBlockParams::init(variant, 3, 2, &mut prng);
        let x = Tensor::randn(&[1, 3, 3, 4, 4], &mut prng);
        jobs.push(with_params(name, p, vec![x], |g, pv, ex| {
            let y = p3d_block_graph(g, ex[0], pv)?;
            probe(g, y, 4)
        }));
    }

    let mut lrng = SplitMix64::new(44);
    let lgd = LgdBlockParams::init(P3DVariant::A, 3, 2, &mut lrng);
    let local = Tensor::randn(&[1, 3, 2, 3, 3], &mut lrng);
    let global = Tensor::randn(&[1, 3], &mut lrng);
    jobs.push(with_params("lgd", lgd, vec![local, global], |g, pv, ex| {
        let (l, gl) = lgd_block_graph(g, ex[0], ex[1], pv)?;
        let a = probe(g, l, 5)?;
        let b = probe(g, gl, 6)?;
        g.add(a, b)
    }));

    let bcfg = tiny_backbone();
    let mut brng = SplitMix64::new(45);
    let bp = BackboneParams::init(&bcfg, &mut brng)?;
    let mut clip_dims = vec![1];
    clip_dims.extend_from_slice(&bcfg.input);
    let clip = Tensor::randn(&clip_dims, &mut brng);
    jobs.push(with_params("backbone_2_block", bp, vec![clip], move |g, pv, ex| {
        let y = backbone_forward_graph(g, ex[0], &bcfg, pv)?;
        probe(g, y, 7)
    }));

    let mut trng = SplitMix64::new(46);
    let tp = TcpParams::init(3, &mut trng);
    let seq = Tensor::randn(&[5, 3], &mut trng);
    jobs.push(with_params("tcp", tp, vec![seq], |g, pv, ex| {
        let y = tcp_graph(g, ex[0], pv)?;
        probe(g, y, 8)
    }));

    let ccfg = CaptionConfig {
        vocab: 7,
        embed: 3,
        hidden: 4,
        feat: 3,
        attrs: 2,
        attr_proj: 2,
        attention: 3,
    };
    let mut crng = SplitMix64::new(47);
    let cp = CaptionModelParams::init(&ccfg, &mut crng)?;
    let frames = Tensor::randn(&[4, 3], &mut crng);
    let attr = crate::captioning::AttributeVector::new(Tensor::vector(vec![0.3, 1.0]))?;
    let (f1, a1) = (frames.clone(), attr.clone());
    jobs.push(with_params("caption_xent", cp.clone(), vec![], move |g, pv, _| {
        xent_graph(g, pv, &f1, Some(&a1), &[4, 3, 6, EOS])
    }));
    jobs.push(with_params("scst_surrogate", cp, vec![], move |g, pv, _| {
        surrogate_graph(g, pv, &frames, Some(&attr), &[5, 3, EOS], 0.37)
    }));

    let lcfg = LstrConfig {
        channels: 2,
        pool: [1, 2, 2],
        actor_dim: 3,
        classes: 2,
        lambda: 0.5,
    };
    let mut srng = SplitMix64::new(48);
    let lp = LstrParams::init(&lcfg, &mut srng)?;
    let clips: Vec<Tensor> = (0..CLIPS_PER_WINDOW).map(|_| Tensor::randn(&[2, 2, 3, 3], &mut srng)).collect();
    let props = vec![
        BoxProposal { clip: 0, bbox: Box2d::new(0.0, 0.0, 0.7, 0.8)?, score: 0.9 },
        BoxProposal { clip: 3, bbox: Box2d::new(0.2, 0.1, 1.0, 0.9)?, score: 0.8 },
    ];
    jobs.push(with_params("lstr_forward", lp, clips, move |g, pv, ex| {
        let (v, _) = lstr_graph(g, ex, &props, pv, &lcfg)?;
        probe(g, v.logits, 10)
    }));

    Ok(jobs)
}

/// Runs every check in parallel; reports come back in a fixed order.
pub fn run_suite(cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    jobs()?.par_iter().map(|job| job(cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        let cfg = GradCheckConfig::default();
        for r in run_suite(&cfg).unwrap() {
            assert!(r.passed(cfg.tolerance), "{r:?}");
            assert_eq!(r.checked, cfg.coords, "{r:?}");
        }
    }
}
