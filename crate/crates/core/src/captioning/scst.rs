//! Self-critical policy gradient: the greedy decode serves as the reward
//! baseline for a sampled decode.

use serde::Serialize;

use crate::autodiff::{bind, collect_grads, Graph, Var};
use crate::captioning::decoder::{
    decode, sequence_logprob_graph, AttributeVector, CaptionModelParams, DecodeMode,
};
use crate::captioning::reward::proxy_reward;
use crate::captioning::vocab::EOS;
use crate::error::Result;
use crate::optim::Sgd;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScstDiagnostics {
    pub advantage: f64,
    pub sample_reward: f64,
    pub greedy_reward: f64,
    /// Emitted sample ids, EOS included when produced.
    pub sample: Vec<usize>,
    pub greedy: Vec<usize>,
}

/// `−advantage · Σ_t log p(tokens_t)` with the advantage held constant.
pub(crate) fn surrogate_graph(
    g: &mut Graph,
    p: &CaptionModelParams<Var>,
    frames: &Tensor,
    attr: Option<&AttributeVector>,
    tokens: &[usize],
    advantage: f64,
) -> Result<Var> {
    let lp = sequence_logprob_graph(g, p, frames, attr, tokens)?;
    Ok(g.scale(lp, -advantage))
}

/// One SCST step on a single video. `reference` is the target caption with
/// or without a trailing EOS. A zero advantage leaves `p` untouched.
pub fn scst_update(
    p: &mut CaptionModelParams,
    frames: &Tensor,
    attr: Option<&AttributeVector>,
    reference: &[usize],
    learning_rate: f64,
    max_len: usize,
    seed: u64,
) -> Result<ScstDiagnostics> {
    let reference = reference.strip_suffix(&[EOS]).unwrap_or(reference);
    let sample = decode(p, frames, attr, DecodeMode::Sample, max_len, seed)?;
    let greedy = decode(p, frames, attr, DecodeMode::Greedy, max_len, seed)?;
    let sample_reward = proxy_reward(&sample.tokens, reference);
    let greedy_reward = proxy_reward(&greedy.tokens, reference);
    let advantage = sample_reward - greedy_reward;
    let emitted = sample.emitted();

    if advantage != 0.0 {
        let mut g = Graph::new();
        let pv = bind(&mut g, &*p);
        let loss = surrogate_graph(&mut g, &pv, frames, attr, &emitted, advantage)?;
        let grads = g.backward(loss)?;
        Sgd::new(learning_rate).step(p, &collect_grads(&pv, &grads));
    }

    Ok(ScstDiagnostics {
        advantage,
        sample_reward,
        greedy_reward,
        sample: emitted,
        greedy: greedy.emitted(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::captioning::decoder::{sequence_logprob, CaptionConfig};
    use crate::rng::SplitMix64;

    fn model(seed: u64) -> (CaptionModelParams, Tensor) {
        let cfg = CaptionConfig {
            vocab: 8,
            embed: 4,
            hidden: 6,
            feat: 3,
            attrs: 2,
            attr_proj: 2,
            attention: 4,
        };
        let mut rng = SplitMix64::new(seed);
        let p = CaptionModelParams::init(&cfg, &mut rng).unwrap();
        let frames = Tensor::randn(&[5, 3], &mut rng);
        (p, frames)
    }

    #[test]
    fn zero_advantage_is_a_no_op() {
        let (mut p, frames) = model(1);
        let before = p.clone();
        // an empty reference gives both decodes reward 0
        let d = scst_update(&mut p, &frames, None, &[], 0.5, 6, 3).unwrap();
        assert_eq!(d.advantage, 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn positive_advantage_raises_sample_logprob() {
        let mut found = 0;
        for seed in 0..200u64 {
            let (mut p, frames) = model(100 + seed);
            let greedy = decode(&p, &frames, None, DecodeMode::Greedy, 6, 0).unwrap();
            let sample = decode(&p, &frames, None, DecodeMode::Sample, 6, seed).unwrap();
            if sample == greedy {
                continue;
            }
            // reward the sample exactly by using it as the reference
            let reference = sample.tokens.clone();
            if reference.is_empty() {
                continue;
            }
            let before = sequence_logprob(&p, &frames, None, &sample.emitted()).unwrap();
            let d = scst_update(&mut p, &frames, None, &reference, 1e-3, 6, seed).unwrap();
            if d.advantage <= 0.0 {
                continue;
            }
            let after = sequence_logprob(&p, &frames, None, &d.sample).unwrap();
            assert!(after > before, "seed {seed}: {before} -> {after}");
            found += 1;
            if found == 5 {
                break;
            }
        }
        assert_eq!(found, 5);
    }
}
