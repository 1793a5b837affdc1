//! Dense captioning of events: temporal proposals, an attention LSTM
//! decoder, cross-entropy training and self-critical fine-tuning.

pub mod decoder;
pub mod proposals;
pub mod reward;
pub mod scst;
pub mod vocab;

use rayon::prelude::*;
use serde::Serialize;

pub use decoder::{
    caption_step, decode, sequence_logprob, temporal_attention, xent_loss, AttributeVector,
    CaptionConfig, CaptionModelParams, CaptionState, DecodeMode, Decoded,
};
pub use proposals::{generate_proposals, score_actionness, TemporalProposal, PROPOSALS_PER_VIDEO};
pub use reward::proxy_reward;
pub use scst::{scst_update, ScstDiagnostics};
pub use vocab::{Vocabulary, BOS, EOS, UNK};

use crate::autodiff::{bind, collect_grads, Graph};
use crate::error::{Error, Result};
use crate::optim::{clip_grad_norm, Adam};
use crate::tensor::Tensor;

/// One (proposal, caption) pair as written to caption reports.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaptionedEvent {
    pub start: usize,
    pub end: usize,
    pub score: f64,
    pub tokens: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct DenseCaptioner {
    /// Actionness classifier `[D]`.
    pub actionness: Tensor,
    pub decoder: CaptionModelParams,
    pub proposals: usize,
    pub max_len: usize,
}

/// Proposals from per-frame actionness, then a greedy caption for each
/// proposal's frame slice.
pub fn dense_caption_pipeline(
    frames: &Tensor,
    attr: Option<&AttributeVector>,
    model: &DenseCaptioner,
) -> Result<Vec<CaptionedEvent>> {
    let scores = score_actionness(frames, &model.actionness)?;
    let props = generate_proposals(&scores, model.proposals)?;
    props
        .par_iter()
        .map(|prop| {
            let seg = frames.slice(0, prop.start, prop.end)?;
            let d = decode(&model.decoder, &seg, attr, DecodeMode::Greedy, model.max_len, 0)?;
            Ok(CaptionedEvent {
                start: prop.start,
                end: prop.end,
                score: prop.score,
                tokens: d.tokens,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct CaptionSample {
    pub frames: Tensor,
    pub attr: Option<AttributeVector>,
    /// Target ids ending in EOS.
    pub reference: Vec<usize>,
}

impl CaptionSample {
    /// Whether greedy decoding reproduces the reference exactly.
    pub fn reconstructed(&self, p: &CaptionModelParams) -> Result<bool> {
        let max_len = self.reference.len();
        let d = decode(p, &self.frames, self.attr.as_ref(), DecodeMode::Greedy, max_len, 0)?;
        Ok(d.emitted() == self.reference)
    }
}

#[derive(Clone, Debug)]
pub struct XentTraining {
    pub steps: usize,
    pub lr: f64,
    pub clip: f64,
    /// Check reconstruction every this many steps and stop once `target`
    /// samples decode exactly. Zero disables early stopping.
    pub check_every: usize,
    pub target: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct XentSummary {
    pub steps: usize,
    pub final_loss: f64,
    pub reconstructed: usize,
}

pub fn count_reconstructed(p: &CaptionModelParams, samples: &[CaptionSample]) -> Result<usize> {
    let flags: Vec<bool> = samples
        .par_iter()
        .map(|s| s.reconstructed(p))
        .collect::<Result<_>>()?;
    Ok(flags.into_iter().filter(|&b| b).count())
}

/// Mean cross-entropy over the batch and its gradient, per-sample work in
/// parallel, summed in sample order.
fn batch_xent(p: &CaptionModelParams, samples: &[CaptionSample]) -> Result<(f64, Vec<Tensor>)> {
    let per: Vec<(f64, Vec<Tensor>)> = samples
        .par_iter()
        .map(|s| {
            let mut g = Graph::new();
            let pv = bind(&mut g, p);
            let loss = decoder::xent_graph(&mut g, &pv, &s.frames, s.attr.as_ref(), &s.reference)?;
            let grads = g.backward(loss)?;
            Ok((g.value(loss).item(), collect_grads(&pv, &grads)))
        })
        .collect::<Result<_>>()?;
    let n = samples.len() as f64;
    let mut iter = per.into_iter();
    let (mut loss, mut acc) = iter.next().expect("non-empty batch");
    for (l, gs) in iter {
        loss += l;
        for (a, g) in acc.iter_mut().zip(&gs) {
            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                *x += y;
            }
        }
    }
    for a in &mut acc {
        for x in a.data_mut() {
            *x /= n;
        }
    }
    Ok((loss / n, acc))
}

/// Full-batch Adam on the teacher-forced cross-entropy.
pub fn train_xent(
    p: &mut CaptionModelParams,
    samples: &[CaptionSample],
    cfg: &XentTraining,
) -> Result<XentSummary> {
    if samples.is_empty() {
        return Err(Error::Contract("no caption samples".into()));
    }
    let mut opt = Adam::new(cfg.lr);
    let mut loss = f64::NAN;
    for step in 1..=cfg.steps {
        let (l, mut grads) = batch_xent(p, samples)?;
        loss = l;
        if cfg.clip > 0.0 {
            clip_grad_norm(&mut grads, cfg.clip);
        }
        opt.step(p, &grads);
        if cfg.check_every > 0 && step % cfg.check_every == 0 {
            let ok = count_reconstructed(p, samples)?;
            if ok >= cfg.target {
                return Ok(XentSummary {
                    steps: step,
                    final_loss: loss,
                    reconstructed: ok,
                });
            }
        }
    }
    Ok(XentSummary {
        steps: cfg.steps,
        final_loss: loss,
        reconstructed: count_reconstructed(p, samples)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn captioner(seed: u64) -> DenseCaptioner {
        let mut rng = SplitMix64::new(seed);
        let cfg = CaptionConfig {
            vocab: 9,
            embed: 4,
            hidden: 6,
            feat: 5,
            attrs: 3,
            attr_proj: 2,
            attention: 4,
        };
        DenseCaptioner {
            actionness: Tensor::randn(&[5], &mut rng),
            decoder: CaptionModelParams::init(&cfg, &mut rng).unwrap(),
            proposals: PROPOSALS_PER_VIDEO,
            max_len: 6,
        }
    }

    #[test]
    fn five_distinct_events_per_video() {
        let m = captioner(1);
        let mut rng = SplitMix64::new(2);
        for t in [16, 40, 64] {
            let frames = Tensor::randn(&[t, 5], &mut rng);
            let ev = dense_caption_pipeline(&frames, None, &m).unwrap();
            assert_eq!(ev.len(), 5);
            for (i, a) in ev.iter().enumerate() {
                assert!(a.start < a.end && a.end <= t);
                for b in &ev[i + 1..] {
                    assert!((a.start, a.end) != (b.start, b.end));
                }
            }
            assert_eq!(ev, dense_caption_pipeline(&frames, None, &m).unwrap());
        }
    }

    #[test]
    fn small_overfit_converges() {
        let mut rng = SplitMix64::new(11);
        let cfg = CaptionConfig {
            vocab: 8,
            embed: 6,
            hidden: 12,
            feat: 4,
            attrs: 1,
            attr_proj: 1,
            attention: 6,
        };
        let mut p = CaptionModelParams::init(&cfg, &mut rng).unwrap();
        let samples: Vec<CaptionSample> = (0..4)
            .map(|_| {
                let mut reference: Vec<usize> = (0..4).map(|_| 3 + rng.below(5)).collect();
                reference.push(EOS);
                CaptionSample {
                    frames: Tensor::randn(&[3, 4], &mut rng),
                    attr: None,
                    reference,
                }
            })
            .collect();
        let train = XentTraining {
            steps: 400,
            lr: 0.05,
            clip: 5.0,
            check_every: 10,
            target: 4,
        };
        let s = train_xent(&mut p, &samples, &train).unwrap();
        assert_eq!(s.reconstructed, 4, "{s:?}");
    }
}
