//! Two-layer LSTM caption decoder with temporal attention.
//!
//! Per step:
//!
//! ```text
//! x1      = [embed(prev); h2_prev; mean(frames); attr · A]
//! h1, c1  = LSTM1(x1, h1_prev, c1_prev)
//! e_i     = w_a · tanh(h1 · W_h + f_i · W_f)
//! alpha   = softmax(e)
//! ctx     = Σ alpha_i f_i
//! h2, c2  = LSTM2([h1; ctx], h2_prev, c2_prev)
//! p(next) = softmax(h2 · W_out + b_out)
//! ```
//!
//! Attention reads the hidden state LSTM1 produced at the current step.

use crate::autodiff::{bind_const, Graph, ParamTree, Var};
use crate::backbone::init_uniform;
use crate::captioning::vocab::{BOS, EOS};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CaptionConfig {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub feat: usize,
    pub attrs: usize,
    pub attr_proj: usize,
    pub attention: usize,
}

impl CaptionConfig {
    fn lstm1_input(&self) -> usize {
        self.embed + self.hidden + self.feat + self.attr_proj
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T = Tensor> {
    /// `[In, 4H]`, gate order input, forget, cell, output.
    pub wx: T,
    /// `[H, 4H]`
    pub wh: T,
    /// `[1, 4H]`
    pub bias: T,
}

impl<T> ParamTree for LstmParams<T> {
    type Leaf = T;
    type With<U> = LstmParams<U>;

    fn map_leaves<U>(&self, f: &mut impl FnMut(&T) -> U) -> LstmParams<U> {
        LstmParams {
            wx: f(&self.wx),
            wh: f(&self.wh),
            bias: f(&self.bias),
        }
    }

    fn leaves(&self) -> Vec<&T> {
        vec![&self.wx, &self.wh, &self.bias]
    }

    fn leaves_mut(&mut self) -> Vec<&mut T> {
        vec![&mut self.wx, &mut self.wh, &mut self.bias]
    }
}

impl LstmParams {
    fn init(input: usize, hidden: usize, rng: &mut SplitMix64) -> Self {
        let mut bias = Tensor::zeros(&[1, 4 * hidden]);
        // forget gate starts open
        for v in &mut bias.data_mut()[hidden..2 * hidden] {
            *v = 1.0;
        }
        Self {
            wx: init_uniform(&[input, 4 * hidden], input, rng),
            wh: init_uniform(&[hidden, 4 * hidden], hidden, rng),
            bias,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T = Tensor> {
    /// `[H, Ha]`
    pub w_h: T,
    /// `[D, Ha]`
    pub w_f: T,
    /// `[Ha, 1]`
    pub w_a: T,
}

impl<T> ParamTree for AttentionParams<T> {
    type Leaf = T;
    type With<U> = AttentionParams<U>;

    fn map_leaves<U>(&self, f: &mut impl FnMut(&T) -> U) -> AttentionParams<U> {
        AttentionParams {
            w_h: f(&self.w_h),
            w_f: f(&self.w_f),
            w_a: f(&self.w_a),
        }
    }

    fn leaves(&self) -> Vec<&T> {
        vec![&self.w_h, &self.w_f, &self.w_a]
    }

    fn leaves_mut(&mut self) -> Vec<&mut T> {
        vec![&mut self.w_h, &mut self.w_f, &mut self.w_a]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionModelParams<T = Tensor> {
    /// `[V, E]`
    pub embed: T,
    pub lstm1: LstmParams<T>,
    pub lstm2: LstmParams<T>,
    pub attention: AttentionParams<T>,
    /// `[A, P]`
    pub attr_proj: T,
    /// `[H, V]`
    pub out: T,
    /// `[1, V]`
    pub out_bias: T,
}

impl<T> ParamTree for CaptionModelParams<T> {
    type Leaf = T;
    type With<U> = CaptionModelParams<U>;

    fn map_leaves<U>(&self, f: &mut impl FnMut(&T) -> U) -> CaptionModelParams<U> {
        CaptionModelParams {
            embed: f(&self.embed),
            lstm1: self.lstm1.map_leaves(f),
            lstm2: self.lstm2.map_leaves(f),
            attention: self.attention.map_leaves(f),
            attr_proj: f(&self.attr_proj),
            out: f(&self.out),
            out_bias: f(&self.out_bias),
        }
    }

    fn leaves(&self) -> Vec<&T> {
        let mut v = vec![&self.embed];
        v.extend(self.lstm1.leaves());
        v.extend(self.lstm2.leaves());
        v.extend(self.attention.leaves());
        v.extend([&self.attr_proj, &self.out, &self.out_bias]);
        v
    }

    fn leaves_mut(&mut self) -> Vec<&mut T> {
        let mut v = vec![&mut self.embed];
        v.extend(self.lstm1.leaves_mut());
        v.extend(self.lstm2.leaves_mut());
        v.extend(self.attention.leaves_mut());
        v.extend([&mut self.attr_proj, &mut self.out, &mut self.out_bias]);
        v
    }
}

impl CaptionModelParams {
    pub fn init(cfg: &CaptionConfig, rng: &mut SplitMix64) -> Result<Self> {
        let dims = [cfg.vocab, cfg.embed, cfg.hidden, cfg.feat, cfg.attrs, cfg.attr_proj, cfg.attention];
        if dims.contains(&0) {
            return Err(Error::Config(format!("caption model dims must be positive: {cfg:?}")));
        }
        if cfg.vocab <= EOS {
            return Err(Error::Config("vocabulary must include the reserved ids".into()));
        }
        let h = cfg.hidden;
        Ok(Self {
            embed: Tensor::uniform(&[cfg.vocab, cfg.embed], 0.5, rng),
            lstm1: LstmParams::init(cfg.lstm1_input(), h, rng),
            lstm2: LstmParams::init(h + cfg.feat, h, rng),
            attention: AttentionParams {
                w_h: init_uniform(&[h, cfg.attention], h, rng),
                w_f: init_uniform(&[cfg.feat, cfg.attention], cfg.feat, rng),
                w_a: init_uniform(&[cfg.attention, 1], cfg.attention, rng),
            },
            attr_proj: init_uniform(&[cfg.attrs, cfg.attr_proj], cfg.attrs, rng),
            out: init_uniform(&[h, cfg.vocab], h, rng),
            out_bias: Tensor::zeros(&[1, cfg.vocab]),
        })
    }

    pub fn config(&self) -> CaptionConfig {
        CaptionConfig {
            vocab: self.embed.dims()[0],
            embed: self.embed.dims()[1],
            hidden: self.lstm1.wh.dims()[0],
            feat: self.attention.w_f.dims()[0],
            attrs: self.attr_proj.dims()[0],
            attr_proj: self.attr_proj.dims()[1],
            attention: self.attention.w_a.dims()[0],
        }
    }
}

/// Detected attribute activations, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeVector(Tensor);

impl AttributeVector {
    pub fn new(a: Tensor) -> Result<Self> {
        if a.rank() != 1 {
            return Err(Error::Contract(format!("attributes must be [A], got {:?}", a.dims())));
        }
        if a.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("attribute activations must lie in [0, 1]".into()));
        }
        Ok(Self(a))
    }

    pub fn values(&self) -> &Tensor {
        &self.0
    }
}

/// Recurrent state between decoder steps. Hidden and cell tensors are `[1, H]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionState {
    pub h1: Tensor,
    pub c1: Tensor,
    pub h2: Tensor,
    pub c2: Tensor,
    /// Last attention distribution over frames.
    pub alpha: Option<Tensor>,
    /// Tokens fed so far, starting with BOS.
    pub tokens: Vec<usize>,
}

impl CaptionState {
    pub fn initial(hidden: usize) -> Self {
        let z = Tensor::zeros(&[1, hidden]);
        Self {
            h1: z.clone(),
            c1: z.clone(),
            h2: z.clone(),
            c2: z,
            alpha: None,
            tokens: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct StateVars {
    h1: Var,
    c1: Var,
    h2: Var,
    c2: Var,
}

/// Per-video inputs placed on the tape once and reused by every step.
#[derive(Clone, Copy, Debug)]
pub(crate) struct VideoContext {
    frames: Var,
    frames_proj: Var,
    mean: Var,
    attr: Var,
}

pub(crate) fn lstm_cell(
    g: &mut Graph,
    x: Var,
    h: Var,
    c: Var,
    p: &LstmParams<Var>,
) -> Result<(Var, Var)> {
    let hidden = g.dims(p.wh)[0];
    let xw = g.matmul(x, p.wx)?;
    let hw = g.matmul(h, p.wh)?;
    let pre = g.add(xw, hw)?;
    let pre = g.add(pre, p.bias)?;
    let gate = |g: &mut Graph, k: usize| g.slice(pre, 1, k * hidden, (k + 1) * hidden);
    let i = gate(g, 0)?;
    let i = g.sigmoid(i);
    let f = gate(g, 1)?;
    let f = g.sigmoid(f);
    let cand = gate(g, 2)?;
    let cand = g.tanh(cand);
    let o = gate(g, 3)?;
    let o = g.sigmoid(o);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_new = g.add(keep, write)?;
    let squashed = g.tanh(c_new);
    let h_new = g.mul(o, squashed)?;
    Ok((h_new, c_new))
}

/// Attention over `frames: [T, D]` given `h: [1, H]` and the precomputed
/// `frames · W_f`. Returns `(context [1, D], alpha [T])`.
pub(crate) fn attention_graph(
    g: &mut Graph,
    h: Var,
    frames: Var,
    frames_proj: Var,
    p: &AttentionParams<Var>,
) -> Result<(Var, Var)> {
    let t = g.dims(frames)[0];
    let hq = g.matmul(h, p.w_h)?;
    let pre = g.add(frames_proj, hq)?;
    let act = g.tanh(pre);
    let e = g.matmul(act, p.w_a)?;
    let e = g.reshape(e, &[t])?;
    let alpha = g.softmax(e, 0)?;
    let row = g.reshape(alpha, &[1, t])?;
    let ctx = g.matmul(row, frames)?;
    Ok((ctx, alpha))
}

pub(crate) fn prepare_video(
    g: &mut Graph,
    p: &CaptionModelParams<Var>,
    frames: &Tensor,
    attr: Option<&AttributeVector>,
) -> Result<VideoContext> {
    let feat = g.dims(p.attention.w_f)[0];
    let attrs = g.dims(p.attr_proj)[0];
    if frames.rank() != 2 || frames.dims()[1] != feat {
        return Err(Error::shape("caption frames", frames.dims(), &[frames.dims()[0], feat]));
    }
    let f = g.constant(frames.clone());
    let frames_proj = g.matmul(f, p.attention.w_f)?;
    let mean = g.mean_axis(f, 0)?;
    let mean = g.reshape(mean, &[1, feat])?;
    let a = match attr {
        Some(a) => {
            if a.values().len() != attrs {
                return Err(Error::shape("attributes", a.values().dims(), &[attrs]));
            }
            a.values().reshape(&[1, attrs])?
        }
        None => Tensor::zeros(&[1, attrs]),
    };
    let a = g.constant(a);
    let attr = g.matmul(a, p.attr_proj)?;
    Ok(VideoContext {
        frames: f,
        frames_proj,
        mean,
        attr,
    })
}

fn initial_state_vars(g: &mut Graph, hidden: usize) -> StateVars {
    let z = Tensor::zeros(&[1, hidden]);
    StateVars {
        h1: g.constant(z.clone()),
        c1: g.constant(z.clone()),
        h2: g.constant(z.clone()),
        c2: g.constant(z),
    }
}

/// One decoder step; returns unnormalized logits `[1, V]`, the new state and
/// the attention weights.
pub(crate) fn step_graph(
    g: &mut Graph,
    p: &CaptionModelParams<Var>,
    ctx: &VideoContext,
    prev: usize,
    s: StateVars,
) -> Result<(Var, StateVars, Var)> {
    let vocab = g.dims(p.embed)[0];
    if prev >= vocab {
        return Err(Error::Data(format!("token id {prev} out of range for vocabulary of {vocab}")));
    }
    let emb = g.index_select(p.embed, 0, &[prev])?;
    let x1 = g.concat(&[emb, s.h2, ctx.mean, ctx.attr], 1)?;
    let (h1, c1) = lstm_cell(g, x1, s.h1, s.c1, &p.lstm1)?;
    let (att, alpha) = attention_graph(g, h1, ctx.frames, ctx.frames_proj, &p.attention)?;
    let x2 = g.concat(&[h1, att], 1)?;
    let (h2, c2) = lstm_cell(g, x2, s.h2, s.c2, &p.lstm2)?;
    let logits = g.matmul(h2, p.out)?;
    let logits = g.add(logits, p.out_bias)?;
    Ok((logits, StateVars { h1, c1, h2, c2 }, alpha))
}

/// `Σ_t log p(tokens[t] | tokens[..t])`, teacher-forced from BOS.
pub(crate) fn sequence_logprob_graph(
    g: &mut Graph,
    p: &CaptionModelParams<Var>,
    frames: &Tensor,
    attr: Option<&AttributeVector>,
    tokens: &[usize],
) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::Contract("empty token sequence".into()));
    }
    let hidden = g.dims(p.lstm1.wh)[0];
    let vocab = g.dims(p.embed)[0];
    let ctx = prepare_video(g, p, frames, attr)?;
    let mut state = initial_state_vars(g, hidden);
    let mut prev = BOS;
    let mut terms = Vec::with_capacity(tokens.len());
    for &tok in tokens {
        if tok >= vocab {
            return Err(Error::Data(format!("token id {tok} out of range for vocabulary of {vocab}")));
        }
        let (logits, next, _) = step_graph(g, p, &ctx, prev, state)?;
        let logp = g.log_softmax(logits, 1)?;
        terms.push(g.index_select(logp, 1, &[tok])?);
        state = next;
        prev = tok;
    }
    let all = g.concat(&terms, 1)?;
    Ok(g.sum_all(all))
}

fn check_reference(reference: &[usize]) -> Result<()> {
    if reference.last() != Some(&EOS) {
        return Err(Error::Contract("reference must be non-empty and end with EOS".into()));
    }
    Ok(())
}

/// Mean per-step negative log-likelihood of `reference` (which ends in EOS).
pub(crate) fn xent_graph(
    g: &mut Graph,
    p: &CaptionModelParams<Var>,
    frames: &Tensor,
    attr: Option<&AttributeVector>,
    reference: &[usize],
) -> Result<Var> {
    check_reference(reference)?;
    let total = sequence_logprob_graph(g, p, frames, attr, reference)?;
    Ok(g.scale(total, -1.0 / reference.len() as f64))
}

/// Cross-entropy loss and its gradient for every parameter.
pub fn xent_loss(
    p: &CaptionModelParams,
    frames: &Tensor,
    attr: Option<&AttributeVector>,
    reference: &[usize],
) -> Result<(f64, CaptionModelParams)> {
    let mut g = Graph::new();
    let pv = crate::autodiff::bind(&mut g, p);
    let loss = xent_graph(&mut g, &pv, frames, attr, reference)?;
    let grads = g.backward(loss)?;
    Ok((g.value(loss).item(), pv.map_leaves(&mut |v| grads.get(*v))))
}

/// Log-probability of a full token sequence under the model.
pub fn sequence_logprob(
    p: &CaptionModelParams,
    frames: &Tensor,
    attr: Option<&AttributeVector>,
    tokens: &[usize],
) -> Result<f64> {
    let mut g = Graph::new();
    let pv = bind_const(&mut g, p);
    let lp = sequence_logprob_graph(&mut g, &pv, frames, attr, tokens)?;
    Ok(g.value(lp).item())
}

/// Attention of hidden state `h: [H]` over `frames: [T, D]`.
pub fn temporal_attention(h: &Tensor, frames: &Tensor, p: &AttentionParams) -> Result<(Tensor, Tensor)> {
    let (hd, fd) = (p.w_h.dims()[0], p.w_f.dims()[0]);
    if h.len() != hd || frames.rank() != 2 || frames.dims()[1] != fd {
        return Err(Error::shape("temporal_attention", h.dims(), frames.dims()));
    }
    let mut g = Graph::new();
    let pv = bind_const(&mut g, p);
    let hv = g.constant(h.reshape(&[1, hd])?);
    let f = g.constant(frames.clone());
    let fp = g.matmul(f, pv.w_f)?;
    let (ctx, alpha) = attention_graph(&mut g, hv, f, fp, &pv)?;
    Ok((g.value(ctx).reshape(&[fd])?, g.value(alpha).clone()))
}

/// One step from an explicit state. `mean_feat` is the pooled video
/// representation `[D]`; the frame features drive attention.
pub fn caption_step(
    prev_token: usize,
    state: &CaptionState,
    mean_feat: &Tensor,
    attr: Option<&AttributeVector>,
    frame_feats: &Tensor,
    p: &CaptionModelParams,
) -> Result<(Tensor, CaptionState)> {
    let cfg = p.config();
    if mean_feat.len() != cfg.feat {
        return Err(Error::shape("caption_step mean_feat", mean_feat.dims(), &[cfg.feat]));
    }
    for t in [&state.h1, &state.c1, &state.h2, &state.c2] {
        if t.dims() != [1, cfg.hidden] {
            return Err(Error::shape("caption_step state", t.dims(), &[1, cfg.hidden]));
        }
    }
    let mut g = Graph::new();
    let pv = bind_const(&mut g, p);
    let mut ctx = prepare_video(&mut g, &pv, frame_feats, attr)?;
    ctx.mean = g.constant(mean_feat.reshape(&[1, cfg.feat])?);
    let s = StateVars {
        h1: g.constant(state.h1.clone()),
        c1: g.constant(state.c1.clone()),
        h2: g.constant(state.h2.clone()),
        c2: g.constant(state.c2.clone()),
    };
    let (logits, next, alpha) = step_graph(&mut g, &pv, &ctx, prev_token, s)?;
    let dist = g.value(logits).softmax(1)?.reshape(&[cfg.vocab])?;
    let mut tokens = state.tokens.clone();
    tokens.push(prev_token);
    Ok((
        dist,
        CaptionState {
            h1: g.value(next.h1).clone(),
            c1: g.value(next.c1).clone(),
            h2: g.value(next.h2).clone(),
            c2: g.value(next.c2).clone(),
            alpha: Some(g.value(alpha).clone()),
            tokens,
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// Decoded tokens, BOS and EOS stripped, plus whether EOS was emitted.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    pub terminated: bool,
}

impl Decoded {
    /// The emitted ids including the closing EOS, i.e. what was scored.
    pub fn emitted(&self) -> Vec<usize> {
        let mut v = self.tokens.clone();
        if self.terminated {
            v.push(EOS);
        }
        v
    }
}

fn argmax_lowest(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn sample_index(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative sum: last nonzero entry
    p.iter().rposition(|&v| v > 0.0).unwrap_or(p.len() - 1)
}

/// Runs the decoder from BOS until EOS or `max_len` emitted tokens.
pub fn decode(
    p: &CaptionModelParams,
    frames: &Tensor,
    attr: Option<&AttributeVector>,
    mode: DecodeMode,
    max_len: usize,
    seed: u64,
) -> Result<Decoded> {
    if max_len == 0 {
        return Err(Error::Contract("max_len must be at least 1".into()));
    }
    let mut g = Graph::new();
    let pv = bind_const(&mut g, p);
    let ctx = prepare_video(&mut g, &pv, frames, attr)?;
    let mut state = initial_state_vars(&mut g, p.config().hidden);
    let mut rng = SplitMix64::new(seed);
    let mut prev = BOS;
    let mut tokens = Vec::new();
    for _ in 0..max_len {
        let (logits, next, _) = step_graph(&mut g, &pv, &ctx, prev, state)?;
        let probs = g.value(logits).softmax(1)?;
        let tok = match mode {
            DecodeMode::Greedy => argmax_lowest(probs.data()),
            DecodeMode::Sample => sample_index(probs.data(), rng.next_f64()),
        };
        if tok == EOS {
            return Ok(Decoded {
                tokens,
                terminated: true,
            });
        }
        tokens.push(tok);
        state = next;
        prev = tok;
    }
    Ok(Decoded {
        tokens,
        terminated: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> CaptionConfig {
        CaptionConfig {
            vocab: 7,
            embed: 4,
            hidden: 5,
            feat: 3,
            attrs: 2,
            attr_proj: 2,
            attention: 4,
        }
    }

    fn setup(seed: u64) -> (CaptionModelParams, Tensor, AttributeVector) {
        let mut rng = SplitMix64::new(seed);
        let p = CaptionModelParams::init(&tiny_config(), &mut rng).unwrap();
        let frames = Tensor::randn(&[6, 3], &mut rng);
        let attr = AttributeVector::new(Tensor::vector(vec![0.2, 0.9])).unwrap();
        (p, frames, attr)
    }

    #[test]
    fn attention_single_frame_and_identical_frames() {
        let (p, _, _) = setup(1);
        let mut rng = SplitMix64::new(2);
        let h = Tensor::randn(&[5], &mut rng);
        let f1 = Tensor::from_vec(&[1, 3], vec![0.3, -1.0, 2.0]);
        let (ctx, alpha) = temporal_attention(&h, &f1, &p.attention).unwrap();
        assert_eq!(alpha.data(), &[1.0]);
        assert_eq!(ctx.data(), f1.data());

        let same = Tensor::from_vec(&[4, 3], [0.3, -1.0, 2.0].repeat(4));
        let (ctx, alpha) = temporal_attention(&h, &same, &p.attention).unwrap();
        assert!(alpha.data().iter().all(|&a| (a - 0.25).abs() < 1e-15));
        assert!(ctx.max_abs_diff(&Tensor::vector(vec![0.3, -1.0, 2.0])) < 1e-15);
    }

    #[test]
    fn attention_matches_direct_recomputation() {
        let (p, frames, _) = setup(3);
        let h = Tensor::randn(&[5], &mut SplitMix64::new(4));
        let (ctx, alpha) = temporal_attention(&h, &frames, &p.attention).unwrap();
        let (hd, ad) = (5, 4);
        let mut e = vec![0.0; 6];
        for (i, ei) in e.iter_mut().enumerate() {
            for k in 0..ad {
                let mut pre = 0.0;
                for j in 0..hd {
                    pre += h.data()[j] * p.attention.w_h.get(&[j, k]);
                }
                for d in 0..3 {
                    pre += frames.get(&[i, d]) * p.attention.w_f.get(&[d, k]);
                }
                *ei += p.attention.w_a.get(&[k, 0]) * pre.tanh();
            }
        }
        let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = e.iter().map(|v| (v - m).exp()).sum();
        for i in 0..6 {
            assert!((alpha.data()[i] - (e[i] - m).exp() / z).abs() < 1e-12);
        }
        for d in 0..3 {
            let c: f64 = (0..6).map(|i| alpha.data()[i] * frames.get(&[i, d])).sum();
            assert!((ctx.data()[d] - c).abs() < 1e-12);
        }
    }

    #[test]
    fn step_distribution_and_determinism() {
        let (p, frames, attr) = setup(5);
        let mean = frames.mean_axis(0).unwrap();
        let s0 = CaptionState::initial(5);
        let (d1, st1) = caption_step(BOS, &s0, &mean, Some(&attr), &frames, &p).unwrap();
        let (d2, st2) = caption_step(BOS, &s0, &mean, Some(&attr), &frames, &p).unwrap();
        assert!((d1.sum() - 1.0).abs() < 1e-12);
        assert_eq!(d1, d2);
        assert_eq!(st1, st2);
        assert_eq!(st1.tokens, vec![BOS]);
        assert!(matches!(
            caption_step(7, &s0, &mean, Some(&attr), &frames, &p),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn zero_attribute_projection_matches_absent_attributes() {
        let (mut p, frames, attr) = setup(6);
        p.attr_proj = Tensor::zeros(p.attr_proj.dims());
        let mean = frames.mean_axis(0).unwrap();
        let s0 = CaptionState::initial(5);
        let (with, _) = caption_step(BOS, &s0, &mean, Some(&attr), &frames, &p).unwrap();
        let (without, _) = caption_step(BOS, &s0, &mean, None, &frames, &p).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn forced_eos_gives_empty_caption() {
        let (mut p, frames, attr) = setup(7);
        p.out = Tensor::zeros(p.out.dims());
        p.out_bias.data_mut()[EOS] = 50.0;
        let d = decode(&p, &frames, Some(&attr), DecodeMode::Greedy, 10, 0).unwrap();
        assert!(d.tokens.is_empty());
        assert!(d.terminated);
    }

    #[test]
    fn decoding_is_reproducible() {
        let (p, frames, attr) = setup(8);
        let g1 = decode(&p, &frames, Some(&attr), DecodeMode::Greedy, 12, 0).unwrap();
        let g2 = decode(&p, &frames, Some(&attr), DecodeMode::Greedy, 12, 99).unwrap();
        assert_eq!(g1, g2);
        let s1 = decode(&p, &frames, Some(&attr), DecodeMode::Sample, 12, 42).unwrap();
        let s2 = decode(&p, &frames, Some(&attr), DecodeMode::Sample, 12, 42).unwrap();
        assert_eq!(s1, s2);
        assert!(g1.tokens.len() <= 12);
        assert!(decode(&p, &frames, None, DecodeMode::Greedy, 0, 0).is_err());
    }

    #[test]
    fn xent_uniform_and_perfect_models() {
        let (mut p, frames, attr) = setup(9);
        p.out = Tensor::zeros(p.out.dims());
        let (loss, _) = xent_loss(&p, &frames, Some(&attr), &[3, 4, EOS]).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);

        // reference of only EOS with EOS forced: probability ~1
        p.out_bias.data_mut()[EOS] = 800.0;
        let (loss, _) = xent_loss(&p, &frames, Some(&attr), &[EOS]).unwrap();
        assert_eq!(loss, 0.0);

        assert!(xent_loss(&p, &frames, None, &[3, 4]).is_err());
        assert!(xent_loss(&p, &frames, None, &[]).is_err());
    }

    #[test]
    fn sampling_edge() {
        assert_eq!(sample_index(&[0.5, 0.5, 0.0], 0.999_999_999_999_999_9), 1);
        assert_eq!(sample_index(&[0.25, 0.75], 0.1), 0);
        assert_eq!(argmax_lowest(&[0.4, 0.4, 0.2]), 0);
    }

    #[test]
    fn attribute_range_checked() {
        assert!(AttributeVector::new(Tensor::vector(vec![0.5, 1.5])).is_err());
    }
}
