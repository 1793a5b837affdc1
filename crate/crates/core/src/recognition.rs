//! Multi-stream trimmed action recognition: per-stream prediction, linear late
//! fusion of class probabilities, Top-k evaluation and fusion weight tuning.

use rayon::prelude::*;

use crate::autodiff::{bind, collect_grads, Graph, ParamTree};
use crate::backbone::{clip_features, BackboneConfig, BackboneParams};
use crate::error::{Error, Result};
use crate::optim::Sgd;
use crate::quantization::{quantize, FeatureSequence, Quantizer, TcpParams};
use crate::tensor::Tensor;

const ROW_SUM_TOL: f64 = 1e-9;

/// Class probabilities `[V, C]` produced by one input stream.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamPrediction {
    pub name: String,
    scores: Tensor,
}

impl StreamPrediction {
    pub fn new(name: impl Into<String>, scores: Tensor) -> Result<Self> {
        check_probability_rows(&scores)?;
        Ok(Self {
            name: name.into(),
            scores,
        })
    }

    pub fn scores(&self) -> &Tensor {
        &self.scores
    }

    pub fn videos(&self) -> usize {
        self.scores.dims()[0]
    }

    pub fn classes(&self) -> usize {
        self.scores.dims()[1]
    }
}

fn check_probability_rows(scores: &Tensor) -> Result<()> {
    if scores.rank() != 2 {
        return Err(Error::Contract(format!("scores must be [V, C], got {:?}", scores.dims())));
    }
    let c = scores.dims()[1];
    for (v, row) in scores.data().chunks(c).enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Data(format!("row {v} is not a probability vector (sum {sum})")));
        }
    }
    Ok(())
}

/// Nonnegative per-stream weights summing to one.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct FusionWeights(Vec<f64>);

impl FusionWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Contract("no fusion weights".into()));
        }
        let sum: f64 = w.iter().sum();
        if w.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Contract(format!("fusion weights {w:?} are not on the simplex")));
        }
        Ok(Self(w))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, i: usize) -> Self {
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Fraction of rows whose label ranks among the `k` best classes. Ties are
/// broken toward the lower class index.
pub fn topk_accuracy(scores: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    if scores.rank() != 2 || scores.dims()[0] != labels.len() {
        return Err(Error::shape("topk_accuracy", scores.dims(), &[labels.len()]));
    }
    let c = scores.dims()[1];
    if k == 0 || k > c {
        return Err(Error::Contract(format!("k = {k} outside 1..={c}")));
    }
    let mut hits = 0usize;
    for (row, &label) in scores.data().chunks(c).zip(labels) {
        if label >= c {
            return Err(Error::Data(format!("label {label} out of range for {c} classes")));
        }
        let s = row[label];
        let rank = row
            .iter()
            .enumerate()
            .filter(|&(j, &v)| v > s || (v == s && j < label))
            .count();
        if rank < k {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

fn check_streams(streams: &[StreamPrediction]) -> Result<(usize, usize)> {
    let first = streams
        .first()
        .ok_or_else(|| Error::Contract("no streams to fuse".into()))?;
    for s in streams {
        if s.scores.dims() != first.scores.dims() {
            return Err(Error::shape("fuse", first.scores.dims(), s.scores.dims()));
        }
    }
    Ok((first.videos(), first.classes()))
}

/// `Σ_s w_s · scores_s`.
pub fn fuse(streams: &[StreamPrediction], w: &FusionWeights) -> Result<Tensor> {
    let (v, c) = check_streams(streams)?;
    if w.0.len() != streams.len() {
        return Err(Error::shape("fuse", &[streams.len()], &[w.0.len()]));
    }
    let mut out = vec![0.0; v * c];
    for (s, &ws) in streams.iter().zip(&w.0) {
        for (o, &p) in out.iter_mut().zip(s.scores.data()) {
            *o += ws * p;
        }
    }
    Tensor::new(&[v, c], out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Score {
    top1: f64,
    top5: f64,
}

impl Score {
    fn better_than(&self, other: &Score) -> bool {
        self.top1 > other.top1 || (self.top1 == other.top1 && self.top5 > other.top5)
    }
}

fn evaluate(streams: &[StreamPrediction], labels: &[usize], w: &[f64]) -> Result<Score> {
    let fused = fuse(streams, &FusionWeights(w.to_vec()))?;
    let k5 = 5.min(fused.dims()[1]);
    Ok(Score {
        top1: topk_accuracy(&fused, labels, 1)?,
        top5: topk_accuracy(&fused, labels, k5)?,
    })
}

/// All compositions of `total` into `parts` nonnegative integers, in
/// lexicographically ascending order.
fn compositions(parts: usize, total: usize) -> Vec<Vec<usize>> {
    fn rec(parts: usize, total: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            prefix.push(total);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in 0..=total {
            prefix.push(k);
            rec(parts - 1, total - k, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(parts, total, &mut Vec::with_capacity(parts), &mut out);
    out
}

/// Streams up to this count are tuned exhaustively on the simplex grid.
pub const EXHAUSTIVE_MAX_STREAMS: usize = 4;
const COORDINATE_SWEEPS: usize = 10;

/// Simplex grid search maximizing fused Top-1, tie-broken by Top-5 and then by
/// the lexicographically smallest weight vector.
///
/// Beyond [`EXHAUSTIVE_MAX_STREAMS`] streams the grid is too large and a
/// coordinate ascent heuristic is used instead: starting from uniform
/// weights, each sweep tries every grid value for one stream at a time,
/// rescaling the others proportionally to keep the sum at one.
pub fn tune_fusion_weights(
    streams: &[StreamPrediction],
    labels: &[usize],
    resolution: f64,
) -> Result<FusionWeights> {
    check_streams(streams)?;
    let steps = (1.0 / resolution).round();
    if !(resolution > 0.0) || steps < 1.0 || (steps * resolution - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("resolution {resolution} must divide 1")));
    }
    let steps = steps as usize;
    let s = streams.len();
    if s <= EXHAUSTIVE_MAX_STREAMS {
        let mut best: Option<(Score, Vec<f64>)> = None;
        for comp in compositions(s, steps) {
            let w: Vec<f64> = comp.iter().map(|&k| k as f64 / steps as f64).collect();
            let score = evaluate(streams, labels, &w)?;
            if best.as_ref().map_or(true, |(b, _)| score.better_than(b)) {
                best = Some((score, w));
            }
        }
        return FusionWeights::new(best.expect("grid is non-empty").1);
    }

    let mut w = vec![1.0 / s as f64; s];
    let mut best = evaluate(streams, labels, &w)?;
    for _ in 0..COORDINATE_SWEEPS {
        let mut moved = false;
        for i in 0..s {
            for k in 0..=steps {
                let wi = k as f64 / steps as f64;
                let rest: f64 = (0..s).filter(|&j| j != i).map(|j| w[j]).sum();
                let cand: Vec<f64> = (0..s)
                    .map(|j| match j {
                        _ if j == i => wi,
                        _ if rest > 0.0 => w[j] * (1.0 - wi) / rest,
                        _ => (1.0 - wi) / (s - 1) as f64,
                    })
                    .collect();
                let score = evaluate(streams, labels, &cand)?;
                let tie_smaller = score == best && cand < w;
                if score.better_than(&best) || tie_smaller {
                    best = score;
                    w = cand;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    FusionWeights::new(w)
}

/// Linear softmax classifier over video-level representations.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier<T = Tensor> {
    /// `[D, C]`
    pub weight: T,
    /// `[1, C]`
    pub bias: T,
}

impl<T> ParamTree for LinearClassifier<T> {
    type Leaf = T;
    type With<U> = LinearClassifier<U>;

    fn map_leaves<U>(&self, f: &mut impl FnMut(&T) -> U) -> LinearClassifier<U> {
        LinearClassifier {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }

    fn leaves(&self) -> Vec<&T> {
        vec![&self.weight, &self.bias]
    }

    fn leaves_mut(&mut self) -> Vec<&mut T> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl LinearClassifier {
    pub fn zeros(width: usize, classes: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[width, classes]),
            bias: Tensor::zeros(&[1, classes]),
        }
    }

    /// Row-wise class probabilities for `reps: [V, D]`.
    pub fn predict(&self, reps: &Tensor) -> Result<Tensor> {
        reps.matmul(&self.weight)?.add(&self.bias)?.softmax(1)
    }

    /// Full-batch gradient descent on mean softmax cross-entropy.
    pub fn fit(reps: &Tensor, labels: &[usize], classes: usize, steps: usize, lr: f64) -> Result<Self> {
        if reps.rank() != 2 || reps.dims()[0] != labels.len() {
            return Err(Error::shape("classifier fit", reps.dims(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
        }
        let v = labels.len();
        let mut clf = Self::zeros(reps.dims()[1], classes);
        let sgd = Sgd::new(lr);
        let picks: Vec<usize> = labels.iter().enumerate().map(|(i, &l)| i * classes + l).collect();
        let mut g = Graph::new();
        for _ in 0..steps {
            g.reset();
            let x = g.constant(reps.clone());
            let p = bind(&mut g, &clf);
            let logits = g.matmul(x, p.weight)?;
            let logits = g.add(logits, p.bias)?;
            let logp = g.log_softmax(logits, 1)?;
            let picked = g.gather(logp, &[v], picks.clone(), false)?;
            let total = g.sum_all(picked);
            let loss = g.scale(total, -1.0 / v as f64);
            let grads = g.backward(loss)?;
            sgd.step(&mut clf, &collect_grads(&p, &grads));
        }
        Ok(clf)
    }
}

/// Everything needed to turn one stream's raw inputs into class probabilities.
#[derive(Clone, Debug)]
pub struct StreamModel {
    pub name: String,
    pub quantizer: Quantizer,
    pub tcp: Option<TcpParams>,
    /// When set, inputs are clips `[C_in, T, H, W]` run through the backbone;
    /// otherwise inputs are precomputed feature sequences `[T, D]`.
    pub backbone: Option<(BackboneConfig, BackboneParams)>,
    pub classifier: LinearClassifier,
}

impl StreamModel {
    pub fn features(&self, input: &Tensor) -> Result<FeatureSequence> {
        let feats = match &self.backbone {
            Some((cfg, params)) => clip_features(input, cfg, params)?,
            None => input.clone(),
        };
        FeatureSequence::new(feats)
    }

    pub fn represent(&self, input: &Tensor) -> Result<Tensor> {
        quantize(&self.features(input)?, self.quantizer, self.tcp.as_ref())
    }

    /// Stacked video representations `[V, D]`.
    pub fn represent_all(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let reps: Vec<Tensor> = inputs.par_iter().map(|x| self.represent(x)).collect::<Result<_>>()?;
        let d = reps.first().map(Tensor::len).ok_or_else(|| Error::Contract("no videos".into()))?;
        let rows: Vec<&Tensor> = reps.iter().collect();
        Tensor::concat(&rows, 0)?.reshape(&[reps.len(), d])
    }

    pub fn predict(&self, inputs: &[Tensor]) -> Result<StreamPrediction> {
        let reps = self.represent_all(inputs)?;
        StreamPrediction::new(self.name.clone(), self.classifier.predict(&reps)?)
    }
}

#[derive(Clone, Debug)]
pub struct RecognitionOutput {
    pub streams: Vec<StreamPrediction>,
    pub fused: Tensor,
}

/// Backbone → quantizer → classifier → softmax for every stream, then fusion.
/// `inputs[s]` holds the videos of stream `s`, in the same video order for
/// every stream.
pub fn recognize_pipeline(
    models: &[StreamModel],
    inputs: &[Vec<Tensor>],
    weights: &FusionWeights,
) -> Result<RecognitionOutput> {
    if models.len() != inputs.len() {
        return Err(Error::shape("recognize_pipeline", &[models.len()], &[inputs.len()]));
    }
    let streams: Vec<StreamPrediction> = models
        .par_iter()
        .zip(inputs.par_iter())
        .map(|(m, x)| m.predict(x))
        .collect::<Result<_>>()?;
    let fused = fuse(&streams, weights)?;
    Ok(RecognitionOutput { streams, fused })
}
