//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Node ids
//! increase in creation order, so the tape is topologically sorted by
//! construction and `backward` is a single reverse sweep. A graph belongs to
//! one thread; call [`Graph::reset`] between training steps.

use std::sync::Arc;

use crate::conv;
use crate::error::{Error, Result};
use crate::tensor::{reduced_dims, split_axis, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Reshape(Var),
    /// out[i] = in[idx[i]]; `data_dependent` marks argmax-style selections.
    Gather {
        input: Var,
        idx: Arc<[usize]>,
        data_dependent: bool,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    SumAll(Var),
    MeanAxis(Var, usize),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    ConvSpatial(Var, Var),
    ConvTemporal(Var, Var),
    DepthwiseTemporal(Var, Var),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops every recorded node; previously issued `Var`s become invalid.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    /// A leaf that is not reported as a parameter (still differentiable).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t)
    }

    /// A trainable leaf; `backward` reports a gradient for every param.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(Op::Param, t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(Op::Scale(a, s), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).relu();
        self.push(Op::Relu(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).sigmoid();
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).tanh();
        self.push(Op::Tanh(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(Op::Ln(a), v)
    }

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(dims)?;
        Ok(self.push(Op::Reshape(a), v))
    }

    /// Generic differentiable selection: `out[i] = input[idx[i]]`.
    ///
    /// `data_dependent` flags selections chosen by comparing values (max
    /// pooling); gradient checks treat a change in those as a kink.
    pub fn gather(&mut self, input: Var, dims: &[usize], idx: Vec<usize>, data_dependent: bool) -> Result<Var> {
        let n = self.value(input).len();
        if dims.iter().product::<usize>() != idx.len() || idx.iter().any(|&i| i >= n) {
            return Err(Error::Contract("gather index set inconsistent with dims".into()));
        }
        let v = self.value(input).gather(dims, &idx);
        Ok(self.push(
            Op::Gather {
                input,
                idx: idx.into(),
                data_dependent,
            },
            v,
        ))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let (dims, idx) = Tensor::permute_indices(self.dims(a), axes)?;
        self.gather(a, &dims, idx, false)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.dims(a).len() != 2 {
            return Err(Error::Contract(format!("transpose needs rank 2, got {:?}", self.dims(a))));
        }
        self.permute(a, &[1, 0])
    }

    pub fn index_select(&mut self, a: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let (dims, idx) = Tensor::index_select_indices(self.dims(a), axis, indices)?;
        self.gather(a, &dims, idx, false)
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        if start >= end {
            return Err(Error::Contract(format!("empty slice {start}..{end}")));
        }
        let indices: Vec<usize> = (start..end).collect();
        self.index_select(a, axis, &indices)
    }

    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (v, idx) = self.value(a).max_axis_with_argmax(axis)?;
        let dims = v.dims().to_vec();
        self.gather(a, &dims, idx, true)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let parts: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let v = Tensor::concat(&parts, axis)?;
        Ok(self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            v,
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::SumAll(a), v)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a).mean_axis(axis)?;
        Ok(self.push(Op::MeanAxis(a, axis), v))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a).softmax(axis)?;
        Ok(self.push(Op::Softmax(a, axis), v))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a).log_softmax(axis)?;
        Ok(self.push(Op::LogSoftmax(a, axis), v))
    }

    pub fn conv_spatial(&mut self, x: Var, w: Var) -> Result<Var> {
        let v = conv::conv_spatial(self.value(x), self.value(w))?;
        Ok(self.push(Op::ConvSpatial(x, w), v))
    }

    pub fn conv_temporal(&mut self, x: Var, w: Var) -> Result<Var> {
        let v = conv::conv_temporal(self.value(x), self.value(w))?;
        Ok(self.push(Op::ConvTemporal(x, w), v))
    }

    pub fn depthwise_temporal_conv(&mut self, seq: Var, kernels: Var) -> Result<Var> {
        let v = conv::depthwise_temporal_conv(self.value(seq), self.value(kernels))?;
        Ok(self.push(Op::DepthwiseTemporal(seq, kernels), v))
    }

    /// Signs of every relu input and every data-dependent selection.
    ///
    /// Two evaluations with equal patterns lie in the same smooth piece of a
    /// piecewise-smooth graph, which is what finite differences need.
    pub fn activation_pattern(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    let mut word = 0u64;
                    for (i, &v) in self.value(*a).data().iter().enumerate() {
                        word = word.rotate_left(1) ^ u64::from(v > 0.0) ^ ((i as u64) << 32);
                    }
                    out.push(word);
                }
                Op::Gather {
                    idx,
                    data_dependent: true,
                    ..
                } => out.extend(idx.iter().map(|&i| i as u64)),
                _ => {}
            }
        }
        out
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0].value;
        if !root.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got dims {:?}",
                root.dims()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(root.dims(), 1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let mut contribs: Vec<(Var, Tensor)> = Vec::new();
            match &node.op {
                Op::Constant | Op::Param => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    contribs.push((*a, g.matmul(&bv.transpose()?)?));
                    contribs.push((*b, av.transpose()?.matmul(&g)?));
                }
                Op::Add(a, b) => {
                    contribs.push((*a, g.sum_to(self.dims(*a))));
                    contribs.push((*b, g.sum_to(self.dims(*b))));
                }
                Op::Sub(a, b) => {
                    contribs.push((*a, g.sum_to(self.dims(*a))));
                    contribs.push((*b, g.scale(-1.0).sum_to(self.dims(*b))));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    contribs.push((*a, g.mul(bv)?.sum_to(av.dims())));
                    contribs.push((*b, g.mul(av)?.sum_to(bv.dims())));
                }
                Op::Scale(a, s) => contribs.push((*a, g.scale(*s))),
                Op::Relu(a) => {
                    let x = self.value(*a);
                    contribs.push((*a, g.broadcast_with(x, "relu", |g, x| if x > 0.0 { g } else { 0.0 })?));
                }
                Op::Sigmoid(a) => {
                    contribs.push((*a, g.broadcast_with(&node.value, "sigmoid", |g, y| g * y * (1.0 - y))?));
                }
                Op::Tanh(a) => {
                    contribs.push((*a, g.broadcast_with(&node.value, "tanh", |g, y| g * (1.0 - y * y))?));
                }
                Op::Exp(a) => contribs.push((*a, g.mul(&node.value)?)),
                Op::Ln(a) => {
                    contribs.push((*a, g.broadcast_with(self.value(*a), "ln", |g, x| g / x)?));
                }
                Op::Reshape(a) => contribs.push((*a, g.reshape(self.dims(*a))?)),
                Op::Gather { input, idx, .. } => {
                    let mut gi = Tensor::zeros(self.dims(*input));
                    let buf = gi.data_mut();
                    for (&j, &gv) in idx.iter().zip(g.data()) {
                        buf[j] += gv;
                    }
                    contribs.push((*input, gi));
                }
                Op::Concat { inputs, axis } => {
                    let mut offset = 0;
                    for &inp in inputs {
                        let extent = self.dims(inp)[*axis];
                        contribs.push((inp, g.slice(*axis, offset, offset + extent)?));
                        offset += extent;
                    }
                }
                Op::SumAll(a) => contribs.push((*a, Tensor::full(self.dims(*a), g.item()))),
                Op::MeanAxis(a, axis) => {
                    let in_dims = self.dims(*a);
                    let (outer, n, inner) = split_axis(in_dims, *axis);
                    let mut gi = Tensor::zeros(in_dims);
                    let buf = gi.data_mut();
                    let inv = 1.0 / n as f64;
                    for o in 0..outer {
                        for k in 0..n {
                            for i in 0..inner {
                                buf[(o * n + k) * inner + i] = g.data()[o * inner + i] * inv;
                            }
                        }
                    }
                    debug_assert_eq!(g.dims(), reduced_dims(in_dims, *axis).as_slice());
                    contribs.push((*a, gi));
                }
                Op::Softmax(a, axis) => {
                    // dx = y * (g - sum(g * y))
                    let y = &node.value;
                    let (outer, n, inner) = split_axis(y.dims(), *axis);
                    let mut gi = Tensor::zeros(y.dims());
                    let buf = gi.data_mut();
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * n + k) * inner + i;
                            let dot: f64 = (0..n).map(|k| g.data()[at(k)] * y.data()[at(k)]).sum();
                            for k in 0..n {
                                buf[at(k)] = y.data()[at(k)] * (g.data()[at(k)] - dot);
                            }
                        }
                    }
                    contribs.push((*a, gi));
                }
                Op::LogSoftmax(a, axis) => {
                    // dx = g - softmax * sum(g)
                    let y = &node.value;
                    let (outer, n, inner) = split_axis(y.dims(), *axis);
                    let mut gi = Tensor::zeros(y.dims());
                    let buf = gi.data_mut();
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| (o * n + k) * inner + i;
                            let total: f64 = (0..n).map(|k| g.data()[at(k)]).sum();
                            for k in 0..n {
                                buf[at(k)] = g.data()[at(k)] - y.data()[at(k)].exp() * total;
                            }
                        }
                    }
                    contribs.push((*a, gi));
                }
                Op::ConvSpatial(x, w) => {
                    let (gx, gw) = conv::conv_spatial_backward(self.value(*x), self.value(*w), &g)?;
                    contribs.push((*x, gx));
                    contribs.push((*w, gw));
                }
                Op::ConvTemporal(x, w) => {
                    let (gx, gw) = conv::conv_temporal_backward(self.value(*x), self.value(*w), &g)?;
                    contribs.push((*x, gx));
                    contribs.push((*w, gw));
                }
                Op::DepthwiseTemporal(x, k) => {
                    let (gx, gk) = conv::depthwise_temporal_conv_backward(self.value(*x), self.value(*k), &g)?;
                    contribs.push((*x, gx));
                    contribs.push((*k, gk));
                }
            }
            grads[id] = Some(g);
            for (v, c) in contribs {
                debug_assert!(v.0 < id, "tape order violated");
                grads[v.0] = Some(match grads[v.0].take() {
                    Some(acc) => acc.add(&c)?,
                    None => c,
                });
            }
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Param))
            .map(|(i, _)| Var(i))
            .collect();
        Ok(Gradients {
            grads,
            dims: self.nodes.iter().map(|n| n.value.dims().to_vec()).collect(),
            params,
        })
    }
}

/// Result of [`Graph::backward`]. Nodes the loss does not depend on have a
/// zero gradient of their own dims.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    dims: Vec<Vec<usize>>,
    params: Vec<Var>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Tensor {
        match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            _ => Tensor::zeros(&self.dims[v.0]),
        }
    }

    /// Gradient of every param leaf on the tape, keyed by node id.
    pub fn params(&self) -> impl Iterator<Item = (Var, Tensor)> + '_ {
        self.params.iter().map(|&v| (v, self.get(v)))
    }
}

/// A parameter bundle generic over its leaf type, so one definition serves as
/// both the stored weights (`Tensor`) and their bound tape nodes (`Var`).
pub trait ParamTree {
    type Leaf;
    type With<U>: ParamTree<Leaf = U>;

    fn map_leaves<U>(&self, f: &mut impl FnMut(&Self::Leaf) -> U) -> Self::With<U>;
    fn leaves(&self) -> Vec<&Self::Leaf>;
    fn leaves_mut(&mut self) -> Vec<&mut Self::Leaf>;
}

/// Registers every tensor of `params` as a param leaf on `g`.
pub fn bind<P: ParamTree<Leaf = Tensor>>(g: &mut Graph, params: &P) -> P::With<Var> {
    params.map_leaves(&mut |t| g.param(t.clone()))
}

/// Registers every tensor of `params` as a constant (inference only).
pub fn bind_const<P: ParamTree<Leaf = Tensor>>(g: &mut Graph, params: &P) -> P::With<Var> {
    params.map_leaves(&mut |t| g.constant(t.clone()))
}

/// Gradients for a bound bundle, in leaf order.
pub fn collect_grads<P: ParamTree<Leaf = Var>>(bound: &P, grads: &Gradients) -> Vec<Tensor> {
    bound.leaves().into_iter().map(|&v| grads.get(v)).collect()
}

/// Rebuilds the structure of `template` over `vars`, taken in leaf order.
/// Used when the leaves were registered elsewhere, e.g. by the gradient checker.
pub fn rebind<P: ParamTree>(template: &P, vars: &[Var]) -> Result<P::With<Var>> {
    let n = template.leaves().len();
    if vars.len() != n {
        return Err(Error::Contract(format!("expected {n} leaves, got {}", vars.len())));
    }
    let mut it = vars.iter();
    Ok(template.map_leaves(&mut |_| *it.next().expect("length checked")))
}

pub fn param_count<P: ParamTree<Leaf = Tensor>>(params: &P) -> usize {
    params.leaves().iter().map(|t| t.len()).sum()
}

impl<P: ParamTree> ParamTree for Vec<P> {
    type Leaf = P::Leaf;
    type With<U> = Vec<P::With<U>>;

    fn map_leaves<U>(&self, f: &mut impl FnMut(&Self::Leaf) -> U) -> Self::With<U> {
        self.iter().map(|p| p.map_leaves(f)).collect()
    }

    fn leaves(&self) -> Vec<&Self::Leaf> {
        self.iter().flat_map(|p| p.leaves()).collect()
    }

    fn leaves_mut(&mut self) -> Vec<&mut Self::Leaf> {
        self.iter_mut().flat_map(|p| p.leaves_mut()).collect()
    }
}

/// A bare leaf is itself a one-element tree.
#[derive(Clone, Debug, PartialEq)]
pub struct Leaf<T>(pub T);

impl<T> ParamTree for Leaf<T> {
    type Leaf = T;
    type With<U> = Leaf<U>;

    fn map_leaves<U>(&self, f: &mut impl FnMut(&T) -> U) -> Leaf<U> {
        Leaf(f(&self.0))
    }

    fn leaves(&self) -> Vec<&T> {
        vec![&self.0]
    }

    fn leaves_mut(&mut self) -> Vec<&mut T> {
        vec![&mut self.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).item(), 6.0);
    }

    #[test]
    fn constant_loss_gives_zero_param_grads() {
        let mut g = Graph::new();
        let w = g.param(Tensor::full(&[2, 3], 1.5));
        let c = g.constant(Tensor::scalar(4.0));
        let loss = g.scale(c, 2.0);
        let grads = g.backward(loss).unwrap();
        let all: Vec<_> = grads.params().collect();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].0, w);
        assert_eq!(all[0].1, Tensor::zeros(&[2, 3]));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let w = g.param(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn two_paths_accumulate() {
        // loss = a*b where a and b are both relu(x) on different paths
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.5));
        let p1 = g.scale(x, 1.0);
        let p2 = g.add(x, p1).unwrap();
        let p2 = g.scale(p2, 0.5);
        let y = g.mul(p1, p2).unwrap();
        let grads = g.backward(y).unwrap();
        assert!((grads.get(x).item() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn broadcast_add_grad_sums() {
        let mut g = Graph::new();
        let a = g.param(Tensor::zeros(&[2, 3]));
        let b = g.param(Tensor::zeros(&[2, 1]));
        let c = g.add(a, b).unwrap();
        let s = g.sum_all(c);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(b).data(), &[3.0, 3.0]);
        assert_eq!(grads.get(a), Tensor::full(&[2, 3], 1.0));
    }

    #[test]
    fn reset_clears_tape() {
        let mut g = Graph::new();
        g.constant(Tensor::scalar(1.0));
        g.reset();
        assert!(g.is_empty());
        let v = g.constant(Tensor::scalar(1.0));
        assert_eq!(v.id(), 0);
    }
}
