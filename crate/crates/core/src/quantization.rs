//! Video-level representations from a sequence of clip features.
//!
//! * Average pooling: the mean of the clip features.
//! * Temporal convolutional pooling: five depthwise residual blocks
//!   (`x <- x + relu(dwconv3(x)) · P`) followed by a temporal mean.

use serde::{Deserialize, Serialize};

use crate::autodiff::{bind_const, Graph, ParamTree, Var};
use crate::backbone::init_uniform;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub const TCP_BLOCKS: usize = 5;
pub const TCP_KERNEL: usize = 3;

/// Clip-level features `f_1..f_N` stacked as `[N, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence(Tensor);

impl FeatureSequence {
    pub fn new(feats: Tensor) -> Result<Self> {
        if feats.rank() != 2 {
            return Err(Error::Contract(format!(
                "feature sequence must be [T, D], got {:?}",
                feats.dims()
            )));
        }
        Ok(Self(feats))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Contract("empty feature sequence".into()))?;
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::Contract("ragged or zero-width feature rows".into()));
        }
        Self::new(Tensor::new(&[rows.len(), d], rows.concat())?)
    }

    pub fn feats(&self) -> &Tensor {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self) -> usize {
        self.0.dims()[1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantizer {
    AP,
    TCP,
}

pub fn average_pool(seq: &FeatureSequence) -> Tensor {
    seq.feats().mean_axis(0).expect("rank-2 sequence")
}

pub fn average_pool_graph(g: &mut Graph, seq: Var) -> Result<Var> {
    if g.dims(seq).len() != 2 {
        return Err(Error::Contract(format!("average_pool expects [T, D], got {:?}", g.dims(seq))));
    }
    g.mean_axis(seq, 0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TcpBlock<T = Tensor> {
    /// `[D, 3]`
    pub kernels: T,
    /// `[D, D]`, applied on the right of the `[T, D]` activations.
    pub pointwise: T,
}

impl<T> ParamTree for TcpBlock<T> {
    type Leaf = T;
    type With<U> = TcpBlock<U>;

    fn map_leaves<U>(&self, f: &mut impl FnMut(&T) -> U) -> TcpBlock<U> {
        TcpBlock {
            kernels: f(&self.kernels),
            pointwise: f(&self.pointwise),
        }
    }

    fn leaves(&self) -> Vec<&T> {
        vec![&self.kernels, &self.pointwise]
    }

    fn leaves_mut(&mut self) -> Vec<&mut T> {
        vec![&mut self.kernels, &mut self.pointwise]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TcpParams<T = Tensor> {
    pub blocks: Vec<TcpBlock<T>>,
}

impl<T> ParamTree for TcpParams<T> {
    type Leaf = T;
    type With<U> = TcpParams<U>;

    fn map_leaves<U>(&self, f: &mut impl FnMut(&T) -> U) -> TcpParams<U> {
        TcpParams {
            blocks: self.blocks.map_leaves(f),
        }
    }

    fn leaves(&self) -> Vec<&T> {
        self.blocks.leaves()
    }

    fn leaves_mut(&mut self) -> Vec<&mut T> {
        self.blocks.leaves_mut()
    }
}

impl TcpParams {
    pub fn init(width: usize, rng: &mut SplitMix64) -> Self {
        let blocks = (0..TCP_BLOCKS)
            .map(|_| TcpBlock {
                kernels: init_uniform(&[width, TCP_KERNEL], TCP_KERNEL, rng),
                pointwise: init_uniform(&[width, width], width, rng),
            })
            .collect();
        Self { blocks }
    }

    /// Center-impulse kernels and zero mixing: every block is the identity.
    pub fn identity(width: usize) -> Self {
        let mut kernels = Tensor::zeros(&[width, TCP_KERNEL]);
        for d in 0..width {
            kernels.data_mut()[d * TCP_KERNEL + TCP_KERNEL / 2] = 1.0;
        }
        let blocks = (0..TCP_BLOCKS)
            .map(|_| TcpBlock {
                kernels: kernels.clone(),
                pointwise: Tensor::zeros(&[width, width]),
            })
            .collect();
        Self { blocks }
    }
}

pub fn tcp_graph(g: &mut Graph, seq: Var, p: &TcpParams<Var>) -> Result<Var> {
    if p.blocks.len() != TCP_BLOCKS {
        return Err(Error::Config(format!(
            "TCP needs exactly {TCP_BLOCKS} blocks, got {}",
            p.blocks.len()
        )));
    }
    let sd = g.dims(seq).to_vec();
    if sd.len() != 2 {
        return Err(Error::Contract(format!("tcp expects [T, D], got {sd:?}")));
    }
    let d = sd[1];
    for b in &p.blocks {
        if g.dims(b.kernels) != [d, TCP_KERNEL] || g.dims(b.pointwise) != [d, d] {
            return Err(Error::shape("tcp", &sd, g.dims(b.kernels)));
        }
    }
    let mut x = seq;
    for b in &p.blocks {
        let conv = g.depthwise_temporal_conv(x, b.kernels)?;
        let act = g.relu(conv);
        let mixed = g.matmul(act, b.pointwise)?;
        x = g.add(x, mixed)?;
    }
    g.mean_axis(x, 0)
}

pub fn tcp(seq: &FeatureSequence, p: &TcpParams) -> Result<Tensor> {
    let mut g = Graph::new();
    let s = g.constant(seq.feats().clone());
    let pv = bind_const(&mut g, p);
    let out = tcp_graph(&mut g, s, &pv)?;
    Ok(g.value(out).clone())
}

pub fn quantize(seq: &FeatureSequence, q: Quantizer, tcp_params: Option<&TcpParams>) -> Result<Tensor> {
    match q {
        Quantizer::AP => Ok(average_pool(seq)),
        Quantizer::TCP => {
            let p = tcp_params.ok_or_else(|| Error::Config("TCP quantizer without parameters".into()))?;
            tcp(seq, p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn average_pool_examples() {
        let one = FeatureSequence::from_rows(&[vec![1.5, -2.0]]).unwrap();
        assert_eq!(average_pool(&one).data(), &[1.5, -2.0]);
        let two = FeatureSequence::from_rows(&[vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap();
        assert_eq!(average_pool(&two).data(), &[2.0, 4.0]);
        assert!(matches!(FeatureSequence::from_rows(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn identity_tcp_reduces_to_average_pool() {
        let mut rng = SplitMix64::new(5);
        for t in [1, 2, 7] {
            let seq = FeatureSequence::new(Tensor::randn(&[t, 6], &mut rng)).unwrap();
            let diff = tcp(&seq, &TcpParams::identity(6)).unwrap().max_abs_diff(&average_pool(&seq));
            assert!(diff < 1e-12, "{diff}");
        }
    }

    #[test]
    fn single_step_hand_recursion() {
        let mut rng = SplitMix64::new(6);
        let p = TcpParams::init(3, &mut rng);
        let seq = FeatureSequence::new(Tensor::randn(&[1, 3], &mut rng)).unwrap();
        // With T = 1 only the center tap contributes.
        let mut x: Vec<f64> = seq.feats().data().to_vec();
        for b in &p.blocks {
            let act: Vec<f64> = (0..3).map(|d| (b.kernels.get(&[d, 1]) * x[d]).max(0.0)).collect();
            let mixed: Vec<f64> = (0..3).map(|j| (0..3).map(|i| act[i] * b.pointwise.get(&[i, j])).sum()).collect();
            for d in 0..3 {
                x[d] += mixed[d];
            }
        }
        let out = tcp(&seq, &p).unwrap();
        for d in 0..3 {
            assert!((out.data()[d] - x[d]).abs() < 1e-12);
        }
    }

    #[test]
    fn tcp_is_order_sensitive() {
        let mut p = TcpParams::identity(2);
        p.blocks[0].kernels = Tensor::matrix(&[&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]]);
        p.blocks[0].pointwise = Tensor::identity(2);
        let fwd = FeatureSequence::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let rev = FeatureSequence::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(average_pool(&fwd), average_pool(&rev));
        let (a, b) = (tcp(&fwd, &p).unwrap(), tcp(&rev, &p).unwrap());
        assert_ne!(a, b);
        // the kernel shifts rows down one step, so only the first row survives
        // in the mixed term: identity blocks leave the rest unchanged
        assert_eq!(a.data(), &[1.0, 0.5]);
        assert_eq!(b.data(), &[0.5, 1.0]);
    }

    #[test]
    fn tcp_rejects_bad_params() {
        let seq = FeatureSequence::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let mut p = TcpParams::identity(2);
        p.blocks.pop();
        assert!(matches!(tcp(&seq, &p), Err(Error::Config(_))));
        assert!(matches!(tcp(&seq, &TcpParams::identity(3)), Err(Error::Shape { .. })));
    }

    proptest! {
        #[test]
        fn output_width_is_independent_of_length(t in 1usize..9, d in 1usize..5, seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let seq = FeatureSequence::new(Tensor::randn(&[t, d], &mut rng)).unwrap();
            let p = TcpParams::init(d, &mut rng);
            let (ap, tc) = (average_pool(&seq), tcp(&seq, &p).unwrap());
            prop_assert_eq!(ap.dims(), &[d]);
            prop_assert_eq!(tc.dims(), &[d]);
        }

        #[test]
        fn average_pool_permutation_invariant(t in 1usize..8, seed in any::<u64>()) {
            let mut rng = SplitMix64::new(seed);
            let feats = Tensor::randn(&[t, 3], &mut rng);
            let mut order: Vec<usize> = (0..t).collect();
            rng.shuffle(&mut order);
            let a = average_pool(&FeatureSequence::new(feats.clone()).unwrap());
            let b = average_pool(&FeatureSequence::new(feats.index_select(0, &order).unwrap()).unwrap());
            prop_assert!(a.max_abs_diff(&b) < 1e-12);
        }
    }
}
