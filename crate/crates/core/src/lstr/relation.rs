//! Relation graph over actor proposals and graph convolution.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::lstr::pool::{iou_2d, Box2d};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct RelationGraph {
    /// `[M, M]`, symmetric, unit diagonal, nonnegative.
    pub adjacency: Tensor,
    /// `D^{-1/2} A D^{-1/2}`.
    pub normalized: Tensor,
}

/// Cosine similarity, taken as 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

pub fn normalize_adjacency(a: &Tensor) -> Tensor {
    let m = a.dims()[0];
    let degree: Vec<f64> = (0..m).map(|i| a.data()[i * m..(i + 1) * m].iter().sum()).collect();
    let mut out = a.clone();
    for i in 0..m {
        for j in 0..m {
            out.data_mut()[i * m + j] /= (degree[i] * degree[j]).sqrt();
        }
    }
    out
}

/// Edge weight `λ·max(0, cos(f_i, f_j)) + (1−λ)·IoU(b_i, b_j)` with unit
/// self-loops. `features` is `[M, F]`, one row per proposal.
pub fn build_relation_graph(features: &Tensor, boxes: &[Box2d], lambda: f64) -> Result<RelationGraph> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("relation lambda must lie in [0, 1], got {lambda}")));
    }
    if features.rank() != 2 || features.dims()[0] != boxes.len() {
        return Err(Error::shape("build_relation_graph", features.dims(), &[boxes.len()]));
    }
    let m = boxes.len();
    if m == 0 {
        return Err(Error::Contract("relation graph needs at least one proposal".into()));
    }
    let f = features.dims()[1];
    let row = |i: usize| &features.data()[i * f..(i + 1) * f];
    let mut a = Tensor::zeros(&[m, m]);
    for i in 0..m {
        a.data_mut()[i * m + i] = 1.0;
        for j in i + 1..m {
            let w = lambda * cosine(row(i), row(j)).max(0.0) + (1.0 - lambda) * iou_2d(&boxes[i], &boxes[j]);
            a.data_mut()[i * m + j] = w;
            a.data_mut()[j * m + i] = w;
        }
    }
    let normalized = normalize_adjacency(&a);
    Ok(RelationGraph {
        adjacency: a,
        normalized,
    })
}

/// `relu(Â · X · W)`
pub fn gcn_layer_graph(g: &mut Graph, x: Var, ahat: Var, w: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    let prop = g.matmul(ahat, xw)?;
    Ok(g.relu(prop))
}

pub fn gcn_layer(x: &Tensor, ahat: &Tensor, w: &Tensor) -> Result<Tensor> {
    Ok(ahat.matmul(&x.matmul(w)?)?.relu())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_box(rng: &mut SplitMix64) -> Box2d {
        let x1 = rng.uniform(0.0, 0.6);
        let y1 = rng.uniform(0.0, 0.6);
        Box2d::new(x1, y1, x1 + rng.uniform(0.1, 0.4), y1 + rng.uniform(0.1, 0.4)).unwrap()
    }

    #[test]
    fn degenerate_graphs() {
        let b = Box2d::new(0.1, 0.1, 0.5, 0.5).unwrap();
        let f = Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let g = build_relation_graph(&f, &[b; 3], 0.5).unwrap();
        assert!(g.adjacency.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));

        let f = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 3.0]);
        let b2 = Box2d::new(0.6, 0.6, 0.9, 0.9).unwrap();
        let g = build_relation_graph(&f, &[b, b2], 0.5).unwrap();
        assert_eq!(g.adjacency, Tensor::identity(2));
        assert_eq!(g.normalized, Tensor::identity(2));
    }

    #[test]
    fn random_graph_normalization() {
        let mut rng = SplitMix64::new(7);
        let f = Tensor::randn(&[3, 4], &mut rng);
        let boxes: Vec<Box2d> = (0..3).map(|_| random_box(&mut rng)).collect();
        let g = build_relation_graph(&f, &boxes, 0.3).unwrap();
        let (a, n) = (&g.adjacency, &g.normalized);
        for i in 0..3 {
            assert_eq!(a.get(&[i, i]), 1.0);
            let di: f64 = (0..3).map(|k| a.get(&[i, k])).sum();
            for j in 0..3 {
                assert!(a.get(&[i, j]) >= 0.0);
                assert!((n.get(&[i, j]) - n.get(&[j, i])).abs() < 1e-12);
                let dj: f64 = (0..3).map(|k| a.get(&[j, k])).sum();
                assert!((n.get(&[i, j]) - a.get(&[i, j]) / (di * dj).sqrt()).abs() < 1e-12);
            }
        }
        // zero-norm feature contributes no similarity
        let z = Tensor::zeros(&[2, 4]);
        let g = build_relation_graph(&z, &boxes[..2], 1.0).unwrap();
        assert_eq!(g.adjacency, Tensor::identity(2));
    }

    #[test]
    fn gcn_examples() {
        let mut rng = SplitMix64::new(8);
        let x = Tensor::randn(&[4, 3], &mut rng).map(f64::abs);
        assert_eq!(gcn_layer(&x, &Tensor::identity(4), &Tensor::identity(3)).unwrap(), x);

        let a = Tensor::full(&[2, 2], 1.0);
        let ahat = normalize_adjacency(&a);
        assert_eq!(ahat, Tensor::full(&[2, 2], 0.5));
        let x = Tensor::matrix(&[&[2.0, 0.0], &[0.0, 2.0]]);
        let out = gcn_layer(&x, &ahat, &Tensor::identity(2)).unwrap();
        assert_eq!(out, Tensor::full(&[2, 2], 1.0));
    }

    #[test]
    fn gcn_is_permutation_equivariant() {
        let mut rng = SplitMix64::new(9);
        let x = Tensor::randn(&[4, 3], &mut rng);
        let boxes: Vec<Box2d> = (0..4).map(|_| random_box(&mut rng)).collect();
        let g = build_relation_graph(&x, &boxes, 0.5).unwrap();
        let w = Tensor::randn(&[3, 2], &mut rng);
        let out = gcn_layer(&x, &g.normalized, &w).unwrap();
        let perm = [2, 0, 3, 1];
        let xp = x.index_select(0, &perm).unwrap();
        let ap = g.normalized.index_select(0, &perm).unwrap().index_select(1, &perm).unwrap();
        let outp = gcn_layer(&xp, &ap, &w).unwrap();
        assert!(outp.max_abs_diff(&out.index_select(0, &perm).unwrap()) < 1e-12);
    }
}
