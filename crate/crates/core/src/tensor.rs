//! Dense row-major `f64` tensors of rank 1..=5.
//!
//! Values are immutable once built; every operation returns a new tensor.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const MAX_RANK: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.len() > MAX_RANK {
        return Err(Error::Contract(format!(
            "tensor rank must be 1..={MAX_RANK}, got {}",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::Contract(format!("zero extent in {dims:?}")));
    }
    Ok(dims.iter().product())
}

/// Splits `dims` around `axis` into (outer, extent, inner) loop counts.
pub(crate) fn split_axis(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * dims[i + 1];
    }
    s
}

/// Dims after removing `axis`; a rank-1 input reduces to `[1]`.
pub(crate) fn reduced_dims(dims: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = dims.to_vec();
    out.remove(axis);
    if out.is_empty() {
        out.push(1);
    }
    out
}

/// Output dims of a broadcasting binary op. Ranks must agree and each extent
/// pair must be equal or contain a 1.
pub(crate) fn broadcast_dims(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape(op, a, b));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::shape(op, a, b)),
        })
        .collect()
}

/// For every flat index of `out_dims`, the flat index into a tensor of
/// `in_dims` that broadcasting reads from.
pub(crate) fn broadcast_index_map(in_dims: &[usize], out_dims: &[usize]) -> Vec<usize> {
    let in_strides = strides(in_dims);
    let n: usize = out_dims.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut coord = vec![0usize; out_dims.len()];
    for _ in 0..n {
        let mut flat = 0;
        for (ax, &c) in coord.iter().enumerate() {
            if in_dims[ax] != 1 {
                flat += c * in_strides[ax];
            }
        }
        map.push(flat);
        for ax in (0..out_dims.len()).rev() {
            coord[ax] += 1;
            if coord[ax] < out_dims[ax] {
                break;
            }
            coord[ax] = 0;
        }
    }
    map
}

impl Tensor {
    pub fn new(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let n = check_dims(dims)?;
        if data.len() != n {
            return Err(Error::Contract(format!(
                "data length {} does not match dims {dims:?} (product {n})",
                data.len()
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    /// Panics on invalid dims; for literal shapes known to be valid.
    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Self {
        Self::new(dims, data).expect("invalid tensor literal")
    }

    pub fn full(dims: &[usize], value: f64) -> Self {
        let n = check_dims(dims).expect("invalid dims");
        Self {
            dims: dims.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::from_vec(&[n], data)
    }

    pub fn matrix(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged matrix literal");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_vec(&[rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Entries drawn from uniform(-bound, bound).
    pub fn uniform(dims: &[usize], bound: f64, rng: &mut SplitMix64) -> Self {
        let mut t = Self::zeros(dims);
        for v in &mut t.data {
            *v = rng.uniform(-bound, bound);
        }
        t
    }

    pub fn randn(dims: &[usize], rng: &mut SplitMix64) -> Self {
        let mut t = Self::zeros(dims);
        for v in &mut t.data {
            *v = rng.normal();
        }
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.dims.iter().all(|&d| d == 1)
    }

    /// The single value of an all-extents-1 tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on tensor of dims {:?}", self.dims);
        self.data[0]
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.dims.len(), "index rank");
        let flat = index
            .iter()
            .zip(strides(&self.dims))
            .zip(&self.dims)
            .map(|((&i, s), &d)| {
                assert!(i < d, "index {index:?} out of bounds for {:?}", self.dims);
                i * s
            })
            .sum::<usize>();
        self.data[flat]
    }

    /// Mutable access for building tensors in place; only used before sharing.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        let n = check_dims(dims)?;
        if n != self.len() {
            return Err(Error::shape("reshape", &self.dims, dims));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Tensor {
        self.map(f64::tanh)
    }

    pub(crate) fn broadcast_with(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.dims == other.dims {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Tensor {
                dims: self.dims.clone(),
                data,
            });
        }
        let dims = broadcast_dims(op, &self.dims, &other.dims)?;
        let ma = broadcast_index_map(&self.dims, &dims);
        let mb = broadcast_index_map(&other.dims, &dims);
        let data = ma
            .iter()
            .zip(&mb)
            .map(|(&i, &j)| f(self.data[i], other.data[j]))
            .collect();
        Ok(Tensor { dims, data })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.broadcast_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.broadcast_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.broadcast_with(other, "mul", |a, b| a * b)
    }

    /// Sums `self` down to `dims`, the reverse of broadcasting.
    pub(crate) fn sum_to(&self, dims: &[usize]) -> Tensor {
        if self.dims == dims {
            return self.clone();
        }
        let map = broadcast_index_map(dims, &self.dims);
        let mut out = Tensor::zeros(dims);
        for (v, &j) in self.data.iter().zip(&map) {
            out.data[j] += v;
        }
        out
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        if axis >= first.rank() {
            return Err(Error::Contract(format!(
                "concat axis {axis} out of range for rank {}",
                first.rank()
            )));
        }
        for p in parts {
            let ok = p.rank() == first.rank()
                && p.dims.iter().zip(&first.dims).enumerate().all(|(ax, (a, b))| ax == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", &first.dims, &p.dims));
            }
        }
        let mut dims = first.dims.clone();
        dims[axis] = parts.iter().map(|p| p.dims[axis]).sum();
        let (outer, _, inner) = split_axis(&first.dims, axis);
        let mut data = Vec::with_capacity(dims.iter().product());
        for o in 0..outer {
            for p in parts {
                let chunk = p.dims[axis] * inner;
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(Tensor { dims, data })
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.rank() {
            return Err(Error::Contract(format!(
                "axis {axis} out of range for dims {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.check_axis(axis)?;
        let (outer, n, inner) = split_axis(&self.dims, axis);
        let mut out = Tensor::zeros(&reduced_dims(&self.dims, axis));
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                for i in 0..inner {
                    out.data[o * inner + i] += self.data[base + i];
                }
            }
        }
        Ok(out)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let n = self.dims.get(axis).copied().unwrap_or(1) as f64;
        Ok(self.sum_axis(axis)?.scale(1.0 / n))
    }

    /// Max along `axis` together with the flat source index of every winner
    /// (first occurrence on ties).
    pub fn max_axis_with_argmax(&self, axis: usize) -> Result<(Tensor, Vec<usize>)> {
        self.check_axis(axis)?;
        let (outer, n, inner) = split_axis(&self.dims, axis);
        let dims = reduced_dims(&self.dims, axis);
        let mut idx = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * n * inner + i;
                for k in 1..n {
                    let j = (o * n + k) * inner + i;
                    if self.data[j] > self.data[best] {
                        best = j;
                    }
                }
                idx.push(best);
            }
        }
        Ok((self.gather(&dims, &idx), idx))
    }

    pub fn max_axis(&self, axis: usize) -> Result<Tensor> {
        Ok(self.max_axis_with_argmax(axis)?.0)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Numerically stable softmax along `axis` (max-subtracted).
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        self.check_axis(axis)?;
        let (outer, n, inner) = split_axis(&self.dims, axis);
        let mut out = self.clone();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let m = (0..n).map(|k| self.data[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..n {
                    let e = (self.data[at(k)] - m).exp();
                    out.data[at(k)] = e;
                    z += e;
                }
                for k in 0..n {
                    out.data[at(k)] /= z;
                }
            }
        }
        Ok(out)
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        self.check_axis(axis)?;
        let (outer, n, inner) = split_axis(&self.dims, axis);
        let mut out = self.clone();
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let m = (0..n).map(|k| self.data[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = m + (0..n).map(|k| (self.data[at(k)] - m).exp()).sum::<f64>().ln();
                for k in 0..n {
                    out.data[at(k)] = self.data[at(k)] - lse;
                }
            }
        }
        Ok(out)
    }

    /// Builds a tensor of `dims` whose i-th element is `self.data[idx[i]]`.
    pub(crate) fn gather(&self, dims: &[usize], idx: &[usize]) -> Tensor {
        debug_assert_eq!(dims.iter().product::<usize>(), idx.len());
        Tensor {
            dims: dims.to_vec(),
            data: idx.iter().map(|&j| self.data[j]).collect(),
        }
    }

    pub(crate) fn permute_indices(dims: &[usize], axes: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut seen = vec![false; dims.len()];
        if axes.len() != dims.len() || axes.iter().any(|&a| a >= dims.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::Contract(format!("invalid permutation {axes:?} for dims {dims:?}")));
        }
        let out_dims: Vec<usize> = axes.iter().map(|&a| dims[a]).collect();
        let in_strides = strides(dims);
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let n: usize = dims.iter().product();
        let mut idx = Vec::with_capacity(n);
        let mut coord = vec![0usize; dims.len()];
        for _ in 0..n {
            idx.push(coord.iter().zip(&src_strides).map(|(c, s)| c * s).sum());
            for ax in (0..out_dims.len()).rev() {
                coord[ax] += 1;
                if coord[ax] < out_dims[ax] {
                    break;
                }
                coord[ax] = 0;
            }
        }
        Ok((out_dims, idx))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let (dims, idx) = Self::permute_indices(&self.dims, axes)?;
        Ok(self.gather(&dims, &idx))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Contract(format!("transpose needs rank 2, got {:?}", self.dims)));
        }
        self.permute(&[1, 0])
    }

    pub(crate) fn index_select_indices(
        dims: &[usize],
        axis: usize,
        indices: &[usize],
    ) -> Result<(Vec<usize>, Vec<usize>)> {
        if axis >= dims.len() {
            return Err(Error::Contract(format!("axis {axis} out of range for {dims:?}")));
        }
        if indices.is_empty() {
            return Err(Error::Contract("index_select with no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= dims[axis]) {
            return Err(Error::Data(format!(
                "index {bad} out of range for axis {axis} of extent {}",
                dims[axis]
            )));
        }
        let (outer, n, inner) = split_axis(dims, axis);
        let mut out_dims = dims.to_vec();
        out_dims[axis] = indices.len();
        let mut idx = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &k in indices {
                let base = (o * n + k) * inner;
                idx.extend(base..base + inner);
            }
        }
        Ok((out_dims, idx))
    }

    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Tensor> {
        let (dims, idx) = Self::index_select_indices(&self.dims, axis, indices)?;
        Ok(self.gather(&dims, &idx))
    }

    /// Contiguous range `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        if start >= end {
            return Err(Error::Contract(format!("empty slice {start}..{end}")));
        }
        let idx: Vec<usize> = (start..end).collect();
        self.index_select(axis, &idx)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.dims[1] != other.dims[0] {
            return Err(Error::shape("matmul", &self.dims, &other.dims));
        }
        let (m, k, n) = (self.dims[0], self.dims[1], other.dims[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b = &other.data[p * n..(p + 1) * n];
                for (r, &bv) in row.iter_mut().zip(b) {
                    *r += a * bv;
                }
            }
        }
        Ok(Tensor {
            dims: vec![m, n],
            data: out,
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff dims");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
