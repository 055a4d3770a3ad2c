//! Dense row-major `f64` tensors and the numeric kernels shared across the crate.
//!
//! Tensors are immutable value types backed by an `Arc<Vec<f64>>`, so cloning
//! and reshaping are cheap. Elementwise binary operations follow a *suffix
//! broadcast* rule: two shapes are compatible when they are equal or when the
//! smaller shape equals a suffix of the larger one (a rank-0 scalar is a
//! suffix of every shape). This keeps index arithmetic to a single modulo and
//! makes the reduction performed by gradient accumulation unambiguous.

pub mod check;
pub mod tape;

use crate::error::{Error, Result};
use std::sync::Arc;

/// Input above which `softplus(x)` is evaluated as `x + ln(1 + e^(-x))`.
///
/// For `x > 30` the direct form `ln(1 + e^x)` would lose precision long before
/// `e^x` overflows, while the shifted form is exact to machine precision; for
/// `x <= 30`, `e^x <= 1.1e13` and the direct form is accurate.
pub const SOFTPLUS_THRESHOLD: f64 = 30.0;

/// Stable softplus: `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > SOFTPLUS_THRESHOLD {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of softplus, i.e. the logistic sigmoid `1 / (1 + e^-x)`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dense row-major tensor of `f64` values.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Builds a tensor from a shape and matching data buffer.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    /// Rank-0 scalar.
    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: Arc::new(vec![v]),
        }
    }

    /// All-zeros tensor.
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![0.0; numel(shape)]),
        }
    }

    /// Tensor filled with a constant.
    pub fn full(shape: &[usize], v: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![v; numel(shape)]),
        }
    }

    /// Rank-1 tensor from a vector.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data: Arc::new(data),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.len() != 1 {
            return Err(Error::Shape(format!(
                "item() requires exactly one element, shape is {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Value at a fully-specified multi-index.
    pub fn get(&self, index: &[usize]) -> Result<f64> {
        if index.len() != self.shape.len() {
            return Err(Error::Shape(format!(
                "index rank {} does not match tensor rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut flat = 0usize;
        for (i, (&ix, &dim)) in index.iter().zip(self.shape.iter()).enumerate() {
            if ix >= dim {
                return Err(Error::Shape(format!(
                    "index {} out of bounds for axis {} with size {}",
                    ix, i, dim
                )));
            }
            flat = flat * dim + ix;
        }
        Ok(self.data[flat])
    }

    /// Same data viewed under a new shape with an equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elements) to {:?} ({} elements)",
                self.shape,
                self.len(),
                shape,
                numel(shape)
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        })
    }

    /// Elementwise map.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&x| f(x)).collect()),
        }
    }

    /// Elementwise binary operation under the suffix-broadcast rule.
    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (shape, a_small, b_small) = broadcast_shapes(&self.shape, &other.shape)?;
        let out_len = numel(&shape);
        let a = &self.data;
        let b = &other.data;
        let mut out = Vec::with_capacity(out_len);
        match (a_small, b_small) {
            (false, false) => {
                for i in 0..out_len {
                    out.push(f(a[i], b[i]));
                }
            }
            (false, true) => {
                let lb = b.len();
                for i in 0..out_len {
                    out.push(f(a[i], b[i % lb]));
                }
            }
            (true, false) => {
                let la = a.len();
                for i in 0..out_len {
                    out.push(f(a[i % la], b[i]));
                }
            }
            (true, true) => unreachable!("at most one side of a broadcast is smaller"),
        }
        Ok(Tensor {
            shape,
            data: Arc::new(out),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a / b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        self.map(|x| x + s)
    }

    pub fn neg(&self) -> Tensor {
        self.map(|x| -x)
    }

    pub fn exp(&self) -> Tensor {
        self.map(f64::exp)
    }

    pub fn ln(&self) -> Tensor {
        self.map(f64::ln)
    }

    pub fn tanh(&self) -> Tensor {
        self.map(f64::tanh)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn softplus(&self) -> Tensor {
        self.map(softplus)
    }

    pub fn square(&self) -> Tensor {
        self.map(|x| x * x)
    }

    pub fn sqrt(&self) -> Tensor {
        self.map(f64::sqrt)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.map(|x| x.clamp(lo, hi))
    }

    /// Sum of all elements.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Mean of all elements.
    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    /// Largest element (NaN-free input assumed); `-inf` for empty tensors.
    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest element (NaN-free input assumed); `+inf` for empty tensors.
    pub fn min_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// True if any element is NaN or infinite.
    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|x| !x.is_finite())
    }

    /// Collapses a tensor produced under broadcast back to `target` shape by
    /// summing over the leading (broadcast) positions. `target` must be a
    /// suffix of `self.shape`.
    pub fn sum_leading_to(&self, target: &[usize]) -> Result<Tensor> {
        if self.shape == target {
            return Ok(self.clone());
        }
        if !is_suffix(target, &self.shape) {
            return Err(Error::Shape(format!(
                "{:?} is not a suffix of {:?}",
                target, self.shape
            )));
        }
        let lt = numel(target);
        let mut out = vec![0.0; lt];
        for (i, &v) in self.data.iter().enumerate() {
            out[i % lt] += v;
        }
        Ok(Tensor {
            shape: target.to_vec(),
            data: Arc::new(out),
        })
    }

    /// Matrix product of two rank-2 tensors: `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        gemm(self, false, other, false)
    }

    /// Copies the tensor with its axes reordered by `perm`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let r = self.rank();
        if perm.len() != r {
            return Err(Error::Shape(format!(
                "permutation {:?} does not match rank {}",
                perm, r
            )));
        }
        let mut seen = vec![false; r];
        for &p in perm {
            if p >= r || seen[p] {
                return Err(Error::Shape(format!("invalid permutation {:?}", perm)));
            }
            seen[p] = true;
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let in_strides = row_major_strides(&self.shape);
        let out_strides = row_major_strides(&out_shape);
        let mut out = vec![0.0; self.len()];
        let mut index = vec![0usize; r];
        for (flat_out, slot) in out.iter_mut().enumerate() {
            // Decode the output multi-index, then map through the permutation.
            let mut rem = flat_out;
            for ax in 0..r {
                index[ax] = rem / out_strides[ax];
                rem %= out_strides[ax];
            }
            let mut flat_in = 0usize;
            for ax in 0..r {
                flat_in += index[ax] * in_strides[perm[ax]];
            }
            *slot = self.data[flat_in];
        }
        Ok(Tensor {
            shape: out_shape,
            data: Arc::new(out),
        })
    }

    /// The `i`-th slice along axis 0, with that axis removed.
    pub fn index_axis0(&self, i: usize) -> Result<Tensor> {
        if self.rank() == 0 {
            return Err(Error::Shape("cannot index a scalar".into()));
        }
        if i >= self.shape[0] {
            return Err(Error::Shape(format!(
                "index {} out of bounds for axis 0 with size {}",
                i, self.shape[0]
            )));
        }
        let inner: usize = self.shape[1..].iter().product();
        let out = self.data[i * inner..(i + 1) * inner].to_vec();
        Ok(Tensor {
            shape: self.shape[1..].to_vec(),
            data: Arc::new(out),
        })
    }
}

/// Row-major strides for a shape.
pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && &big[big.len() - small.len()..] == small
}

/// Resolves the suffix-broadcast rule for two shapes.
///
/// Returns the output shape plus flags telling which side (at most one) is the
/// smaller, repeated operand.
pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<(Vec<usize>, bool, bool)> {
    if a == b {
        return Ok((a.to_vec(), false, false));
    }
    if is_suffix(b, a) {
        return Ok((a.to_vec(), false, true));
    }
    if is_suffix(a, b) {
        return Ok((b.to_vec(), true, false));
    }
    Err(Error::Shape(format!(
        "shapes {:?} and {:?} are not broadcast-compatible (neither is a suffix of the other)",
        a, b
    )))
}

/// General matrix product with optional logical transposes, `op(a) x op(b)`.
///
/// Transposition is expressed through strides, so no operand is copied.
pub(crate) fn gemm(a: &Tensor, trans_a: bool, b: &Tensor, trans_b: bool) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::Shape(format!(
            "matmul requires rank-2 operands, got {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    let (m, ka) = if trans_a {
        (a.shape[1], a.shape[0])
    } else {
        (a.shape[0], a.shape[1])
    };
    let (kb, n) = if trans_b {
        (b.shape[1], b.shape[0])
    } else {
        (b.shape[0], b.shape[1])
    };
    if ka != kb {
        return Err(Error::Shape(format!(
            "matmul inner dimensions differ: {} vs {}",
            ka, kb
        )));
    }
    let mut out = vec![0.0; m * n];
    // Row-major strides; a transposed operand swaps its row/column strides.
    let (rsa, csa) = if trans_a {
        (1isize, a.shape[1] as isize)
    } else {
        (a.shape[1] as isize, 1isize)
    };
    let (rsb, csb) = if trans_b {
        (1isize, b.shape[1] as isize)
    } else {
        (b.shape[1] as isize, 1isize)
    };
    unsafe {
        matrixmultiply::dgemm(
            m,
            ka,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Tensor::new(vec![m, n], out)
}

/// Stacks equally-shaped tensors along a new leading axis.
pub fn stack(tensors: &[Tensor]) -> Result<Tensor> {
    let first = tensors
        .first()
        .ok_or_else(|| Error::Shape("cannot stack zero tensors".into()))?;
    let mut out = Vec::with_capacity(tensors.len() * first.len());
    for t in tensors {
        if t.shape != first.shape {
            return Err(Error::Shape(format!(
                "stack requires equal shapes, got {:?} and {:?}",
                first.shape, t.shape
            )));
        }
        out.extend_from_slice(&t.data);
    }
    let mut shape = Vec::with_capacity(first.rank() + 1);
    shape.push(tensors.len());
    shape.extend_from_slice(&first.shape);
    Tensor::new(shape, out)
}

/// Forward kernel of the spectral graph convolution.
///
/// `h` has shape `[..., N, K]`; every leading position is an independent
/// feature matrix that is propagated as `s · h · theta` with the fixed
/// `[N, N]` propagation matrix `s` and the `[K, F]` weight `theta`. Returns
/// the output of shape `[..., N, F]` together with the intermediate
/// `s · h` (same leading layout, `[..., N, K]`), which the backward pass
/// reuses.
pub(crate) fn graph_conv_forward(s: &Tensor, h: &Tensor, theta: &Tensor) -> Result<(Tensor, Tensor)> {
    if s.rank() != 2 || s.shape[0] != s.shape[1] {
        return Err(Error::Shape(format!(
            "propagation matrix must be square, got {:?}",
            s.shape
        )));
    }
    let n = s.shape[0];
    if h.rank() < 2 {
        return Err(Error::Shape(format!(
            "graph conv input must have rank >= 2, got {:?}",
            h.shape
        )));
    }
    let k = h.shape[h.rank() - 1];
    if h.shape[h.rank() - 2] != n {
        return Err(Error::Shape(format!(
            "graph conv input has {} nodes per slice, propagation matrix has {}",
            h.shape[h.rank() - 2],
            n
        )));
    }
    if theta.rank() != 2 || theta.shape[0] != k {
        return Err(Error::Shape(format!(
            "weight shape {:?} does not match feature dimension {}",
            theta.shape, k
        )));
    }
    let f = theta.shape[1];
    let m: usize = h.shape[..h.rank() - 2].iter().product();
    // Propagate each slice: mixed[i] = s · h[i].
    let mut mixed = vec![0.0; m * n * k];
    let hs = h.data();
    for i in 0..m {
        unsafe {
            matrixmultiply::dgemm(
                n,
                n,
                k,
                1.0,
                s.data.as_ptr(),
                n as isize,
                1,
                hs[i * n * k..].as_ptr(),
                k as isize,
                1,
                0.0,
                mixed[i * n * k..].as_mut_ptr(),
                k as isize,
                1,
            );
        }
    }
    let mixed = Tensor::new(h.shape.to_vec(), mixed)?;
    // One flat product applies the feature transform to every slice at once.
    let out2 = mixed.reshape(&[m * n, k])?.matmul(theta)?;
    let mut out_shape = h.shape[..h.rank() - 2].to_vec();
    out_shape.push(n);
    out_shape.push(f);
    Ok((out2.reshape(&out_shape)?, mixed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matmul_worked_example() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![5.0, 6.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dims() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 2]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn gemm_transposes_match_explicit_permute() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![7.0, 8.0, 9.0, 10.0]).unwrap();
        let at = a.permute(&[1, 0]).unwrap();
        let direct = gemm(&a, true, &b, false).unwrap();
        let explicit = at.matmul(&b).unwrap();
        assert_eq!(direct.data(), explicit.data());
        let bt = b.permute(&[1, 0]).unwrap();
        let direct2 = gemm(&at, false, &b, true).unwrap();
        let explicit2 = at.matmul(&bt).unwrap();
        assert_eq!(direct2.data(), explicit2.data());
    }

    #[test]
    fn softplus_worked_examples() {
        assert_relative_eq!(softplus(0.0), std::f64::consts::LN_2, max_relative = 1e-14);
        // Deep negative tail stays proportional to e^x instead of flushing to zero.
        assert_relative_eq!(softplus(-100.0), (-100.0f64).exp(), max_relative = 1e-12);
        assert!(softplus(-100.0) > 3.7e-44 && softplus(-100.0) < 3.8e-44);
        // Large inputs approach the identity without overflow.
        assert_relative_eq!(softplus(500.0), 500.0, max_relative = 1e-14);
        assert!(softplus(1000.0).is_finite());
    }

    #[test]
    fn tanh_worked_example() {
        let t = Tensor::scalar(1.0).tanh();
        assert_relative_eq!(t.item().unwrap(), 0.761594, max_relative = 1e-6);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_relative_eq!(sigmoid(0.0), 0.5);
        assert_relative_eq!(sigmoid(800.0), 1.0);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
        assert_relative_eq!(sigmoid(2.0) + sigmoid(-2.0), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn suffix_broadcast_accepts_suffix_and_rejects_others() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(vec![10.0, 20.0, 30.0]);
        let c = a.add(&b).unwrap();
        assert_eq!(c.data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        // Scalars broadcast with everything.
        let s = Tensor::scalar(1.0);
        assert_eq!(a.add(&s).unwrap().data()[5], 7.0);
        assert_eq!(s.add(&a).unwrap().data()[0], 2.0);
        // A leading prefix is not a suffix.
        let p = Tensor::from_vec(vec![1.0, 2.0]);
        assert!(a.add(&p).is_err());
    }

    #[test]
    fn sum_leading_to_accumulates_by_suffix_position() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = t.sum_leading_to(&[3]).unwrap();
        assert_eq!(r.data(), &[5.0, 7.0, 9.0]);
        let total = t.sum_leading_to(&[]).unwrap();
        assert_eq!(total.item().unwrap(), 21.0);
        assert!(t.sum_leading_to(&[2]).is_err());
    }

    #[test]
    fn reductions_and_maps() {
        let t = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.sum(), 10.0);
        assert_eq!(t.mean(), 2.5);
        assert_eq!(t.square().data(), &[1.0, 4.0, 9.0, 16.0]);
        assert_eq!(t.relu().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.neg().relu().data(), &[0.0, 0.0, 0.0, 0.0]);
        assert_eq!(t.clamp(1.5, 3.5).data(), &[1.5, 2.0, 3.0, 3.5]);
    }

    #[test]
    fn reshape_shares_data_and_checks_count() {
        let t = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        let r = t.reshape(&[3, 2]).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert!(Arc::ptr_eq(&t.data, &r.data));
        assert!(t.reshape(&[4, 2]).is_err());
    }

    #[test]
    fn permute_matches_manual_transpose() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = t.permute(&[1, 0]).unwrap();
        assert_eq!(p.shape(), &[3, 2]);
        assert_eq!(p.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        // Rank-3 cycle: out[k][i][j] = in[i][j][k].
        let t3 = Tensor::new(vec![2, 2, 2], (0..8).map(|x| x as f64).collect()).unwrap();
        let p3 = t3.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p3.get(&[1, 0, 1]).unwrap(), t3.get(&[0, 1, 1]).unwrap());
        assert!(t.permute(&[0, 0]).is_err());
    }

    #[test]
    fn stack_and_index_axis0_roundtrip() {
        let a = Tensor::from_vec(vec![1.0, 2.0]);
        let b = Tensor::from_vec(vec![3.0, 4.0]);
        let s = stack(&[a.clone(), b]).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.index_axis0(1).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(s.index_axis0(0).unwrap().data(), a.data());
        assert!(s.index_axis0(2).is_err());
    }

    #[test]
    fn graph_conv_kernel_matches_triple_product() {
        let s = Tensor::new(vec![2, 2], vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let h = Tensor::new(vec![3, 2, 2], (1..=12).map(|x| x as f64).collect()).unwrap();
        let theta = Tensor::new(vec![2, 1], vec![1.0, -1.0]).unwrap();
        let (out, mixed) = graph_conv_forward(&s, &h, &theta).unwrap();
        assert_eq!(out.shape(), &[3, 2, 1]);
        for t in 0..3 {
            let ht = h.index_axis0(t).unwrap();
            let expect = s.matmul(&ht).unwrap().matmul(&theta).unwrap();
            for n in 0..2 {
                assert_relative_eq!(
                    out.get(&[t, n, 0]).unwrap(),
                    expect.get(&[n, 0]).unwrap(),
                    max_relative = 1e-14
                );
                assert_relative_eq!(
                    mixed.get(&[t, n, 0]).unwrap(),
                    s.matmul(&ht).unwrap().get(&[n, 0]).unwrap(),
                    max_relative = 1e-14
                );
            }
        }
    }

    #[test]
    fn scalar_tensors_behave() {
        let s = Tensor::scalar(3.0);
        assert_eq!(s.rank(), 0);
        assert_eq!(s.len(), 1);
        assert_eq!(s.item().unwrap(), 3.0);
        assert_eq!(s.square().item().unwrap(), 9.0);
    }
}
