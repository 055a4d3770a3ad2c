//! Arena-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] owns every intermediate value of one forward computation. Ops
//! append nodes and return lightweight [`Var`] handles; [`Tape::backward`]
//! seeds a scalar root with 1 and sweeps the arena once in reverse, producing
//! a gradient per differentiable node. Leaves come in two kinds: `input`
//! (constants, never differentiated) and `param` (gradient targets). A node
//! only tracks gradients when at least one of its operands does, so frozen
//! subgraphs cost no backward work.

use super::{gemm, graph_conv_forward, stack, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Matmul(Var, Var),
    /// Fused `x·w + h·u + b` with a row-broadcast bias.
    Affine2 {
        x: Var,
        w: Var,
        h: Var,
        u: Var,
        b: Var,
    },
    /// Spectral graph convolution with a fixed propagation matrix.
    GraphConv {
        s: Tensor,
        h: Var,
        theta: Var,
        /// Cached `s · h`, reused by the backward pass.
        mixed: Tensor,
    },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Square(Var),
    Neg(Var),
    Scale(Var, f64),
    // The offset never enters the backward pass: d(x + c)/dx = 1.
    AddScalar(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    Stack(Vec<Var>),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    /// Columns `[start, start+width)` of a rank-2 input.
    SliceCols(Var, usize, usize),
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

/// Gradients produced by one backward sweep.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient of the root with respect to `var`.
    ///
    /// Returns zeros for a differentiable node the root does not depend on,
    /// and `None` for constants.
    pub fn get(&self, tape: &Tape, var: Var) -> Option<Tensor> {
        if !tape.nodes[var.0].needs_grad {
            return None;
        }
        Some(match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.nodes[var.0].value.shape()),
        })
    }
}

/// Recording arena for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value held by a node.
    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant leaf: participates in values, never in gradients.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Input)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Param)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        let g = self.ng(a) || self.ng(b);
        Ok(self.push(v, g, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        let g = self.ng(a) || self.ng(b);
        Ok(self.push(v, g, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        let g = self.ng(a) || self.ng(b);
        Ok(self.push(v, g, Op::Mul(a, b)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let g = self.ng(a) || self.ng(b);
        Ok(self.push(v, g, Op::Matmul(a, b)))
    }

    /// Fused affine combination `x·w + h·u + b`, the recurrent-gate workhorse.
    pub fn affine2(&mut self, x: Var, w: Var, h: Var, u: Var, b: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(b);
        if bv.rank() != 1 {
            return Err(Error::Shape(format!(
                "affine bias must be rank 1, got {:?}",
                bv.shape()
            )));
        }
        let v = xv
            .matmul(self.value(w))?
            .add(&self.value(h).matmul(self.value(u))?)?
            .add(bv)?;
        let g = self.ng(x) || self.ng(w) || self.ng(h) || self.ng(u) || self.ng(b);
        Ok(self.push(v, g, Op::Affine2 { x, w, h, u, b }))
    }

    /// Spectral graph convolution `s · h · theta` applied to every `[N, K]`
    /// slice of `h`; the propagation matrix is a constant of the layer.
    pub fn graph_conv(&mut self, s: &Tensor, h: Var, theta: Var) -> Result<Var> {
        let (v, mixed) = graph_conv_forward(s, self.value(h), self.value(theta))?;
        let g = self.ng(h) || self.ng(theta);
        Ok(self.push(
            v,
            g,
            Op::GraphConv {
                s: s.clone(),
                h,
                theta,
                mixed,
            },
        ))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).sigmoid();
        let g = self.ng(a);
        Ok(self.push(v, g, Op::Sigmoid(a)))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).tanh();
        let g = self.ng(a);
        Ok(self.push(v, g, Op::Tanh(a)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).relu();
        let g = self.ng(a);
        Ok(self.push(v, g, Op::Relu(a)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).exp();
        let g = self.ng(a);
        Ok(self.push(v, g, Op::Exp(a)))
    }

    /// Natural logarithm; the input must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).min_value() <= 0.0 {
            return Err(Error::Domain(
                "log requires strictly positive inputs".into(),
            ));
        }
        let v = self.value(a).ln();
        let g = self.ng(a);
        Ok(self.push(v, g, Op::Log(a)))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).softplus();
        let g = self.ng(a);
        Ok(self.push(v, g, Op::Softplus(a)))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).square();
        let g = self.ng(a);
        Ok(self.push(v, g, Op::Square(a)))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).neg();
        let g = self.ng(a);
        Ok(self.push(v, g, Op::Neg(a)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).scale(c);
        let g = self.ng(a);
        Ok(self.push(v, g, Op::Scale(a, c)))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).add_scalar(c);
        let g = self.ng(a);
        Ok(self.push(v, g, Op::AddScalar(a)))
    }

    /// Clamps values to `[lo, hi]`; gradients pass through unchanged inside
    /// the range (boundaries included) and are cut outside it.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo <= hi) {
            return Err(Error::Domain(format!("invalid clamp range [{lo}, {hi}]")));
        }
        let v = self.value(a).clamp(lo, hi);
        let g = self.ng(a);
        Ok(self.push(v, g, Op::Clamp(a, lo, hi)))
    }

    /// Sum over all elements, producing a rank-0 scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        let g = self.ng(a);
        Ok(self.push(v, g, Op::Sum(a)))
    }

    /// Mean over all elements, producing a rank-0 scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).mean());
        let g = self.ng(a);
        Ok(self.push(v, g, Op::Mean(a)))
    }

    /// Stacks equally-shaped vars along a new leading axis.
    pub fn stack(&mut self, vars: &[Var]) -> Result<Var> {
        let tensors: Vec<Tensor> = vars.iter().map(|v| self.value(*v).clone()).collect();
        let v = stack(&tensors)?;
        let g = vars.iter().any(|v| self.ng(*v));
        Ok(self.push(v, g, Op::Stack(vars.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        let g = self.ng(a);
        Ok(self.push(v, g, Op::Reshape(a)))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let v = self.value(a).permute(perm)?;
        let g = self.ng(a);
        Ok(self.push(v, g, Op::Permute(a, perm.to_vec())))
    }

    /// Columns `[start, start+width)` of a rank-2 var.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rank() != 2 {
            return Err(Error::Shape(format!(
                "slice_cols requires a rank-2 input, got {:?}",
                av.shape()
            )));
        }
        let (rows, cols) = (av.shape()[0], av.shape()[1]);
        if start + width > cols {
            return Err(Error::Shape(format!(
                "column range {}..{} out of bounds for {} columns",
                start,
                start + width,
                cols
            )));
        }
        let mut out = Vec::with_capacity(rows * width);
        let data = av.data();
        for r in 0..rows {
            out.extend_from_slice(&data[r * cols + start..r * cols + start + width]);
        }
        let v = Tensor::new(vec![rows, width], out)?;
        let g = self.ng(a);
        Ok(self.push(v, g, Op::SliceCols(a, start, width)))
    }

    /// Reverse sweep from a one-element root.
    pub fn backward(&self, root: Var) -> Result<Grads> {
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must hold exactly one element, shape is {:?}",
                root_value.shape()
            )));
        }
        if !self.nodes[root.0].needs_grad {
            return Err(Error::Contract(
                "backward root does not depend on any parameter".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(root_value.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.apply_vjp(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: Var, delta: Tensor) -> Result<()> {
        if !self.nodes[target.0].needs_grad {
            return Ok(());
        }
        let slot = &mut grads[target.0];
        *slot = Some(match slot.take() {
            Some(existing) => existing.add(&delta)?,
            None => delta,
        });
        Ok(())
    }

    /// Reduces a gradient computed in the broadcast output shape back to the
    /// operand's own shape.
    fn reduce_to(&self, grad: Tensor, operand: Var) -> Result<Tensor> {
        grad.sum_leading_to(self.value(operand).shape())
    }

    fn apply_vjp(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &self.nodes[idx].op {
            Op::Input | Op::Param => {}
            Op::Add(a, b) => {
                if self.ng(*a) {
                    let da = self.reduce_to(g.clone(), *a)?;
                    self.accumulate(grads, *a, da)?;
                }
                if self.ng(*b) {
                    let db = self.reduce_to(g.clone(), *b)?;
                    self.accumulate(grads, *b, db)?;
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    let da = self.reduce_to(g.clone(), *a)?;
                    self.accumulate(grads, *a, da)?;
                }
                if self.ng(*b) {
                    let db = self.reduce_to(g.neg(), *b)?;
                    self.accumulate(grads, *b, db)?;
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let da = self.reduce_to(g.mul(self.value(*b))?, *a)?;
                    self.accumulate(grads, *a, da)?;
                }
                if self.ng(*b) {
                    let db = self.reduce_to(g.mul(self.value(*a))?, *b)?;
                    self.accumulate(grads, *b, db)?;
                }
            }
            Op::Matmul(a, b) => {
                if self.ng(*a) {
                    let da = gemm(g, false, self.value(*b), true)?;
                    self.accumulate(grads, *a, da)?;
                }
                if self.ng(*b) {
                    let db = gemm(self.value(*a), true, g, false)?;
                    self.accumulate(grads, *b, db)?;
                }
            }
            Op::Affine2 { x, w, h, u, b } => {
                if self.ng(*x) {
                    let dx = gemm(g, false, self.value(*w), true)?;
                    self.accumulate(grads, *x, dx)?;
                }
                if self.ng(*w) {
                    let dw = gemm(self.value(*x), true, g, false)?;
                    self.accumulate(grads, *w, dw)?;
                }
                if self.ng(*h) {
                    let dh = gemm(g, false, self.value(*u), true)?;
                    self.accumulate(grads, *h, dh)?;
                }
                if self.ng(*u) {
                    let du = gemm(self.value(*h), true, g, false)?;
                    self.accumulate(grads, *u, du)?;
                }
                if self.ng(*b) {
                    let db = self.reduce_to(g.clone(), *b)?;
                    self.accumulate(grads, *b, db)?;
                }
            }
            Op::GraphConv { s, h, theta, mixed } => {
                let hv = self.value(*h);
                let rank = hv.rank();
                let n = hv.shape()[rank - 2];
                let k = hv.shape()[rank - 1];
                let f = self.value(*theta).shape()[1];
                let m: usize = hv.shape()[..rank - 2].iter().product();
                let g2 = g.reshape(&[m * n, f])?;
                if self.ng(*theta) {
                    let mixed2 = mixed.reshape(&[m * n, k])?;
                    let dtheta = gemm(&mixed2, true, &g2, false)?;
                    self.accumulate(grads, *theta, dtheta)?;
                }
                if self.ng(*h) {
                    // d(mixed) = g · thetaᵀ, then un-mix each slice with sᵀ.
                    let dmixed = gemm(&g2, false, self.value(*theta), true)?;
                    let dm = dmixed.data();
                    let mut dh = vec![0.0; m * n * k];
                    for i in 0..m {
                        unsafe {
                            matrixmultiply::dgemm(
                                n,
                                n,
                                k,
                                1.0,
                                s.data().as_ptr(),
                                1,
                                n as isize,
                                dm[i * n * k..].as_ptr(),
                                k as isize,
                                1,
                                0.0,
                                dh[i * n * k..].as_mut_ptr(),
                                k as isize,
                                1,
                            );
                        }
                    }
                    self.accumulate(grads, *h, Tensor::new(hv.shape().to_vec(), dh)?)?;
                }
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[idx].value;
                let local = y.zip(&y.square(), |s, s2| s - s2)?;
                self.accumulate(grads, *a, g.mul(&local)?)?;
            }
            Op::Tanh(a) => {
                let y = &self.nodes[idx].value;
                let local = y.square().map(|t2| 1.0 - t2);
                self.accumulate(grads, *a, g.mul(&local)?)?;
            }
            Op::Relu(a) => {
                let mask = self.value(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                self.accumulate(grads, *a, g.mul(&mask)?)?;
            }
            Op::Exp(a) => {
                let y = &self.nodes[idx].value;
                self.accumulate(grads, *a, g.mul(y)?)?;
            }
            Op::Log(a) => {
                let local = self.value(*a).map(|x| 1.0 / x);
                self.accumulate(grads, *a, g.mul(&local)?)?;
            }
            Op::Softplus(a) => {
                let local = self.value(*a).sigmoid();
                self.accumulate(grads, *a, g.mul(&local)?)?;
            }
            Op::Square(a) => {
                let local = self.value(*a).scale(2.0);
                self.accumulate(grads, *a, g.mul(&local)?)?;
            }
            Op::Neg(a) => {
                self.accumulate(grads, *a, g.neg())?;
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, g.scale(*c))?;
            }
            Op::AddScalar(a) => {
                self.accumulate(grads, *a, g.clone())?;
            }
            Op::Clamp(a, lo, hi) => {
                let mask = self
                    .value(*a)
                    .map(|x| if x >= *lo && x <= *hi { 1.0 } else { 0.0 });
                self.accumulate(grads, *a, g.mul(&mask)?)?;
            }
            Op::Sum(a) => {
                let da = Tensor::full(self.value(*a).shape(), g.data()[0]);
                self.accumulate(grads, *a, da)?;
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let da = Tensor::full(av.shape(), g.data()[0] / av.len() as f64);
                self.accumulate(grads, *a, da)?;
            }
            Op::Stack(vars) => {
                for (i, v) in vars.iter().enumerate() {
                    if self.ng(*v) {
                        self.accumulate(grads, *v, g.index_axis0(i)?)?;
                    }
                }
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, g.reshape(self.value(*a).shape())?)?;
            }
            Op::Permute(a, perm) => {
                let mut inverse = vec![0usize; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                self.accumulate(grads, *a, g.permute(&inverse)?)?;
            }
            Op::SliceCols(a, start, width) => {
                let av = self.value(*a);
                let (rows, cols) = (av.shape()[0], av.shape()[1]);
                let mut da = vec![0.0; rows * cols];
                let gd = g.data();
                for r in 0..rows {
                    for j in 0..*width {
                        da[r * cols + start + j] = gd[r * width + j];
                    }
                }
                self.accumulate(grads, *a, Tensor::new(vec![rows, cols], da)?)?;
            }
        }
        Ok(())
    }
}
