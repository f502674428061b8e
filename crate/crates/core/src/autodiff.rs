//! A small tape-based reverse-mode differentiation engine over dense `f64`
//! tensors.
//!
//! Operations are recorded on a [`Tape`] as they are evaluated; calling
//! [`Tape::backward`] on a scalar node then walks the tape in reverse and
//! accumulates vector-Jacobian products into every node that depends on a
//! parameter. The vocabulary is exactly what the denoiser network and the
//! spectral losses need: dilated 1-D convolution, affine maps, elementwise
//! arithmetic and nonlinearities, reductions, finite differences along an axis,
//! and windowed DFT framing.
//!
//! ```
//! use wavebridge::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let p = tape.param(Tensor::vector(vec![3.0]));
//! let sq = tape.square(p);
//! let loss = tape.mean(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(p).unwrap(), &[6.0]);
//! ```
//!
//! The network forward pass is written once against the [`Graph`] trait and
//! runs either on the tape (training) or on [`Eager`] (inference, no
//! intermediate storage).

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::dsp::{fft, hann_window, num_frames, reflect_pad, reflect_pad_adjoint, StftConfig};
use crate::error::{Error, Result};

/// Dense row-major tensor. A scalar has an empty shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    /// `[rows, cols]` matrix.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.data.len(), other.data.len(), "elementwise operands differ in size");
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Sigmoid(Var),
    Square(Var),
    Abs(Var),
    Log(Var),
    Sqrt(Var),
    AntiWrap(Var),
    Atan2(Var, Var),
    Mean(Var),
    Sum(Var),
    Reshape(Var),
    Rows(Var, usize),
    Diff(Var, Axis),
    Conv1d { x: Var, w: Var, b: Option<Var>, dilation: usize },
    ChannelBias(Var, Var),
    Affine { w: Var, x: Var, b: Var },
    Stft(Var, StftConfig),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording of a computation for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Accumulated gradients, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`, or `None` if `v` does not influence it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Like [`get`](Self::get) but yields zeros for unreachable nodes.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; len])
    }
}

pub fn anti_wrap(x: f64) -> f64 {
    (x - 2.0 * PI * (x / (2.0 * PI)).round()).abs()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(value, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let value = self.value(a).zip(self.value(b), f);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| k * x, Op::Scale(a, k))
    }

    /// `a + k`.
    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x + k, Op::Offset(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    /// `|x − 2π·round(x/2π)|`, the distance to the nearest multiple of 2π.
    pub fn anti_wrap(&mut self, a: Var) -> Var {
        self.unary(a, anti_wrap, Op::AntiWrap(a))
    }

    /// Elementwise `atan2(y, x)`.
    pub fn atan2(&mut self, y: Var, x: Var) -> Var {
        self.binary(y, x, f64::atan2, Op::Atan2(y, x))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.data.iter().sum::<f64>() / v.len() as f64;
        let ng = self.ng(a);
        self.push(Tensor::scalar(m), Op::Mean(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum::<f64>();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = Tensor::new(shape, self.value(a).data.clone())?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::Reshape(a), ng))
    }

    /// Slice `[start, end)` along the leading dimension.
    pub fn rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = kernels::rows(self.value(a), start, end);
        let ng = self.ng(a);
        self.push(value, Op::Rows(a, start), ng)
    }

    /// First difference of a matrix along `axis` (`out[i] = a[i+1] − a[i]`).
    pub fn diff(&mut self, a: Var, axis: Axis) -> Var {
        let v = self.value(a);
        let (r, c) = (v.dim(0), v.dim(1));
        let value = match axis {
            Axis::Rows => {
                let mut out = Vec::with_capacity((r - 1) * c);
                for i in 0..r - 1 {
                    for j in 0..c {
                        out.push(v.data[(i + 1) * c + j] - v.data[i * c + j]);
                    }
                }
                Tensor { shape: vec![r - 1, c], data: out }
            }
            Axis::Cols => {
                let mut out = Vec::with_capacity(r * (c - 1));
                for i in 0..r {
                    for j in 0..c - 1 {
                        out.push(v.data[i * c + j + 1] - v.data[i * c + j]);
                    }
                }
                Tensor { shape: vec![r, c - 1], data: out }
            }
        };
        let ng = self.ng(a);
        self.push(value, Op::Diff(a, axis), ng)
    }

    /// Dilated "same" convolution: `x` is `[C_in, L]`, `w` is
    /// `[C_out, C_in, K]` with odd `K`, `b` is `[C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, dilation: usize) -> Var {
        let value = kernels::conv1d(self.value(x), self.value(w), b.map(|b| self.value(b)), dilation);
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(value, Op::Conv1d { x, w, b, dilation }, ng)
    }

    /// Adds `b[c]` to every element of row `c` of `x` (`[C, L]`).
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Var {
        let value = kernels::channel_bias(self.value(x), self.value(b));
        let ng = self.ng(x) || self.ng(b);
        self.push(value, Op::ChannelBias(x, b), ng)
    }

    /// `w·x + b` for a vector `x`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Var {
        let value = kernels::affine(self.value(w), self.value(x), self.value(b));
        let ng = self.ng(w) || self.ng(x) || self.ng(b);
        self.push(value, Op::Affine { w, x, b }, ng)
    }

    /// Hann-windowed, reflect-padded DFT frames of a 1-D signal. The output
    /// has shape `[2, frames, bins]`: real parts, then imaginary parts.
    pub fn stft(&mut self, x: Var, cfg: StftConfig) -> Result<Var> {
        let value = kernels::stft(self.value(x), &cfg)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Stft(x, cfg), ng))
    }

    /// Mean squared error between two equally sized nodes.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.square(d);
        self.mean(sq)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, contrib: &mut dyn FnMut(&mut [f64])| {
            if !self.ng(v) {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.value(v).len()]);
            contrib(slot);
        };
        let val = |v: Var| &self.value(v).data;
        let out = &node.value.data;
        match node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(a, &mut |s| axpy(s, g, 1.0));
                acc(b, &mut |s| axpy(s, g, 1.0));
            }
            Op::Sub(a, b) => {
                acc(a, &mut |s| axpy(s, g, 1.0));
                acc(b, &mut |s| axpy(s, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(a), val(b));
                acc(a, &mut |s| s.iter_mut().zip(g).zip(vb).for_each(|((s, g), y)| *s += g * y));
                acc(b, &mut |s| s.iter_mut().zip(g).zip(va).for_each(|((s, g), x)| *s += g * x));
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(a), val(b));
                acc(a, &mut |s| s.iter_mut().zip(g).zip(vb).for_each(|((s, g), y)| *s += g / y));
                acc(b, &mut |s| {
                    for (((s, g), x), y) in s.iter_mut().zip(g).zip(va).zip(vb) {
                        *s -= g * x / (y * y);
                    }
                });
            }
            Op::Scale(a, k) => acc(a, &mut |s| axpy(s, g, k)),
            Op::Offset(a) | Op::Reshape(a) => acc(a, &mut |s| axpy(s, g, 1.0)),
            Op::Tanh(a) => acc(a, &mut |s| {
                s.iter_mut().zip(g).zip(out).for_each(|((s, g), y)| *s += g * (1.0 - y * y))
            }),
            Op::Sigmoid(a) => acc(a, &mut |s| {
                s.iter_mut().zip(g).zip(out).for_each(|((s, g), y)| *s += g * y * (1.0 - y))
            }),
            Op::Square(a) => {
                let va = val(a);
                acc(a, &mut |s| s.iter_mut().zip(g).zip(va).for_each(|((s, g), x)| *s += 2.0 * g * x))
            }
            Op::Abs(a) => {
                let va = val(a);
                acc(a, &mut |s| s.iter_mut().zip(g).zip(va).for_each(|((s, g), x)| *s += g * sign(*x)))
            }
            Op::AntiWrap(a) => {
                let va = val(a);
                acc(a, &mut |s| {
                    for ((s, g), &x) in s.iter_mut().zip(g).zip(va) {
                        *s += g * sign(x - 2.0 * PI * (x / (2.0 * PI)).round());
                    }
                })
            }
            Op::Log(a) => {
                let va = val(a);
                acc(a, &mut |s| s.iter_mut().zip(g).zip(va).for_each(|((s, g), x)| *s += g / x))
            }
            Op::Sqrt(a) => acc(a, &mut |s| {
                for ((s, g), &y) in s.iter_mut().zip(g).zip(out) {
                    if y > 0.0 {
                        *s += g / (2.0 * y);
                    }
                }
            }),
            Op::Atan2(y, x) => {
                let (vy, vx) = (val(y), val(x));
                acc(y, &mut |s| {
                    for (((s, g), &a), &b) in s.iter_mut().zip(g).zip(vy).zip(vx) {
                        let r2 = a * a + b * b;
                        if r2 > 0.0 {
                            *s += g * b / r2;
                        }
                    }
                });
                acc(x, &mut |s| {
                    for (((s, g), &a), &b) in s.iter_mut().zip(g).zip(vy).zip(vx) {
                        let r2 = a * a + b * b;
                        if r2 > 0.0 {
                            *s -= g * a / r2;
                        }
                    }
                });
            }
            Op::Mean(a) => {
                let n = self.value(a).len() as f64;
                acc(a, &mut |s| s.iter_mut().for_each(|s| *s += g[0] / n))
            }
            Op::Sum(a) => acc(a, &mut |s| s.iter_mut().for_each(|s| *s += g[0])),
            Op::Rows(a, start) => {
                let stride: usize = self.value(a).shape[1..].iter().product();
                acc(a, &mut |s| axpy(&mut s[start * stride..start * stride + g.len()], g, 1.0))
            }
            Op::Diff(a, axis) => {
                let shape = &self.value(a).shape;
                let (r, c) = (shape[0], shape[1]);
                acc(a, &mut |s| match axis {
                    Axis::Rows => {
                        for i in 0..r - 1 {
                            for j in 0..c {
                                let gv = g[i * c + j];
                                s[(i + 1) * c + j] += gv;
                                s[i * c + j] -= gv;
                            }
                        }
                    }
                    Axis::Cols => {
                        for i in 0..r {
                            for j in 0..c - 1 {
                                let gv = g[i * (c - 1) + j];
                                s[i * c + j + 1] += gv;
                                s[i * c + j] -= gv;
                            }
                        }
                    }
                })
            }
            Op::Conv1d { x, w, b, dilation } => {
                let (vx, vw) = (self.value(x), self.value(w));
                if self.ng(x) {
                    let gx = kernels::conv1d_grad_input(vx, vw, g, dilation);
                    acc(x, &mut |s| axpy(s, &gx, 1.0));
                }
                if self.ng(w) {
                    let gw = kernels::conv1d_grad_weight(vx, vw, g, dilation);
                    acc(w, &mut |s| axpy(s, &gw, 1.0));
                }
                if let Some(b) = b {
                    let len = vx.dim(1);
                    acc(b, &mut |s| {
                        for (o, s) in s.iter_mut().enumerate() {
                            *s += g[o * len..(o + 1) * len].iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::ChannelBias(x, b) => {
                acc(x, &mut |s| axpy(s, g, 1.0));
                let len = self.value(x).dim(1);
                acc(b, &mut |s| {
                    for (c, s) in s.iter_mut().enumerate() {
                        *s += g[c * len..(c + 1) * len].iter().sum::<f64>();
                    }
                });
            }
            Op::Affine { w, x, b } => {
                let (vw, vx) = (self.value(w), self.value(x));
                let cols = vw.dim(1);
                acc(w, &mut |s| {
                    for (row, gr) in s.chunks_mut(cols).zip(g) {
                        axpy(row, &vx.data, *gr);
                    }
                });
                acc(x, &mut |s| {
                    for (wr, gr) in vw.data.chunks(cols).zip(g) {
                        axpy(s, wr, *gr);
                    }
                });
                acc(b, &mut |s| axpy(s, g, 1.0));
            }
            Op::Stft(x, cfg) => {
                let gx = kernels::stft_adjoint(self.value(x).len(), g, &cfg);
                acc(x, &mut |s| axpy(s, &gx, 1.0));
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

/// The subset of operations used by network forward passes, implemented both
/// by the recording [`Tape`] and by the non-recording [`Eager`] evaluator.
pub trait Graph {
    type Var: Clone;

    fn leaf(&mut self, t: Tensor, trainable: bool) -> Self::Var;
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var;
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var;
    fn scale(&mut self, a: &Self::Var, k: f64) -> Self::Var;
    fn tanh(&mut self, a: &Self::Var) -> Self::Var;
    fn sigmoid(&mut self, a: &Self::Var) -> Self::Var;
    fn rows(&mut self, a: &Self::Var, start: usize, end: usize) -> Self::Var;
    fn conv1d(&mut self, x: &Self::Var, w: &Self::Var, b: Option<&Self::Var>, dilation: usize) -> Self::Var;
    fn channel_bias(&mut self, x: &Self::Var, b: &Self::Var) -> Self::Var;
    fn affine(&mut self, w: &Self::Var, x: &Self::Var, b: &Self::Var) -> Self::Var;
    fn tensor<'a>(&'a self, v: &'a Self::Var) -> &'a Tensor;
}

impl Graph for Tape {
    type Var = Var;

    fn leaf(&mut self, t: Tensor, trainable: bool) -> Var {
        if trainable {
            self.param(t)
        } else {
            self.constant(t)
        }
    }
    fn add(&mut self, a: &Var, b: &Var) -> Var {
        Tape::add(self, *a, *b)
    }
    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        Tape::mul(self, *a, *b)
    }
    fn scale(&mut self, a: &Var, k: f64) -> Var {
        Tape::scale(self, *a, k)
    }
    fn tanh(&mut self, a: &Var) -> Var {
        Tape::tanh(self, *a)
    }
    fn sigmoid(&mut self, a: &Var) -> Var {
        Tape::sigmoid(self, *a)
    }
    fn rows(&mut self, a: &Var, start: usize, end: usize) -> Var {
        Tape::rows(self, *a, start, end)
    }
    fn conv1d(&mut self, x: &Var, w: &Var, b: Option<&Var>, dilation: usize) -> Var {
        Tape::conv1d(self, *x, *w, b.copied(), dilation)
    }
    fn channel_bias(&mut self, x: &Var, b: &Var) -> Var {
        Tape::channel_bias(self, *x, *b)
    }
    fn affine(&mut self, w: &Var, x: &Var, b: &Var) -> Var {
        Tape::affine(self, *w, *x, *b)
    }
    fn tensor<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        self.value(*v)
    }
}

/// Direct evaluation without recording.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Graph for Eager {
    type Var = std::rc::Rc<Tensor>;

    fn leaf(&mut self, t: Tensor, _trainable: bool) -> Self::Var {
        t.into()
    }
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var {
        a.zip(b, |x, y| x + y).into()
    }
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var {
        a.zip(b, |x, y| x * y).into()
    }
    fn scale(&mut self, a: &Self::Var, k: f64) -> Self::Var {
        a.map(|x| k * x).into()
    }
    fn tanh(&mut self, a: &Self::Var) -> Self::Var {
        a.map(f64::tanh).into()
    }
    fn sigmoid(&mut self, a: &Self::Var) -> Self::Var {
        a.map(sigmoid).into()
    }
    fn rows(&mut self, a: &Self::Var, start: usize, end: usize) -> Self::Var {
        kernels::rows(a, start, end).into()
    }
    fn conv1d(&mut self, x: &Self::Var, w: &Self::Var, b: Option<&Self::Var>, dilation: usize) -> Self::Var {
        kernels::conv1d(x, w, b.map(|b| &**b), dilation).into()
    }
    fn channel_bias(&mut self, x: &Self::Var, b: &Self::Var) -> Self::Var {
        kernels::channel_bias(x, b).into()
    }
    fn affine(&mut self, w: &Self::Var, x: &Self::Var, b: &Self::Var) -> Self::Var {
        kernels::affine(w, x, b).into()
    }
    fn tensor<'a>(&'a self, v: &'a Self::Var) -> &'a Tensor {
        v
    }
}

mod kernels {
    use super::*;

    pub(super) fn rows(a: &Tensor, start: usize, end: usize) -> Tensor {
        assert!(start < end && end <= a.shape[0], "row slice {start}..{end} out of range");
        let stride: usize = a.shape[1..].iter().product();
        let mut shape = a.shape.clone();
        shape[0] = end - start;
        Tensor {
            shape,
            data: a.data[start * stride..end * stride].to_vec(),
        }
    }

    fn tap_shift(k: usize, kernel: usize, dilation: usize) -> isize {
        (k as isize - (kernel as isize - 1) / 2) * dilation as isize
    }

    /// Index range `n` such that `n + shift` lies in `[0, len)`.
    fn valid(len: usize, shift: isize) -> (usize, usize) {
        let lo = (-shift).max(0) as usize;
        let hi = (len as isize - shift).clamp(0, len as isize) as usize;
        (lo.min(hi), hi)
    }

    pub(super) fn conv1d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, dilation: usize) -> Tensor {
        let (cin, len) = (x.dim(0), x.dim(1));
        let (cout, wcin, kernel) = (w.dim(0), w.dim(1), w.dim(2));
        assert_eq!(cin, wcin, "conv1d channel mismatch");
        assert!(kernel % 2 == 1, "conv1d kernel must be odd");
        let mut out = vec![0.0; cout * len];
        for o in 0..cout {
            let row = &mut out[o * len..(o + 1) * len];
            if let Some(b) = b {
                row.fill(b.data[o]);
            }
            for i in 0..cin {
                let xr = &x.data[i * len..(i + 1) * len];
                for k in 0..kernel {
                    let wv = w.data[(o * cin + i) * kernel + k];
                    let shift = tap_shift(k, kernel, dilation);
                    let (lo, hi) = valid(len, shift);
                    let src = &xr[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                    for (r, s) in row[lo..hi].iter_mut().zip(src) {
                        *r += wv * s;
                    }
                }
            }
        }
        Tensor { shape: vec![cout, len], data: out }
    }

    pub(super) fn conv1d_grad_input(x: &Tensor, w: &Tensor, g: &[f64], dilation: usize) -> Vec<f64> {
        let (cin, len) = (x.dim(0), x.dim(1));
        let (cout, kernel) = (w.dim(0), w.dim(2));
        let mut gx = vec![0.0; cin * len];
        for o in 0..cout {
            let gr = &g[o * len..(o + 1) * len];
            for i in 0..cin {
                let dst = &mut gx[i * len..(i + 1) * len];
                for k in 0..kernel {
                    let wv = w.data[(o * cin + i) * kernel + k];
                    let shift = tap_shift(k, kernel, dilation);
                    let (lo, hi) = valid(len, shift);
                    let d = &mut dst[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                    for (d, gv) in d.iter_mut().zip(&gr[lo..hi]) {
                        *d += wv * gv;
                    }
                }
            }
        }
        gx
    }

    pub(super) fn conv1d_grad_weight(x: &Tensor, w: &Tensor, g: &[f64], dilation: usize) -> Vec<f64> {
        let (cin, len) = (x.dim(0), x.dim(1));
        let (cout, kernel) = (w.dim(0), w.dim(2));
        let mut gw = vec![0.0; w.len()];
        for o in 0..cout {
            let gr = &g[o * len..(o + 1) * len];
            for i in 0..cin {
                let xr = &x.data[i * len..(i + 1) * len];
                for k in 0..kernel {
                    let shift = tap_shift(k, kernel, dilation);
                    let (lo, hi) = valid(len, shift);
                    let src = &xr[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                    gw[(o * cin + i) * kernel + k] = gr[lo..hi].iter().zip(src).map(|(a, b)| a * b).sum();
                }
            }
        }
        gw
    }

    pub(super) fn channel_bias(x: &Tensor, b: &Tensor) -> Tensor {
        let (c, len) = (x.dim(0), x.dim(1));
        assert_eq!(b.len(), c, "channel bias size mismatch");
        let mut out = x.clone();
        for ch in 0..c {
            out.data[ch * len..(ch + 1) * len].iter_mut().for_each(|v| *v += b.data[ch]);
        }
        out
    }

    pub(super) fn affine(w: &Tensor, x: &Tensor, b: &Tensor) -> Tensor {
        let (rows, cols) = (w.dim(0), w.dim(1));
        assert_eq!(x.len(), cols, "affine input size mismatch");
        let data = (0..rows)
            .map(|r| b.data[r] + w.data[r * cols..(r + 1) * cols].iter().zip(&x.data).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        Tensor { shape: vec![rows], data }
    }

    pub(super) fn stft(x: &Tensor, cfg: &StftConfig) -> Result<Tensor> {
        let n = cfg.fft_size;
        if x.len() <= cfg.pad() || x.len() < n {
            return Err(Error::invalid(format!(
                "signal of {} samples is too short for a {n}-point frame",
                x.len()
            )));
        }
        let frames = num_frames(x.len(), cfg);
        let bins = cfg.bins();
        let padded = reflect_pad(&x.data, cfg.pad());
        let window = hann_window(n);
        let plan = fft::forward(n);
        let mut data = vec![0.0; 2 * frames * bins];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for f in 0..frames {
            let seg = &padded[f * cfg.hop..f * cfg.hop + n];
            for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&window) {
                *b = Complex64::new(s * w, 0.0);
            }
            plan.process(&mut buf);
            for k in 0..bins {
                data[f * bins + k] = buf[k].re;
                data[frames * bins + f * bins + k] = buf[k].im;
            }
        }
        Ok(Tensor { shape: vec![2, frames, bins], data })
    }

    pub(super) fn stft_adjoint(len: usize, g: &[f64], cfg: &StftConfig) -> Vec<f64> {
        let n = cfg.fft_size;
        let frames = num_frames(len, cfg);
        let bins = cfg.bins();
        let window = hann_window(n);
        let plan = fft::inverse(n);
        let mut gp = vec![0.0; len + 2 * cfg.pad()];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for f in 0..frames {
            buf.fill(Complex64::new(0.0, 0.0));
            for k in 0..bins {
                buf[k] = Complex64::new(g[f * bins + k], g[frames * bins + f * bins + k]);
            }
            // Σ_k (G_re + i·G_im)·e^{+i2πkn/N}, real part
            plan.process(&mut buf);
            let dst = &mut gp[f * cfg.hop..f * cfg.hop + n];
            for ((d, b), &w) in dst.iter_mut().zip(&buf).zip(&window) {
                *d += w * b.re;
            }
        }
        reflect_pad_adjoint(&gp, len, cfg.pad())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    /// Checks the tape gradient of `build` against central differences on
    /// every coordinate of every input. `build` must rebuild the graph from
    /// scratch from the given input tensors and return a scalar node.
    fn check_grads(inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Var, step: f64) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        let grads = tape.backward(loss).unwrap();
        let eval = |ins: &[Tensor]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ins.iter().map(|x| t.constant(x.clone())).collect();
            let l = build(&mut t, &vs);
            t.value(l).item()
        };
        let mut worst = 0.0_f64;
        for (i, input) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[i], input.len());
            for (j, &a) in analytic.iter().enumerate() {
                let mut plus = inputs.clone();
                plus[i].data[j] += step;
                let mut minus = inputs.clone();
                minus[i].data[j] -= step;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
                let denom = numeric.abs().max(a.abs()).max(1e-6);
                worst = worst.max((numeric - a).abs() / denom);
            }
        }
        worst
    }

    #[test]
    fn scalar_examples() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::vector(vec![3.0]));
        let s = tape.square(p);
        let l = tape.mean(s);
        assert_eq!(tape.backward(l).unwrap().get(p).unwrap(), &[6.0]);

        let mut tape = Tape::new();
        let p = tape.param(Tensor::vector(vec![0.0]));
        let t = tape.tanh(p);
        let l = tape.sum(t);
        assert_eq!(tape.backward(l).unwrap().get(p).unwrap(), &[1.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.backward(p).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::vector(vec![3.0, 4.0]));
        let m = tape.mul(p, c);
        let l = tape.sum(m);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(p).unwrap(), &[3.0, 4.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn anti_wrap_values() {
        assert_eq!(anti_wrap(0.0), 0.0);
        assert!(anti_wrap(2.0 * PI) < 1e-15);
        assert!((anti_wrap(PI) - PI).abs() < 1e-15);
        assert!((anti_wrap(-PI) - PI).abs() < 1e-15);
        assert!((anti_wrap(3.0 * PI) - PI).abs() < 1e-12);
        assert!((anti_wrap(0.1 + 4.0 * PI) - 0.1).abs() < 1e-12);
    }

    // Randomized finite-difference checks, 20 trials per op.
    macro_rules! fd_unary {
        ($name:ident, $method:ident, $lo:expr, $hi:expr) => {
            #[test]
            fn $name() {
                let mut rng = ChaCha8Rng::seed_from_u64(stringify!($name).len() as u64);
                for _ in 0..20 {
                    let x = random(&mut rng, vec![7], $lo, $hi);
                    let w = random(&mut rng, vec![7], -1.0, 1.0);
                    let err = check_grads(
                        vec![x],
                        |t, v| {
                            let y = t.$method(v[0]);
                            let wc = t.constant(w.clone());
                            let m = t.mul(y, wc);
                            t.sum(m)
                        },
                        1e-6,
                    );
                    assert!(err < 1e-4, "{}: {err}", stringify!($method));
                }
            }
        };
    }

    fd_unary!(fd_tanh, tanh, -2.0, 2.0);
    fd_unary!(fd_sigmoid, sigmoid, -4.0, 4.0);
    fd_unary!(fd_square, square, -2.0, 2.0);
    fd_unary!(fd_abs, abs, 0.1, 2.0);
    fd_unary!(fd_abs_negative, abs, -2.0, -0.1);
    fd_unary!(fd_log, log, 0.2, 3.0);
    fd_unary!(fd_sqrt, sqrt, 0.2, 3.0);
    fd_unary!(fd_anti_wrap, anti_wrap, 0.2, 2.9);
    fd_unary!(fd_anti_wrap_far, anti_wrap, 7.0, 9.0);

    #[test]
    fn fd_binary_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random(&mut rng, vec![5], -2.0, 2.0);
            let b = random(&mut rng, vec![5], 0.5, 2.0);
            let err = check_grads(
                vec![a, b],
                |t, v| {
                    let s = t.add(v[0], v[1]);
                    let d = t.sub(v[0], v[1]);
                    let m = t.mul(s, d);
                    let q = t.div(m, v[1]);
                    let at = t.atan2(v[0], q);
                    let sc = t.scale(at, 1.7);
                    let o = t.offset(sc, 0.3);
                    let sq = t.square(o);
                    t.mean(sq)
                },
                1e-6,
            );
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn fd_conv_and_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..20 {
            let dilation = 1 + trial % 4;
            let x = random(&mut rng, vec![3, 17], -1.0, 1.0);
            let w = random(&mut rng, vec![4, 3, 3], -1.0, 1.0);
            let b = random(&mut rng, vec![4], -1.0, 1.0);
            let cb = random(&mut rng, vec![4], -1.0, 1.0);
            let err = check_grads(
                vec![x, w, b, cb],
                move |t, v| {
                    let y = t.conv1d(v[0], v[1], Some(v[2]), dilation);
                    let y = t.channel_bias(y, v[3]);
                    let top = t.rows(y, 1, 3);
                    let th = t.tanh(top);
                    let sq = t.square(th);
                    t.mean(sq)
                },
                1e-6,
            );
            assert!(err < 1e-4, "dilation {dilation}: {err}");
        }
    }

    #[test]
    fn fd_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let w = random(&mut rng, vec![3, 4], -1.0, 1.0);
            let x = random(&mut rng, vec![4], -1.0, 1.0);
            let b = random(&mut rng, vec![3], -1.0, 1.0);
            let err = check_grads(
                vec![w, x, b],
                |t, v| {
                    let y = t.affine(v[0], v[1], v[2]);
                    let s = t.sigmoid(y);
                    t.sum(s)
                },
                1e-6,
            );
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn fd_diff_and_reshape() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for trial in 0..20 {
            let axis = if trial % 2 == 0 { Axis::Rows } else { Axis::Cols };
            let x = random(&mut rng, vec![12], -1.0, 1.0);
            let err = check_grads(
                vec![x],
                move |t, v| {
                    let m = t.reshape(v[0], vec![3, 4]).unwrap();
                    let d = t.diff(m, axis);
                    let sq = t.square(d);
                    t.sum(sq)
                },
                1e-6,
            );
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn fd_stft_framing() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let cfg = StftConfig::new(16).unwrap();
        for _ in 0..20 {
            let x = random(&mut rng, vec![40], -1.0, 1.0);
            let w = random(&mut rng, vec![2 * num_frames(40, &cfg) * cfg.bins()], -1.0, 1.0);
            let err = check_grads(
                vec![x],
                |t, v| {
                    let s = t.stft(v[0], cfg).unwrap();
                    let wc = t.constant(Tensor::new(t.value(s).shape().to_vec(), w.data().to_vec()).unwrap());
                    let m = t.mul(s, wc);
                    t.sum(m)
                },
                1e-6,
            );
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn stft_op_matches_dsp_stft() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x: Vec<f64> = (0..3000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cfg = StftConfig::new(512).unwrap();
        let reference = crate::dsp::stft(&x, &cfg).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(x));
        let s = tape.stft(v, cfg).unwrap();
        let out = tape.value(s);
        let half = reference.data.len();
        for (i, c) in reference.data.iter().enumerate() {
            assert!((out.data()[i] - c.re).abs() < 1e-9);
            assert!((out.data()[half + i] - c.im).abs() < 1e-9);
        }
    }

    #[test]
    fn eager_matches_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = random(&mut rng, vec![2, 30], -1.0, 1.0);
        let w = random(&mut rng, vec![4, 2, 3], -1.0, 1.0);
        let run = |g: &mut dyn FnMut(&Tensor, &Tensor) -> Tensor| g(&x, &w);
        let via_tape = run(&mut |x, w| {
            let mut t = Tape::new();
            let xv = Graph::leaf(&mut t, x.clone(), false);
            let wv = Graph::leaf(&mut t, w.clone(), true);
            let y = Graph::conv1d(&mut t, &xv, &wv, None, 2);
            let y = Graph::tanh(&mut t, &y);
            t.value(y).clone()
        });
        let via_eager = run(&mut |x, w| {
            let mut e = Eager;
            let xv = e.leaf(x.clone(), false);
            let wv = e.leaf(w.clone(), true);
            let y = e.conv1d(&xv, &wv, None, 2);
            (*e.tanh(&y)).clone()
        });
        assert_eq!(via_tape, via_eager);
    }
}
