//! Tensor-level reverse-mode automatic differentiation.
//!
//! A [`Tape`] records operations on flat `f64` buffers. Shapes are carried by
//! the caller: a matrix product is told its `(m, k, n)`, a row softmax its
//! `(rows, cols)`. Every node stores its forward value; [`Tape::backward`]
//! walks the tape in reverse and returns the adjoint of every node that
//! depends on a differentiable leaf.
//!
//! Non-smooth operations (ReLU, clamps, `abs`, min/max selection) fold their
//! branch decisions into [`Tape::branch_signature`]. Two evaluations with the
//! same signature are on the same smooth piece, which is what finite
//! difference checks need to know.
//!
//! Reductions run in a fixed order and matrix products are split into
//! fixed-size row chunks, so results are bit-identical for any thread count.

use rayon::prelude::*;
use std::sync::Arc;

/// Rows per parallel matrix-product chunk. Fixed so chunk boundaries do not
/// depend on the number of threads.
const ROW_CHUNK: usize = 256;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise maps with a known derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Relu,
    Softplus,
    Exp,
    Abs,
    /// `sqrt(x)` for `x > 0`, zero (with zero slope) otherwise.
    SqrtPos,
    Recip,
    /// sRGB opto-electronic transfer function.
    SrgbEncode,
    /// `x - sin(2πx)/2π`.
    SoftRound,
    /// Clamp to `[0, 1]`.
    Clamp01,
}

impl Unary {
    fn kinked(self) -> bool {
        matches!(self, Unary::Relu | Unary::Abs | Unary::SqrtPos | Unary::Clamp01)
    }

    /// Returns `(f(x), f'(x), branch)`.
    #[inline]
    fn eval(self, x: f64) -> (f64, f64, bool) {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    (x, 1.0, true)
                } else {
                    (0.0, 0.0, false)
                }
            }
            Unary::Softplus => (softplus(x), sigmoid(x), false),
            Unary::Exp => {
                let e = x.exp();
                (e, e, false)
            }
            Unary::Abs => {
                // subgradient 0 at the kink
                let d = if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                (x.abs(), d, x >= 0.0)
            }
            Unary::SqrtPos => {
                if x > 0.0 {
                    let s = x.sqrt();
                    (s, 0.5 / s, true)
                } else {
                    (0.0, 0.0, false)
                }
            }
            Unary::Recip => (1.0 / x, -1.0 / (x * x), false),
            Unary::SrgbEncode => (
                crate::camera::srgb_encode_value(x),
                crate::camera::srgb_encode_derivative(x),
                x <= crate::camera::SRGB_LINEAR_THRESHOLD,
            ),
            Unary::SoftRound => {
                let t = std::f64::consts::TAU * x;
                (x - t.sin() / std::f64::consts::TAU, 1.0 - t.cos(), false)
            }
            Unary::Clamp01 => {
                if x < 0.0 {
                    (0.0, 0.0, false)
                } else if x > 1.0 {
                    (1.0, 0.0, false)
                } else {
                    (x, 1.0, true)
                }
            }
        }
    }
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a * s` with `s` a single-element node.
    MulScalar(Var, Var),
    /// `a + s` with `s` a single-element node.
    AddScalar(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MulConst(Var, Arc<Vec<f64>>),
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    AddBias {
        a: Var,
        bias: Var,
        n: usize,
    },
    Unary {
        a: Var,
        deriv: Vec<f64>,
    },
    Gather {
        a: Var,
        index: Arc<Vec<usize>>,
    },
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
    ColMean {
        a: Var,
        m: usize,
        n: usize,
    },
    BlockLinear {
        a: Var,
        mat: Arc<Vec<f64>>,
        block: usize,
    },
    MinMax {
        a: Var,
        argmin: usize,
        argmax: usize,
    },
    ReverseGrad(Var),
    SoftmaxRows {
        a: Var,
        cols: usize,
    },
    LogSoftmaxRows {
        a: Var,
        cols: usize,
    },
}

struct Node {
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Operation recorder. See the module docs.
pub struct Tape {
    nodes: Vec<Node>,
    signature: u64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            signature: 0xCBF2_9CE4_8422_2325,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of every branch decision taken by non-smooth operations so far.
    pub fn branch_signature(&self) -> u64 {
        self.signature
    }

    fn mix(&mut self, bit: bool) {
        self.signature = (self.signature ^ (bit as u64 + 1)).wrapping_mul(0x0000_0100_0000_01B3);
    }

    fn mix_usize(&mut self, v: usize) {
        self.signature = (self.signature ^ v as u64).wrapping_mul(0x0000_0100_0000_01B3);
    }

    fn push(&mut self, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.len(), 1);
        val[0]
    }

    pub fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "elementwise operands differ in length");
        let value = va.iter().zip(vb).map(|(x, y)| f(*x, *y)).collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
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

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let value = self.value(a).iter().map(|x| x * k).collect();
        let rg = self.rg(a) || self.rg(s);
        self.push(value, Op::MulScalar(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let value = self.value(a).iter().map(|x| x + k).collect();
        let rg = self.rg(a) || self.rg(s);
        self.push(value, Op::AddScalar(a, s), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).iter().map(|x| x * c).collect();
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).iter().map(|x| x + c).collect();
        let rg = self.rg(a);
        self.push(value, Op::Offset(a), rg)
    }

    /// Elementwise product with fixed weights.
    pub fn mul_const(&mut self, a: Var, weights: Arc<Vec<f64>>) -> Var {
        let va = self.value(a);
        assert_eq!(va.len(), weights.len(), "mul_const length mismatch");
        let value = va.iter().zip(weights.iter()).map(|(x, w)| x * w).collect();
        let rg = self.rg(a);
        self.push(value, Op::MulConst(a, weights), rg)
    }

    /// Row-major `[m, k] × [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var, m: usize, k: usize, n: usize) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), m * k, "matmul lhs shape");
        assert_eq!(vb.len(), k * n, "matmul rhs shape");
        let mut out = vec![0.0; m * n];
        gemm_rows(va, vb, &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul { a, b, m, k, n }, rg)
    }

    /// Adds `bias[n]` to every row of `a[m, n]`.
    pub fn add_bias(&mut self, a: Var, bias: Var, n: usize) -> Var {
        let (va, vb) = (self.value(a), self.value(bias));
        assert_eq!(vb.len(), n, "bias width");
        assert_eq!(va.len() % n, 0, "bias rows");
        let value = va
            .chunks(n)
            .flat_map(|row| row.iter().zip(vb).map(|(x, b)| x + b))
            .collect();
        let rg = self.rg(a) || self.rg(bias);
        self.push(value, Op::AddBias { a, bias, n }, rg)
    }

    pub fn unary(&mut self, a: Var, f: Unary) -> Var {
        let va = self.value(a);
        let mut value = Vec::with_capacity(va.len());
        let mut deriv = Vec::with_capacity(va.len());
        let mut branches = Vec::new();
        for &x in va {
            let (y, d, branch) = f.eval(x);
            value.push(y);
            deriv.push(d);
            if f.kinked() {
                branches.push(branch);
            }
        }
        for b in branches {
            self.mix(b);
        }
        let rg = self.rg(a);
        self.push(value, Op::Unary { a, deriv }, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Relu)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Abs)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Recip)
    }

    /// `out[i] = a[index[i]]`; gradients scatter-add back.
    pub fn gather(&mut self, a: Var, index: Arc<Vec<usize>>) -> Var {
        let va = self.value(a);
        let value = index.iter().map(|&i| va[i]).collect();
        let rg = self.rg(a);
        self.push(value, Op::Gather { a, index }, rg)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut value = Vec::new();
        for p in parts {
            value.extend_from_slice(self.value(*p));
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(value, Op::Concat(parts.to_vec()), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let s: f64 = va.iter().sum::<f64>() / va.len() as f64;
        let rg = self.rg(a);
        self.push(vec![s], Op::Mean(a), rg)
    }

    /// Column means of `a[m, n]`, giving `[n]`.
    pub fn col_mean(&mut self, a: Var, m: usize, n: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.len(), m * n, "col_mean shape");
        let mut out = vec![0.0; n];
        for row in va.chunks(n) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        let inv = 1.0 / m as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let rg = self.rg(a);
        self.push(out, Op::ColMean { a, m, n }, rg)
    }

    /// Applies the `block × block` matrix `mat` to every contiguous group of
    /// `block` values.
    pub fn block_linear(&mut self, a: Var, mat: Arc<Vec<f64>>, block: usize) -> Var {
        let va = self.value(a);
        assert_eq!(mat.len(), block * block, "block matrix shape");
        assert_eq!(va.len() % block, 0, "block_linear length");
        let mut out = vec![0.0; va.len()];
        out.par_chunks_mut(block)
            .zip(va.par_chunks(block))
            .for_each(|(o, x)| {
                for (r, o) in o.iter_mut().enumerate() {
                    let row = &mat[r * block..(r + 1) * block];
                    *o = row.iter().zip(x).map(|(m, x)| m * x).sum();
                }
            });
        let rg = self.rg(a);
        self.push(out, Op::BlockLinear { a, mat, block }, rg)
    }

    /// `[min, max]` of `a`, first occurrence winning ties.
    pub fn min_max(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (mut argmin, mut argmax) = (0, 0);
        for (i, &v) in va.iter().enumerate() {
            if v < va[argmin] {
                argmin = i;
            }
            if v > va[argmax] {
                argmax = i;
            }
        }
        let value = vec![va[argmin], va[argmax]];
        self.mix_usize(argmin);
        self.mix_usize(argmax);
        let rg = self.rg(a);
        self.push(value, Op::MinMax { a, argmin, argmax }, rg)
    }

    /// Identity forward; negates the gradient on the way back.
    pub fn reverse_grad(&mut self, a: Var) -> Var {
        let value = self.value(a).to_vec();
        let rg = self.rg(a);
        self.push(value, Op::ReverseGrad(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var, cols: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.len() % cols, 0, "softmax shape");
        let mut out = vec![0.0; va.len()];
        for (o, row) in out.chunks_mut(cols).zip(va.chunks(cols)) {
            softmax_into(row, o);
        }
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows { a, cols }, rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var, cols: usize) -> Var {
        let va = self.value(a);
        assert_eq!(va.len() % cols, 0, "log_softmax shape");
        let mut out = vec![0.0; va.len()];
        for (o, row) in out.chunks_mut(cols).zip(va.chunks(cols)) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            for (o, x) in o.iter_mut().zip(row) {
                *o = x - lse;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmaxRows { a, cols }, rg)
    }

    /// Reverse pass from the scalar node `out`.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.len_of(out), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![1.0]);
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let op = &self.nodes[idx].op;
        let own = &self.nodes[idx].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, &mut |s| {
                    s.iter_mut().zip(g).zip(vb).for_each(|((s, g), y)| *s += g * y)
                });
                acc(*b, &mut |s| {
                    s.iter_mut().zip(g).zip(va).for_each(|((s, g), x)| *s += g * x)
                });
            }
            Op::MulScalar(a, sv) => {
                let k = self.scalar(*sv);
                let va = self.value(*a);
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g * k));
                acc(*sv, &mut |s| {
                    s[0] += g.iter().zip(va).map(|(g, x)| g * x).sum::<f64>()
                });
            }
            Op::AddScalar(a, sv) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*sv, &mut |s| s[0] += g.iter().sum::<f64>());
            }
            Op::Scale(a, c) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g * c)),
            Op::Offset(a) => acc(*a, &mut |s| add_into(s, g)),
            Op::ReverseGrad(a) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s -= g)),
            Op::MulConst(a, w) => acc(*a, &mut |s| {
                s.iter_mut().zip(g).zip(w.iter()).for_each(|((s, g), w)| *s += g * w)
            }),
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (va, vb) = (self.value(*a), self.value(*b));
                // dA = G Bᵀ
                acc(*a, &mut |s| gemm_rows_bt(g, vb, s, m, n, k));
                // dB = Aᵀ G, reduced over row chunks in a fixed order
                acc(*b, &mut |s| gemm_at_rows(va, g, s, m, k, n));
            }
            Op::AddBias { a, bias, n } => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*bias, &mut |s| {
                    for row in g.chunks(*n) {
                        add_into(s, row);
                    }
                });
            }
            Op::Unary { a, deriv } => acc(*a, &mut |s| {
                s.iter_mut().zip(g).zip(deriv).for_each(|((s, g), d)| *s += g * d)
            }),
            Op::Gather { a, index } => acc(*a, &mut |s| {
                for (g, &i) in g.iter().zip(index.iter()) {
                    s[i] += g;
                }
            }),
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.len_of(*p);
                    acc(*p, &mut |s| add_into(s, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|s| *s += g[0])),
            Op::Mean(a) => {
                let k = g[0] / self.len_of(*a) as f64;
                acc(*a, &mut |s| s.iter_mut().for_each(|s| *s += k))
            }
            Op::ColMean { a, m, n } => {
                let inv = 1.0 / *m as f64;
                acc(*a, &mut |s| {
                    for row in s.chunks_mut(*n) {
                        row.iter_mut().zip(g).for_each(|(s, g)| *s += g * inv);
                    }
                })
            }
            Op::BlockLinear { a, mat, block } => {
                let block = *block;
                acc(*a, &mut |s| {
                    s.par_chunks_mut(block)
                        .zip(g.par_chunks(block))
                        .for_each(|(s, g)| {
                            for (r, gr) in g.iter().enumerate() {
                                let row = &mat[r * block..(r + 1) * block];
                                for (s, m) in s.iter_mut().zip(row) {
                                    *s += gr * m;
                                }
                            }
                        })
                })
            }
            Op::MinMax { a, argmin, argmax } => acc(*a, &mut |s| {
                s[*argmin] += g[0];
                s[*argmax] += g[1];
            }),
            Op::SoftmaxRows { a, cols } => {
                let y = own;
                acc(*a, &mut |s| {
                    for ((s, g), y) in s.chunks_mut(*cols).zip(g.chunks(*cols)).zip(y.chunks(*cols)) {
                        let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                        for ((s, g), y) in s.iter_mut().zip(g).zip(y) {
                            *s += y * (g - dot);
                        }
                    }
                })
            }
            Op::LogSoftmaxRows { a, cols } => {
                let y = own;
                acc(*a, &mut |s| {
                    for ((s, g), y) in s.chunks_mut(*cols).zip(g.chunks(*cols)).zip(y.chunks(*cols)) {
                        let gs: f64 = g.iter().sum();
                        for ((s, g), y) in s.iter_mut().zip(g).zip(y) {
                            *s += g - y.exp() * gs;
                        }
                    }
                })
            }
        }
    }
}

/// Adjoints returned by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, zeros if it does not contribute.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}

fn add_into(s: &mut [f64], g: &[f64]) {
    s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
}

/// Row softmax written into `out`, shifted by the row maximum.
pub fn softmax_into(row: &[f64], out: &mut [f64]) {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, x) in out.iter_mut().zip(row) {
        *o = (x - mx).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// `c[m,n] = a[m,k] b[k,n]`, row chunks in parallel.
fn gemm_rows(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    if m == 0 || n == 0 {
        return;
    }
    c.par_chunks_mut(ROW_CHUNK * n)
        .zip(a.par_chunks(ROW_CHUNK * k.max(1)))
        .for_each(|(c, a)| {
            let rows = c.len() / n;
            dgemm(rows, k, n, a, (k as isize, 1), b, (n as isize, 1), c, 1.0);
        });
}

/// `c[m,k] += g[m,n] bᵀ` where `b` is `[k,n]`.
fn gemm_rows_bt(g: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    if m == 0 || k == 0 {
        return;
    }
    c.par_chunks_mut(ROW_CHUNK * k)
        .zip(g.par_chunks(ROW_CHUNK * n.max(1)))
        .for_each(|(c, g)| {
            let rows = c.len() / k;
            dgemm(rows, n, k, g, (n as isize, 1), b, (1, n as isize), c, 1.0);
        });
}

/// `c[k,n] += aᵀ g` with `a[m,k]`, `g[m,n]`; partial sums per row chunk are
/// added in chunk order.
fn gemm_at_rows(a: &[f64], g: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    if m == 0 {
        return;
    }
    let partials: Vec<Vec<f64>> = a
        .par_chunks(ROW_CHUNK * k)
        .zip(g.par_chunks(ROW_CHUNK * n))
        .map(|(a, g)| {
            let rows = a.len() / k;
            let mut part = vec![0.0; k * n];
            dgemm(k, rows, n, a, (1, k as isize), g, (n as isize, 1), &mut part, 0.0);
            part
        })
        .collect();
    for part in partials {
        add_into(c, &part);
    }
}

/// Thin safe wrapper over `matrixmultiply::dgemm` writing a row-major `c`.
#[allow(clippy::too_many_arguments)]
fn dgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(c.len() >= m * n);
    let max_index = |rows: usize, cols: usize, (rs, cs): (isize, isize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows as isize - 1) * rs + (cols as isize - 1) * cs + 1
        }
    };
    assert!(a.len() as isize >= max_index(m, k, a_strides));
    assert!(b.len() as isize >= max_index(k, n, b_strides));
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
