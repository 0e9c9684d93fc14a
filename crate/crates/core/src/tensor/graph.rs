use std::fmt::Write as _;
use std::ops::Range;

use super::array::split_axis;
use super::{Tensor, TensorError};

/// Handle to a node recorded in a [`Graph`].
///
/// A `Var` is only meaningful for the graph that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Tanh,
    Sigmoid,
    /// Subgradient at exactly zero is 0.
    Relu,
    Exp,
    Log,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Unary { kind: UnaryKind, x: Var },
    Binary { kind: BinaryKind, a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Reduce { kind: ReduceKind, x: Var, axis: Option<usize> },
    Concat { a: Var, b: Var, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    Reshape { x: Var },
    Expand { x: Var, axis: usize },
    Conv1d { x: Var, w: Var, b: Var, stride: usize, padding: usize },
    StraightThrough { relaxed: Var },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { trans_b: false, .. } => "matmul",
            Op::MatMul { trans_b: true, .. } => "matmul_bt",
            Op::Unary { kind, .. } => match kind {
                UnaryKind::Tanh => "tanh",
                UnaryKind::Sigmoid => "sigmoid",
                UnaryKind::Relu => "relu",
                UnaryKind::Exp => "exp",
                UnaryKind::Log => "log",
                UnaryKind::Neg => "neg",
            },
            Op::Binary { kind, .. } => match kind {
                BinaryKind::Add => "add",
                BinaryKind::Sub => "sub",
                BinaryKind::Mul => "mul",
                BinaryKind::Div => "div",
            },
            Op::Scale { .. } => "scale",
            Op::Reduce { kind: ReduceKind::Sum, .. } => "sum",
            Op::Reduce { kind: ReduceKind::Mean, .. } => "mean",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::Reshape { .. } => "reshape",
            Op::Expand { .. } => "expand",
            Op::Conv1d { .. } => "conv1d",
            Op::StraightThrough { .. } => "straight_through",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } | Op::Binary { a, b, .. } | Op::Concat { a, b, .. } => vec![a, b],
            Op::Unary { x, .. }
            | Op::Scale { x, .. }
            | Op::Reduce { x, .. }
            | Op::Slice { x, .. }
            | Op::Softmax { x, .. }
            | Op::LogSoftmax { x, .. }
            | Op::Reshape { x }
            | Op::Expand { x, .. } => vec![x],
            Op::Conv1d { x, w, b, .. } => vec![x, w, b],
            Op::StraightThrough { relaxed } => vec![relaxed],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Eagerly recorded computation graph.
///
/// Every operation computes its value immediately and appends a node, so node
/// order is a topological order. One call to [`Graph::backward`] consumes the
/// graph; node values stay readable afterwards.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Graph::backward`], keyed by leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a `requires_grad` leaf. `None` when the leaf did not
    /// require gradients or is not a leaf of the graph.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node created after the first `len`. Vars at or past `len`
    /// become invalid. Used by long inference loops that rebuild each step
    /// on top of the same parameter leaves.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    fn check_2d(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(TensorError::Rank { op, expected: 2, shape: s.to_vec() }),
        }
    }

    fn check_axis(&self, op: &'static str, v: Var, axis: usize) -> Result<(), TensorError> {
        let rank = self.shape(v).len();
        if axis >= rank {
            return Err(TensorError::Axis { op, axis, rank });
        }
        Ok(())
    }

    /// Matrix product `a · b` of `[m×k]` and `[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, false)
    }

    /// Matrix product `a · bᵀ` of `[m×k]` and `[n×k]`, without materializing the transpose.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, TensorError> {
        let name = if trans_b { "matmul_bt" } else { "matmul" };
        let (m, k) = self.check_2d(name, a)?;
        let (br, bc) = self.check_2d(name, b)?;
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(self.mismatch(name, a, b));
        }
        let mut out = vec![0.0; m * n];
        let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        gemm(
            (m, k, n),
            (self.value(a).data(), k as isize, 1),
            (self.value(b).data(), rsb, csb),
            (&mut out, n as isize, 1),
        );
        Ok(self.push_op(Tensor::new(&[m, n], out)?, Op::MatMul { a, b, trans_b }))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch { op, lhs: self.shape(a).to_vec(), rhs: self.shape(b).to_vec() }
    }

    pub fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if kind == UnaryKind::Log {
            if let Some(index) = xv.data().iter().position(|&v| v <= 0.0 || v.is_nan()) {
                return Err(TensorError::Domain { op: "log", index, value: xv.data()[index] });
            }
        }
        let f: fn(f64) -> f64 = match kind {
            UnaryKind::Tanh => f64::tanh,
            UnaryKind::Sigmoid => sigmoid,
            UnaryKind::Relu => |v| if v > 0.0 { v } else { 0.0 },
            UnaryKind::Exp => f64::exp,
            UnaryKind::Log => f64::ln,
            UnaryKind::Neg => |v| -v,
        };
        let value = xv.map(f);
        Ok(self.push_op(value, Op::Unary { kind, x }))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(UnaryKind::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(UnaryKind::Log, x)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(UnaryKind::Neg, x)
    }

    /// Elementwise binary op. Operands must have equal shapes, or one of them
    /// must hold a single element (scalar-vs-tensor).
    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var, TensorError> {
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        let (av, bv) = (self.value(a), self.value(b));
        let shape = if av.shape() == bv.shape() || bv.numel() == 1 {
            av.shape().to_vec()
        } else if av.numel() == 1 {
            bv.shape().to_vec()
        } else {
            return Err(self.mismatch(name, a, b));
        };
        if kind == BinaryKind::Div {
            if let Some(index) = bv.data().iter().position(|&v| v == 0.0) {
                return Err(TensorError::Domain { op: "div", index, value: 0.0 });
            }
        }
        let n: usize = shape.iter().product();
        let (ad, bd) = (av.data(), bv.data());
        let (sa, sb) = (usize::from(ad.len() != 1), usize::from(bd.len() != 1));
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (x, y) = (ad[i * sa], bd[i * sb]);
            out.push(match kind {
                BinaryKind::Add => x + y,
                BinaryKind::Sub => x - y,
                BinaryKind::Mul => x * y,
                BinaryKind::Div => x / y,
            });
        }
        Ok(self.push_op(Tensor::new(&shape, out)?, Op::Binary { kind, a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Div, a, b)
    }

    /// Multiplication by a constant factor.
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, TensorError> {
        let value = self.value(x).map(|v| v * factor);
        Ok(self.push_op(value, Op::Scale { x, factor }))
    }

    /// Sum or mean over one axis, or over everything when `axis` is `None`.
    /// Reducing the only axis of a vector yields shape `[1]`.
    pub fn reduce(&mut self, kind: ReduceKind, x: Var, axis: Option<usize>) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (shape, out) = match axis {
            None => {
                let s: f64 = xv.data().iter().sum();
                let v = if kind == ReduceKind::Mean { s / xv.numel() as f64 } else { s };
                (vec![1], vec![v])
            }
            Some(axis) => {
                self.check_axis("reduce", x, axis)?;
                let (outer, n, inner) = split_axis(xv.shape(), axis);
                let d = xv.data();
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for j in 0..n {
                        let src = &d[(o * n + j) * inner..(o * n + j + 1) * inner];
                        for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *acc += v;
                        }
                    }
                }
                if kind == ReduceKind::Mean {
                    out.iter_mut().for_each(|v| *v /= n as f64);
                }
                let mut shape = xv.shape().to_vec();
                shape.remove(axis);
                if shape.is_empty() {
                    shape.push(1);
                }
                (shape, out)
            }
        };
        Ok(self.push_op(Tensor::new(&shape, out)?, Op::Reduce { kind, x, axis }))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        self.reduce(ReduceKind::Sum, x, None)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        self.reduce(ReduceKind::Mean, x, None)
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var, TensorError> {
        self.check_axis("concat", a, axis)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        let compatible = sa.len() == sb.len()
            && sa.iter().zip(sb).enumerate().all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(self.mismatch("concat", a, b));
        }
        let (outer, na, inner) = split_axis(sa, axis);
        let nb = sb[axis];
        let mut shape = sa.to_vec();
        shape[axis] = na + nb;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(outer * (na + nb) * inner);
        for o in 0..outer {
            out.extend_from_slice(&ad[o * na * inner..(o + 1) * na * inner]);
            out.extend_from_slice(&bd[o * nb * inner..(o + 1) * nb * inner]);
        }
        Ok(self.push_op(Tensor::new(&shape, out)?, Op::Concat { a, b, axis }))
    }

    pub fn slice(&mut self, x: Var, axis: usize, range: Range<usize>) -> Result<Var, TensorError> {
        self.check_axis("slice", x, axis)?;
        let xs = self.shape(x);
        if range.start >= range.end || range.end > xs[axis] {
            return Err(TensorError::Range { axis, start: range.start, end: range.end, len: xs[axis] });
        }
        let (outer, n, inner) = split_axis(xs, axis);
        let len = range.end - range.start;
        let mut shape = xs.to_vec();
        shape[axis] = len;
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + range.start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        Ok(self.push_op(Tensor::new(&shape, out)?, Op::Slice { x, axis, start: range.start }))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.check_axis("softmax", x, axis)?;
        let value = softmax_forward(self.value(x), axis, false);
        Ok(self.push_op(value, Op::Softmax { x, axis }))
    }

    /// `x - max - log Σ exp(x - max)` along `axis`.
    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.check_axis("log_softmax", x, axis)?;
        let value = softmax_forward(self.value(x), axis, true);
        Ok(self.push_op(value, Op::LogSoftmax { x, axis }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push_op(value, Op::Reshape { x }))
    }

    /// Repeats a size-1 axis `n` times. This is the only broadcasting
    /// primitive; layers call it explicitly.
    pub fn expand(&mut self, x: Var, axis: usize, n: usize) -> Result<Var, TensorError> {
        self.check_axis("expand", x, axis)?;
        let xs = self.shape(x);
        if xs[axis] != 1 || n == 0 {
            return Err(TensorError::Expand { shape: xs.to_vec(), axis, n });
        }
        let (outer, _, inner) = split_axis(xs, axis);
        let mut shape = xs.to_vec();
        shape[axis] = n;
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            for _ in 0..n {
                out.extend_from_slice(&d[o * inner..(o + 1) * inner]);
            }
        }
        Ok(self.push_op(Tensor::new(&shape, out)?, Op::Expand { x, axis }))
    }

    /// 1-D cross-correlation (no kernel flip) with bias.
    ///
    /// `x: [batch × in_ch × len]`, `w: [out_ch × in_ch × k]`, `b: [out_ch]`.
    /// Output length is `(len + 2·padding − k) / stride + 1`; padded
    /// positions read as zero.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var, TensorError> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        let (&[batch, cin, len], &[cout, wcin, k]) = (xs, ws) else {
            return Err(self.mismatch("conv1d", x, w));
        };
        if cin != wcin || bs != [cout] || stride == 0 {
            return Err(self.mismatch("conv1d", x, w));
        }
        if len + 2 * padding < k {
            return Err(TensorError::ConvTooShort { len, padding, kernel: k });
        }
        let lout = (len + 2 * padding - k) / stride + 1;
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![0.0; batch * cout * lout];
        for n in 0..batch {
            for o in 0..cout {
                let row = &mut out[(n * cout + o) * lout..(n * cout + o + 1) * lout];
                row.iter_mut().for_each(|v| *v = bd[o]);
                for c in 0..cin {
                    let xrow = &xd[(n * cin + c) * len..(n * cin + c + 1) * len];
                    let wrow = &wd[(o * cin + c) * k..(o * cin + c + 1) * k];
                    for (t, y) in row.iter_mut().enumerate() {
                        for (j, wv) in wrow.iter().enumerate() {
                            let pos = (t * stride + j) as isize - padding as isize;
                            if pos >= 0 && (pos as usize) < len {
                                *y += wv * xrow[pos as usize];
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(&[batch, cout, lout], out)?;
        Ok(self.push_op(value, Op::Conv1d { x, w, b, stride, padding }))
    }

    /// Forward value `hard`, backward identity into `relaxed`.
    pub fn straight_through(&mut self, hard: Tensor, relaxed: Var) -> Result<Var, TensorError> {
        if hard.shape() != self.shape(relaxed) {
            return Err(TensorError::ShapeMismatch {
                op: "straight_through",
                lhs: hard.shape().to_vec(),
                rhs: self.shape(relaxed).to_vec(),
            });
        }
        Ok(self.push_op(hard, Op::StraightThrough { relaxed }))
    }

    /// Reverse-mode sweep from a one-element root.
    pub fn backward(&mut self, root: Var) -> Result<Gradients, TensorError> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        if self.value(root).numel() != 1 {
            return Err(TensorError::NonScalarRoot { shape: self.shape(root).to_vec() });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backprop_node(i, &gy, &mut grads);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let node = &self.nodes[i];
                match (g, &node.op) {
                    (Some(g), Op::Leaf) if node.requires_grad => {
                        Some(Tensor::new(node.value.shape(), g).expect("gradient shape"))
                    }
                    (None, Op::Leaf) if node.requires_grad => Some(Tensor::zeros(node.value.shape())),
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = node.value.shape()[1];
                if self.requires_grad(a) {
                    // dA = dC · B_effᵀ
                    let (rs, cs) = if trans_b { (k as isize, 1) } else { (1, n as isize) };
                    let b_data = self.value(b).data();
                    let ga = slot(grads, a, m * k);
                    gemm((m, n, k), (gy, n as isize, 1), (b_data, rs, cs), (ga, k as isize, 1));
                }
                if self.requires_grad(b) {
                    // dB_eff = Aᵀ · dC, stored transposed when trans_b
                    let (rs, cs) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
                    let a_data = self.value(a).data();
                    let gb = slot(grads, b, k * n);
                    gemm((k, m, n), (a_data, 1, k as isize), (gy, n as isize, 1), (gb, rs, cs));
                }
            }
            Op::Unary { kind, x } => {
                if !self.requires_grad(x) {
                    return;
                }
                let xd = self.value(x).data();
                let gx = slot(grads, x, y.len());
                for j in 0..y.len() {
                    let d = match kind {
                        UnaryKind::Tanh => 1.0 - y[j] * y[j],
                        UnaryKind::Sigmoid => y[j] * (1.0 - y[j]),
                        UnaryKind::Relu => {
                            if xd[j] > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        UnaryKind::Exp => y[j],
                        UnaryKind::Log => 1.0 / xd[j],
                        UnaryKind::Neg => -1.0,
                    };
                    gx[j] += gy[j] * d;
                }
            }
            Op::Binary { kind, a, b } => {
                let (ad, bd) = (self.value(a).data(), self.value(b).data());
                let (sa, sb) = (usize::from(ad.len() != 1), usize::from(bd.len() != 1));
                if self.requires_grad(a) {
                    let ga = slot(grads, a, ad.len());
                    for j in 0..gy.len() {
                        let d = match kind {
                            BinaryKind::Add | BinaryKind::Sub => 1.0,
                            BinaryKind::Mul => bd[j * sb],
                            BinaryKind::Div => 1.0 / bd[j * sb],
                        };
                        ga[j * sa] += gy[j] * d;
                    }
                }
                if self.requires_grad(b) {
                    let gb = slot(grads, b, bd.len());
                    for j in 0..gy.len() {
                        let d = match kind {
                            BinaryKind::Add => 1.0,
                            BinaryKind::Sub => -1.0,
                            BinaryKind::Mul => ad[j * sa],
                            BinaryKind::Div => -ad[j * sa] / (bd[j * sb] * bd[j * sb]),
                        };
                        gb[j * sb] += gy[j] * d;
                    }
                }
            }
            Op::Scale { x, factor } => {
                if self.requires_grad(x) {
                    let gx = slot(grads, x, gy.len());
                    gx.iter_mut().zip(gy).for_each(|(g, v)| *g += v * factor);
                }
            }
            Op::Reduce { kind, x, axis } => {
                if !self.requires_grad(x) {
                    return;
                }
                let xs = self.shape(x);
                let numel: usize = xs.iter().product();
                match axis {
                    None => {
                        let scale = if kind == ReduceKind::Mean { 1.0 / numel as f64 } else { 1.0 };
                        let gx = slot(grads, x, numel);
                        gx.iter_mut().for_each(|g| *g += gy[0] * scale);
                    }
                    Some(axis) => {
                        let (outer, n, inner) = split_axis(xs, axis);
                        let scale = if kind == ReduceKind::Mean { 1.0 / n as f64 } else { 1.0 };
                        let gx = slot(grads, x, numel);
                        for o in 0..outer {
                            for j in 0..n {
                                for t in 0..inner {
                                    gx[(o * n + j) * inner + t] += gy[o * inner + t] * scale;
                                }
                            }
                        }
                    }
                }
            }
            Op::Concat { a, b, axis } => {
                let (outer, na, inner) = split_axis(self.shape(a), axis);
                let nb = self.shape(b)[axis];
                let width = (na + nb) * inner;
                if self.requires_grad(a) {
                    let ga = slot(grads, a, outer * na * inner);
                    for o in 0..outer {
                        add_into(&mut ga[o * na * inner..(o + 1) * na * inner], &gy[o * width..o * width + na * inner]);
                    }
                }
                if self.requires_grad(b) {
                    let gb = slot(grads, b, outer * nb * inner);
                    for o in 0..outer {
                        add_into(&mut gb[o * nb * inner..(o + 1) * nb * inner], &gy[o * width + na * inner..(o + 1) * width]);
                    }
                }
            }
            Op::Slice { x, axis, start } => {
                if !self.requires_grad(x) {
                    return;
                }
                let xs = self.shape(x);
                let (outer, n, inner) = split_axis(xs, axis);
                let len = node.value.shape()[axis];
                let gx = slot(grads, x, outer * n * inner);
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    add_into(&mut gx[base..base + len * inner], &gy[o * len * inner..(o + 1) * len * inner]);
                }
            }
            Op::Softmax { x, axis } => {
                if !self.requires_grad(x) {
                    return;
                }
                let (outer, n, inner) = split_axis(node.value.shape(), axis);
                let gx = slot(grads, x, y.len());
                for o in 0..outer {
                    for t in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + t;
                        let dot: f64 = (0..n).map(|j| gy[idx(j)] * y[idx(j)]).sum();
                        for j in 0..n {
                            gx[idx(j)] += y[idx(j)] * (gy[idx(j)] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax { x, axis } => {
                if !self.requires_grad(x) {
                    return;
                }
                let (outer, n, inner) = split_axis(node.value.shape(), axis);
                let gx = slot(grads, x, y.len());
                for o in 0..outer {
                    for t in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + t;
                        let total: f64 = (0..n).map(|j| gy[idx(j)]).sum();
                        for j in 0..n {
                            gx[idx(j)] += gy[idx(j)] - y[idx(j)].exp() * total;
                        }
                    }
                }
            }
            Op::Reshape { x } | Op::StraightThrough { relaxed: x } => {
                if self.requires_grad(x) {
                    add_into(slot(grads, x, gy.len()), gy);
                }
            }
            Op::Expand { x, axis } => {
                if !self.requires_grad(x) {
                    return;
                }
                let (outer, n, inner) = split_axis(node.value.shape(), axis);
                let gx = slot(grads, x, outer * inner);
                for o in 0..outer {
                    for j in 0..n {
                        add_into(&mut gx[o * inner..(o + 1) * inner], &gy[(o * n + j) * inner..(o * n + j + 1) * inner]);
                    }
                }
            }
            Op::Conv1d { x, w, b, stride, padding } => {
                let [batch, cin, len] = *self.shape(x) else { unreachable!() };
                let [cout, _, k] = *self.shape(w) else { unreachable!() };
                let lout = node.value.shape()[2];
                let (xd, wd) = (self.value(x).data(), self.value(w).data());
                let taps = |t: usize, j: usize| {
                    let pos = (t * stride + j) as isize - padding as isize;
                    (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
                };
                if self.requires_grad(b) {
                    let gb = slot(grads, b, cout);
                    for n in 0..batch {
                        for (o, g) in gb.iter_mut().enumerate() {
                            *g += gy[(n * cout + o) * lout..(n * cout + o + 1) * lout].iter().sum::<f64>();
                        }
                    }
                }
                if self.requires_grad(w) {
                    let gw = slot(grads, w, cout * cin * k);
                    for n in 0..batch {
                        for o in 0..cout {
                            let grow = &gy[(n * cout + o) * lout..(n * cout + o + 1) * lout];
                            for c in 0..cin {
                                let xrow = &xd[(n * cin + c) * len..(n * cin + c + 1) * len];
                                for j in 0..k {
                                    let mut acc = 0.0;
                                    for (t, g) in grow.iter().enumerate() {
                                        if let Some(p) = taps(t, j) {
                                            acc += g * xrow[p];
                                        }
                                    }
                                    gw[(o * cin + c) * k + j] += acc;
                                }
                            }
                        }
                    }
                }
                if self.requires_grad(x) {
                    let gx = slot(grads, x, batch * cin * len);
                    for n in 0..batch {
                        for o in 0..cout {
                            let grow = &gy[(n * cout + o) * lout..(n * cout + o + 1) * lout];
                            for c in 0..cin {
                                let wrow = &wd[(o * cin + c) * k..(o * cin + c + 1) * k];
                                let base = (n * cin + c) * len;
                                for (t, g) in grow.iter().enumerate() {
                                    for (j, wv) in wrow.iter().enumerate() {
                                        if let Some(p) = taps(t, j) {
                                            gx[base + p] += g * wv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Text edge list of the recorded graph: one line per node,
    /// `id op [parents] shape grad`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let parents: Vec<usize> = node.op.parents().iter().map(|p| p.0).collect();
            let _ = writeln!(
                out,
                "{i} {} {:?} {:?}{}",
                node.op.name(),
                parents,
                node.value.shape(),
                if node.requires_grad { " grad" } else { "" }
            );
        }
        out
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softmax_forward(x: &Tensor, axis: usize, log: bool) -> Tensor {
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for t in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + t;
            let max = (0..n).map(|j| d[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = (0..n).map(|j| (d[idx(j)] - max).exp()).sum();
            for j in 0..n {
                let shifted = d[idx(j)] - max;
                out[idx(j)] = if log { shifted - total.ln() } else { shifted.exp() / total };
            }
        }
    }
    Tensor::new(x.shape(), out).expect("softmax keeps shape")
}

fn slot(grads: &mut [Option<Vec<f64>>], var: Var, len: usize) -> &mut [f64] {
    grads[var.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

type StridedRef<'a> = (&'a [f64], isize, isize);

/// `c += a · b` over strided operands with dims `(m, k, n)`.
fn gemm(dims: (usize, usize, usize), a: StridedRef<'_>, b: StridedRef<'_>, c: (&mut [f64], isize, isize)) {
    let (m, k, n) = dims;
    debug_assert!(c.0.len() >= m * n && a.0.len() >= m * k && b.0.len() >= k * n);
    // SAFETY: every operand slice holds at least the extents implied by
    // (m, k, n) under the given strides, checked above.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.0.as_ptr(), a.1, a.2, b.0.as_ptr(), b.1, b.2, 1.0, c.0.as_mut_ptr(), c.1, c.2);
    }
}
