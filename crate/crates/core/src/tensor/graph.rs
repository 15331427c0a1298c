use super::kernels::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geo: ConvGeometry,
        batch: usize,
        out_channels: usize,
        cols: Vec<f64>,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Transpose(Var),
    RepeatRows(Var),
    Sum(Var),
    Mean(Var),
    SmoothL1(Var),
    /// Scalar node with a precomputed local gradient w.r.t. its input.
    Custom {
        input: Var,
        local_grad: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2d { .. } => "max_pool2d",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(..) => "reshape",
            Op::Transpose(..) => "transpose",
            Op::RepeatRows(..) => "repeat_rows",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SmoothL1(..) => "smooth_l1",
            Op::Custom { .. } => "custom",
        }
    }
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Append-only tape of tensor operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.node(v).op.name()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    /// Copy a node's value out as a standalone tensor.
    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shapes are valid")
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.node(v).grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn mismatch(&self, op: &'static str, detail: String) -> Error {
        Error::Shape {
            node: self.nodes.len(),
            op,
            detail,
        }
    }

    /// Leaf holding `t`; tracks gradients iff `t.requires_grad()`.
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.mismatch("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm_nn(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    /// 2-D convolution of an `[N,C,H,W]` input with an `[O,C,kh,kw]` kernel.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let (si, sw) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        if si.len() != 4 || sw.len() != 4 || si[1] != sw[1] || stride.0 == 0 || stride.1 == 0 {
            return Err(self.mismatch(
                "conv2d",
                format!("input {si:?}, weight {sw:?}, stride {stride:?}"),
            ));
        }
        if si[2] + 2 * padding.0 < sw[2] || si[3] + 2 * padding.1 < sw[3] {
            return Err(self.mismatch(
                "conv2d",
                format!("kernel {:?} larger than padded input {si:?}", &sw[2..]),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [sw[0]] {
                return Err(self.mismatch(
                    "conv2d",
                    format!("bias {:?} for {} output channels", self.shape(b), sw[0]),
                ));
            }
        }
        let geo = ConvGeometry {
            channels: si[1],
            height: si[2],
            width: si[3],
            kernel: (sw[2], sw[3]),
            stride,
            padding,
        };
        let (batch, oc) = (si[0], sw[0]);
        let (rows, ncols) = (geo.col_rows(), geo.col_cols());
        let in_plane = si[1] * si[2] * si[3];
        let mut cols = vec![0.0; batch * rows * ncols];
        let mut out = vec![0.0; batch * oc * ncols];
        let x = self.value(input);
        let w = self.value(weight);
        for n in 0..batch {
            let c = &mut cols[n * rows * ncols..(n + 1) * rows * ncols];
            kernels::im2col(&x[n * in_plane..(n + 1) * in_plane], &geo, c);
            let o = &mut out[n * oc * ncols..(n + 1) * oc * ncols];
            if let Some(b) = bias {
                let bv = self.value(b);
                for (ch, row) in o.chunks_exact_mut(ncols).enumerate() {
                    row.fill(bv[ch]);
                }
            }
            kernels::gemm_nn(w, c, o, oc, rows, ncols);
        }
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        let shape = vec![batch, oc, geo.out_height(), geo.out_width()];
        Ok(self.push(
            shape,
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geo,
                batch,
                out_channels: oc,
                cols: if rg { cols } else { Vec::new() },
            },
            rg,
        ))
    }

    /// Max pooling over `[N,C,H,W]` without padding.
    pub fn max_pool2d(
        &mut self,
        input: Var,
        kernel: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 || kernel.0 > s[2] || kernel.1 > s[3] || stride.0 == 0 || stride.1 == 0 {
            return Err(self.mismatch(
                "max_pool2d",
                format!("input {s:?}, kernel {kernel:?}, stride {stride:?}"),
            ));
        }
        let (h, w) = (s[2], s[3]);
        let ho = (h - kernel.0) / stride.0 + 1;
        let wo = (w - kernel.1) / stride.1 + 1;
        let planes = s[0] * s[1];
        let x = self.value(input);
        let mut out = vec![0.0; planes * ho * wo];
        let mut argmax = vec![0usize; planes * ho * wo];
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = base;
                    for ky in 0..kernel.0 {
                        let row = base + (oy * stride.0 + ky) * w;
                        for kx in 0..kernel.1 {
                            let i = row + ox * stride.1 + kx;
                            if x[i] > best {
                                best = x[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = (p * ho + oy) * wo + ox;
                    out[o] = best;
                    argmax[o] = best_i;
                }
            }
        }
        let rg = self.rg(&[input]);
        Ok(self.push(
            vec![s[0], s[1], ho, wo],
            out,
            Op::MaxPool2d { input, argmax },
            rg,
        ))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (na, nb) = (self.value(a).len(), self.value(b).len());
        let shape = if sa == sb {
            sa.to_vec()
        } else if na == 1 {
            sb.to_vec()
        } else if nb == 1 {
            sa.to_vec()
        } else {
            return Err(self.mismatch(name, format!("{sa:?} vs {sb:?}")));
        };
        let (va, vb) = (self.value(a), self.value(b));
        let n = na.max(nb);
        let out: Vec<f64> = (0..n)
            .map(|i| f(va[if na == 1 { 0 } else { i }], vb[if nb == 1 { 0 } else { i }]))
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, op, rg))
    }

    /// Elementwise sum; either side may be a one-element tensor.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(shape, out, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// `0.5 x^2` for `|x| < 1`, else `|x| - 0.5`.
    pub fn smooth_l1(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| {
                if x.abs() < 1.0 {
                    0.5 * x * x
                } else {
                    x.abs() - 0.5
                }
            },
            Op::SmoothL1(a),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let n = *shape.last().unwrap();
        let mut out = self.value(a).to_vec();
        for row in out.chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        let rg = self.rg(&[a]);
        self.push(shape, out, Op::Softmax(a), rg)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let n = *shape.last().unwrap();
        let mut out = self.value(a).to_vec();
        for row in out.chunks_exact_mut(n) {
            let lse = kernels::log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let rg = self.rg(&[a]);
        self.push(shape, out, Op::LogSoftmax(a), rg)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| self.mismatch("concat", "no inputs".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(self.mismatch("concat", format!("axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(self.mismatch("concat", format!("{base:?} vs {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let len = self.shape(*v)[axis] * inner;
                out.extend_from_slice(&self.value(*v)[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(inputs);
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Range `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start >= end || end > s[axis] {
            return Err(self.mismatch("slice", format!("{start}..{end} on axis {axis} of {s:?}")));
        }
        let (outer, mid, inner) = split_axis(&s, axis);
        let len = (end - start) * inner;
        let x = self.value(a);
        let mut out = Vec::with_capacity(outer * len);
        for o in 0..outer {
            let off = o * mid * inner + start * inner;
            out.extend_from_slice(&x[off..off + len]);
        }
        let mut shape = s;
        shape[axis] = end - start;
        let rg = self.rg(&[a]);
        Ok(self.push(shape, out, Op::Slice { input: a, axis, start }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() || shape.contains(&0) {
            return Err(self.mismatch("reshape", format!("{:?} -> {shape:?}", self.shape(a))));
        }
        let out = self.value(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(a), rg))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(self.mismatch("transpose", format!("expected 2-D, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let x = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![c, r], out, Op::Transpose(a), rg))
    }

    /// Tile a `[n]` (or `[1,n]`) row `rows` times into `[rows, n]`.
    pub fn repeat_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let n = match s.as_slice() {
            [n] | [1, n] => *n,
            _ => return Err(self.mismatch("repeat_rows", format!("expected a row, got {s:?}"))),
        };
        if rows == 0 {
            return Err(self.mismatch("repeat_rows", "zero rows".into()));
        }
        let x = self.value(a);
        let mut out = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            out.extend_from_slice(x);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![rows, n], out, Op::RepeatRows(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().sum();
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[a]);
        self.push(vec![1], vec![s], Op::Mean(a), rg)
    }

    /// Scalar node whose value and local gradient were computed outside
    /// the graph (used by the CTC loss).
    pub fn custom_scalar(&mut self, input: Var, value: f64, local_grad: Vec<f64>) -> Result<Var> {
        if local_grad.len() != self.value(input).len() {
            return Err(self.mismatch(
                "custom",
                format!(
                    "local gradient has {} entries, input has {}",
                    local_grad.len(),
                    self.value(input).len()
                ),
            ));
        }
        let rg = self.rg(&[input]);
        Ok(self.push(vec![1], vec![value], Op::Custom { input, local_grad }, rg))
    }

    /// Reverse sweep from a scalar `loss`; gradients accumulate with `+=`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let n = self.node(loss);
        if n.value.len() != 1 {
            return Err(Error::NonScalarLoss(n.shape.clone()));
        }
        if !n.requires_grad {
            return Ok(());
        }
        match &mut self.nodes[loss.0].grad {
            Some(g) => g[0] += 1.0,
            slot @ None => *slot = Some(vec![1.0]),
        }
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = node.grad.take() else {
                continue;
            };
            backprop(before, node, &grad);
            node.grad = Some(grad);
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    row.iter_mut().for_each(|x| *x /= sum);
}

/// Gradient buffer of `v`, allocated on demand; `None` when `v` does not
/// track gradients.
fn slot(nodes: &mut [Node], v: Var) -> Option<&mut Vec<f64>> {
    let n = &mut nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    let len = n.value.len();
    Some(n.grad.get_or_insert_with(|| vec![0.0; len]))
}

fn backprop(nodes: &mut [Node], node: &Node, g: &[f64]) {
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            let n = nodes[b.0].shape[1];
            if nodes[a.0].requires_grad {
                let bv = nodes[b.0].value.clone();
                let ga = slot(nodes, *a).unwrap();
                kernels::gemm_nt(g, &bv, ga, m, n, k);
            }
            if nodes[b.0].requires_grad {
                let av = nodes[a.0].value.clone();
                let gb = slot(nodes, *b).unwrap();
                kernels::gemm_tn(&av, g, gb, m, k, n);
            }
        }
        Op::Conv2d {
            input,
            weight,
            bias,
            geo,
            batch,
            out_channels,
            cols,
        } => {
            let (rows, ncols) = (geo.col_rows(), geo.col_cols());
            let oc = *out_channels;
            if let Some(b) = bias {
                if let Some(gb) = slot(nodes, *b) {
                    for n in 0..*batch {
                        for ch in 0..oc {
                            let off = (n * oc + ch) * ncols;
                            gb[ch] += g[off..off + ncols].iter().sum::<f64>();
                        }
                    }
                }
            }
            if nodes[weight.0].requires_grad {
                let gw = slot(nodes, *weight).unwrap();
                for n in 0..*batch {
                    kernels::gemm_nt(
                        &g[n * oc * ncols..(n + 1) * oc * ncols],
                        &cols[n * rows * ncols..(n + 1) * rows * ncols],
                        gw,
                        oc,
                        ncols,
                        rows,
                    );
                }
            }
            if nodes[input.0].requires_grad {
                let w = nodes[weight.0].value.clone();
                let plane = geo.channels * geo.height * geo.width;
                let gi = slot(nodes, *input).unwrap();
                let mut dcols = vec![0.0; rows * ncols];
                for n in 0..*batch {
                    dcols.fill(0.0);
                    kernels::gemm_tn(
                        &w,
                        &g[n * oc * ncols..(n + 1) * oc * ncols],
                        &mut dcols,
                        oc,
                        rows,
                        ncols,
                    );
                    kernels::col2im(&dcols, geo, &mut gi[n * plane..(n + 1) * plane]);
                }
            }
        }
        Op::MaxPool2d { input, argmax } => {
            if let Some(gi) = slot(nodes, *input) {
                for (o, &src) in argmax.iter().enumerate() {
                    gi[src] += g[o];
                }
            }
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if let Some(ga) = slot(nodes, *a) {
                accumulate_broadcast(ga, g, 1.0);
            }
            if let Some(gb) = slot(nodes, *b) {
                accumulate_broadcast(gb, g, sign);
            }
        }
        Op::Mul(a, b) => {
            let av = nodes[a.0].value.clone();
            let bv = nodes[b.0].value.clone();
            if let Some(ga) = slot(nodes, *a) {
                mul_grad(ga, g, &bv);
            }
            if let Some(gb) = slot(nodes, *b) {
                mul_grad(gb, g, &av);
            }
        }
        Op::Scale(a, c) => {
            if let Some(ga) = slot(nodes, *a) {
                kernels::axpy(*c, g, ga);
            }
        }
        Op::AddScalar(a) | Op::Reshape(a) => {
            if let Some(ga) = slot(nodes, *a) {
                kernels::axpy(1.0, g, ga);
            }
        }
        Op::Tanh(a) => {
            if let Some(ga) = slot(nodes, *a) {
                for ((d, &gy), &yv) in ga.iter_mut().zip(g).zip(y) {
                    *d += gy * (1.0 - yv * yv);
                }
            }
        }
        Op::Sigmoid(a) => {
            if let Some(ga) = slot(nodes, *a) {
                for ((d, &gy), &yv) in ga.iter_mut().zip(g).zip(y) {
                    *d += gy * yv * (1.0 - yv);
                }
            }
        }
        Op::Relu(a) => {
            if let Some(ga) = slot(nodes, *a) {
                for ((d, &gy), &yv) in ga.iter_mut().zip(g).zip(y) {
                    if yv > 0.0 {
                        *d += gy;
                    }
                }
            }
        }
        Op::Exp(a) => {
            if let Some(ga) = slot(nodes, *a) {
                for ((d, &gy), &yv) in ga.iter_mut().zip(g).zip(y) {
                    *d += gy * yv;
                }
            }
        }
        Op::SmoothL1(a) => {
            let x = nodes[a.0].value.clone();
            if let Some(ga) = slot(nodes, *a) {
                for ((d, &gy), &xv) in ga.iter_mut().zip(g).zip(&x) {
                    *d += gy * if xv.abs() < 1.0 { xv } else { xv.signum() };
                }
            }
        }
        Op::Softmax(a) => {
            let n = *node.shape.last().unwrap();
            if let Some(ga) = slot(nodes, *a) {
                for ((d, gy), yv) in ga
                    .chunks_exact_mut(n)
                    .zip(g.chunks_exact(n))
                    .zip(y.chunks_exact(n))
                {
                    let s: f64 = gy.iter().zip(yv).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        d[j] += yv[j] * (gy[j] - s);
                    }
                }
            }
        }
        Op::LogSoftmax(a) => {
            let n = *node.shape.last().unwrap();
            if let Some(ga) = slot(nodes, *a) {
                for ((d, gy), yv) in ga
                    .chunks_exact_mut(n)
                    .zip(g.chunks_exact(n))
                    .zip(y.chunks_exact(n))
                {
                    let s: f64 = gy.iter().sum();
                    for j in 0..n {
                        d[j] += gy[j] - yv[j].exp() * s;
                    }
                }
            }
        }
        Op::Concat { inputs, axis } => {
            let (outer, total, inner) = split_axis(&node.shape, *axis);
            let mut offset = 0;
            for v in inputs {
                let width = nodes[v.0].shape[*axis];
                if let Some(gv) = slot(nodes, *v) {
                    let len = width * inner;
                    for o in 0..outer {
                        let src = o * total * inner + offset * inner;
                        kernels::axpy(1.0, &g[src..src + len], &mut gv[o * len..(o + 1) * len]);
                    }
                }
                offset += width;
            }
        }
        Op::Slice { input, axis, start } => {
            let (outer, mid, inner) = split_axis(&nodes[input.0].shape.clone(), *axis);
            let len = node.shape[*axis] * inner;
            if let Some(gi) = slot(nodes, *input) {
                for o in 0..outer {
                    let dst = o * mid * inner + start * inner;
                    kernels::axpy(1.0, &g[o * len..(o + 1) * len], &mut gi[dst..dst + len]);
                }
            }
        }
        Op::Transpose(a) => {
            let (c, r) = (node.shape[0], node.shape[1]);
            if let Some(ga) = slot(nodes, *a) {
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[j * r + i];
                    }
                }
            }
        }
        Op::RepeatRows(a) => {
            let n = node.shape[1];
            if let Some(ga) = slot(nodes, *a) {
                for row in g.chunks_exact(n) {
                    kernels::axpy(1.0, row, ga);
                }
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = slot(nodes, *a) {
                ga.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean(a) => {
            if let Some(ga) = slot(nodes, *a) {
                let scale = g[0] / ga.len() as f64;
                ga.iter_mut().for_each(|d| *d += scale);
            }
        }
        Op::Custom { input, local_grad } => {
            if let Some(gi) = slot(nodes, *input) {
                kernels::axpy(g[0], local_grad, gi);
            }
        }
    }
}

/// Accumulate `sign * g` into `dst`, summing when `dst` is a broadcast scalar.
fn accumulate_broadcast(dst: &mut [f64], g: &[f64], sign: f64) {
    if dst.len() == g.len() {
        kernels::axpy(sign, g, dst);
    } else {
        dst[0] += sign * g.iter().sum::<f64>();
    }
}

fn mul_grad(dst: &mut [f64], g: &[f64], other: &[f64]) {
    let ob = other.len() == 1;
    if dst.len() == g.len() {
        for (i, (d, &gy)) in dst.iter_mut().zip(g).enumerate() {
            *d += gy * other[if ob { 0 } else { i }];
        }
    } else {
        dst[0] += g
            .iter()
            .enumerate()
            .map(|(i, &gy)| gy * other[if ob { 0 } else { i }])
            .sum::<f64>();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_slice(shape, data).unwrap()
    }

    #[test]
    fn identity_matmul_returns_operand() {
        let mut g = Graph::new();
        let eye = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let x = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.matmul(eye, x).unwrap();
        assert_eq!(g.value(y), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn relu_and_softmax_definitions() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[-1.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r), &[0.0, 2.0]);
        let z = g.constant(t(&[2], &[0.0, 0.0]));
        let s = g.softmax(z);
        assert_eq!(g.value(s), &[0.5, 0.5]);
    }

    #[test]
    fn square_sum_gradient() {
        let mut g = Graph::new();
        let x = g.param(&t(&[2], &[1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn product_rule() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::scalar(3.0));
        let y = g.param(&Tensor::scalar(5.0));
        let p = g.mul(x, y).unwrap();
        g.backward(p).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[5.0]);
        assert_eq!(g.grad(y).unwrap(), &[3.0]);
    }

    #[test]
    fn fan_out_accumulates_both_paths() {
        let mut g = Graph::new();
        let x = g.param(&t(&[3], &[0.5, -1.0, 2.0]));
        let a = g.tanh(x);
        let b = g.scale(x, 3.0);
        let s = g.add(a, b).unwrap();
        let loss = g.sum(s);
        g.backward(loss).unwrap();
        for (i, &xv) in [0.5f64, -1.0, 2.0].iter().enumerate() {
            let expect = (1.0 - xv.tanh().powi(2)) + 3.0;
            assert!((g.grad(x).unwrap()[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_errors_name_the_node() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros([2, 3]));
        let b = g.constant(Tensor::zeros([2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("node 2") && msg.contains("matmul") && msg.contains("[2, 3]"));
        let c = g.constant(Tensor::zeros([4]));
        assert!(g.add(a, c).is_err());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::zeros([2]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn scalar_broadcast_in_mul() {
        let mut g = Graph::new();
        let s = g.param(&Tensor::scalar(2.0));
        let x = g.param(&t(&[3], &[1.0, 2.0, 3.0]));
        let y = g.mul(s, x).unwrap();
        assert_eq!(g.value(y), &[2.0, 4.0, 6.0]);
        let l = g.sum(y);
        g.backward(l).unwrap();
        assert_eq!(g.grad(s).unwrap(), &[6.0]);
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(t(&[2, 1], &[9.0, 8.0]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
        let s = g.slice(c, 1, 2, 3).unwrap();
        assert_eq!(g.value(s), &[9.0, 8.0]);
    }

    #[test]
    fn conv_known_value() {
        // 3x3 all-ones kernel over a 3x3 ramp with padding 1: centre sums everything.
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]));
        let w = g.constant(Tensor::full([1, 1, 3, 3], 1.0));
        let y = g.conv2d(x, w, None, (1, 1), (1, 1)).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 3, 3]);
        assert_eq!(g.value(y)[4], 45.0);
        assert_eq!(g.value(y)[0], 1.0 + 2.0 + 4.0 + 5.0);
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let build = || {
            let mut g = Graph::new();
            let x = g.constant(Tensor::from_slice([1, 2, 5, 5], &(0..50).map(|i| (i as f64).sin()).collect::<Vec<_>>()).unwrap());
            let w = g.constant(Tensor::from_slice([3, 2, 3, 3], &(0..54).map(|i| (i as f64).cos()).collect::<Vec<_>>()).unwrap());
            let y = g.conv2d(x, w, None, (2, 1), (1, 1)).unwrap();
            let y = g.tanh(y);
            g.value(y).to_vec()
        };
        let (a, b) = (build(), build());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
