//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value; node ids are therefore
//! topologically ordered and `backward` is a single reverse sweep.

use super::{Gradients, NumericsError, ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Pointwise operations exposed through [`Graph::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Relu,
    Sin,
    Cos,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Abs(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    AddRowBias(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        padding: usize,
        cols: Vec<f64>,
    },
    Unfold3x3(NodeId),
    GatherRows(NodeId, Vec<usize>),
    ConcatCols(Vec<NodeId>),
    ScaleRows(NodeId, Vec<f64>),
    OuterAddRows(NodeId, NodeId),
    Reshape(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
    needs_grad: bool,
}

/// Computation tape. Values are recorded eagerly; gradients on demand.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: Vec<Option<NodeId>>,
}

/// `c = alpha * a * b + beta * c` for strided row-major views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: extents and strides describe regions inside the borrowed slices;
    // callers derive them from tensor shapes validated before the call.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn same_or_scalar(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>, NumericsError> {
    if a.shape() == b.shape() || b.is_scalar() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else {
        Err(NumericsError::dimension(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ))
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    match (a.numel() == b.numel(), a.is_scalar(), b.is_scalar()) {
        (true, _, _) => a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
        (false, _, true) => {
            let y = b.data()[0];
            a.data().iter().map(|&x| f(x, y)).collect()
        }
        _ => {
            let x = a.data()[0];
            b.data().iter().map(|&y| f(x, y)).collect()
        }
    }
}

/// Sum a broadcast gradient back onto an operand of `target_len` values.
fn reduce_to(grad: Vec<f64>, target_len: usize) -> Vec<f64> {
    if grad.len() == target_len {
        grad
    } else {
        vec![grad.iter().sum()]
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs_need: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            param: None,
            needs_grad: inputs_need,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Bind a parameter as a differentiable leaf. Binding the same id twice
    /// returns the existing node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if self.bound.len() < store.len() {
            self.bound.resize(store.len(), None);
        }
        if let Some(node) = self.bound[id.0] {
            return node;
        }
        let node = self.push(store.get(id).clone(), Op::Leaf, true);
        self.nodes[node.0].param = Some(id);
        self.bound[id.0] = Some(node);
        node
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(NumericsError::dimension(
                "matmul",
                format!("{m}x{k} by {k2}x{n}"),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            k,
            1,
            self.value(b).data(),
            n,
            1,
            &mut out,
            0.0,
        );
        let need = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_vec(vec![m, n], out)?, Op::MatMul(a, b), need))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        let (r, c) = self.value(a).dims2()?;
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let need = self.needs(a);
        Ok(self.push(Tensor::from_vec(vec![c, r], out)?, Op::Transpose(a), need))
    }

    pub fn elementwise(
        &mut self,
        op: ElementwiseOp,
        inputs: &[NodeId],
    ) -> Result<NodeId, NumericsError> {
        let arity = match op {
            ElementwiseOp::Add | ElementwiseOp::Sub | ElementwiseOp::Mul => 2,
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(NumericsError::Contract(format!(
                "{op:?} takes {arity} operand(s), got {}",
                inputs.len()
            )));
        }
        match op {
            ElementwiseOp::Add => self.add(inputs[0], inputs[1]),
            ElementwiseOp::Sub => self.sub(inputs[0], inputs[1]),
            ElementwiseOp::Mul => self.mul(inputs[0], inputs[1]),
            ElementwiseOp::Relu => Ok(self.relu(inputs[0])),
            ElementwiseOp::Sin => Ok(self.sin(inputs[0])),
            ElementwiseOp::Cos => Ok(self.cos(inputs[0])),
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, NumericsError> {
        let shape = same_or_scalar(name, self.value(a), self.value(b))?;
        let out = zip_broadcast(self.value(a), self.value(b), f);
        let need = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_vec(shape, out)?, op, need))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let v = self.value(a);
        let out = Tensor::from_vec(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect())
            .expect("unary preserves shape");
        let need = self.needs(a);
        self.push(out, op, need)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.unary(a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::sin, Op::Sin(a))
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::cos, Op::Cos(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        let need = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), need)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let need = self.needs(a);
        self.push(Tensor::scalar(s), Op::Mean(a), need)
    }

    /// `x[m×n] + bias[n]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, NumericsError> {
        let (m, n) = self.value(x).dims2()?;
        if self.value(bias).numel() != n {
            return Err(NumericsError::dimension(
                "add_row_bias",
                format!("bias of {} for {m}x{n}", self.value(bias).numel()),
            ));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(n) {
            row.iter_mut().zip(b).for_each(|(o, &bv)| *o += bv);
        }
        let need = self.needs(x) || self.needs(bias);
        Ok(self.push(
            Tensor::from_vec(vec![m, n], out)?,
            Op::AddRowBias(x, bias),
            need,
        ))
    }

    /// Zero-padded 2-D cross-correlation of a `cin×h×w` input.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        padding: usize,
    ) -> Result<NodeId, NumericsError> {
        let (cin, h, w) = match self.shape(input) {
            [c, h, w] => (*c, *h, *w),
            s => {
                return Err(NumericsError::dimension(
                    "conv2d",
                    format!("input must be 3-D, got {s:?}"),
                ))
            }
        };
        let (cout, kc, kh, kw) = match self.shape(kernel) {
            [o, c, kh, kw] => (*o, *c, *kh, *kw),
            s => {
                return Err(NumericsError::dimension(
                    "conv2d",
                    format!("kernel must be 4-D, got {s:?}"),
                ))
            }
        };
        if kc != cin {
            return Err(NumericsError::dimension(
                "conv2d",
                format!("kernel expects {kc} channels, input has {cin}"),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(NumericsError::dimension(
                "conv2d",
                format!("kernel {kh}x{kw} must be odd"),
            ));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(NumericsError::dimension(
                "conv2d",
                "kernel larger than padded input".into(),
            ));
        }
        if let Some(b) = bias {
            if self.value(b).numel() != cout {
                return Err(NumericsError::dimension(
                    "conv2d",
                    "bias length differs from output channels".into(),
                ));
            }
        }
        let oh = h + 2 * padding - kh + 1;
        let ow = w + 2 * padding - kw + 1;
        let cols = im2col(self.value(input).data(), cin, h, w, kh, kw, padding, oh, ow);
        let patch = cin * kh * kw;
        let mut out = vec![0.0; cout * oh * ow];
        gemm(
            cout,
            patch,
            oh * ow,
            self.value(kernel).data(),
            patch,
            1,
            &cols,
            oh * ow,
            1,
            &mut out,
            0.0,
        );
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for (o, plane) in out.chunks_exact_mut(oh * ow).enumerate() {
                plane.iter_mut().for_each(|v| *v += bv[o]);
            }
        }
        let need = self.needs(input) || self.needs(kernel) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            Tensor::from_vec(vec![cout, oh, ow], out)?,
            Op::Conv2d {
                input,
                kernel,
                bias,
                padding,
                cols,
            },
            need,
        ))
    }

    /// `c×h×w` map to `(h·w)×(9c)` rows of zero-padded 3×3 neighbourhoods.
    /// Column `ch·9 + (di·3 + dj)` holds channel `ch` at offset `(di−1, dj−1)`.
    pub fn unfold3x3(&mut self, input: NodeId) -> Result<NodeId, NumericsError> {
        let (c, h, w) = match self.shape(input) {
            [c, h, w] => (*c, *h, *w),
            s => {
                return Err(NumericsError::dimension(
                    "unfold3x3",
                    format!("input must be 3-D, got {s:?}"),
                ))
            }
        };
        let src = self.value(input).data();
        let width = 9 * c;
        let mut out = vec![0.0; h * w * width];
        for_each_unfold(c, h, w, |row, col, s| out[row * width + col] = src[s]);
        let need = self.needs(input);
        Ok(self.push(
            Tensor::from_vec(vec![h * w, width], out)?,
            Op::Unfold3x3(input),
            need,
        ))
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId, NumericsError> {
        let (r, c) = self.value(a).dims2()?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(NumericsError::dimension(
                "gather_rows",
                format!("row {bad} of {r}"),
            ));
        }
        if indices.is_empty() {
            return Err(NumericsError::dimension(
                "gather_rows",
                "no rows requested".into(),
            ));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let need = self.needs(a);
        Ok(self.push(
            Tensor::from_vec(vec![indices.len(), c], out)?,
            Op::GatherRows(a, indices.to_vec()),
            need,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericsError> {
        let first = *parts
            .first()
            .ok_or_else(|| NumericsError::Contract("concat of nothing".into()))?;
        let rows = self.value(first).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(NumericsError::dimension(
                    "concat_cols",
                    format!("{r} rows vs {rows}"),
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &c) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + c]
                    .copy_from_slice(&src[r * c..(r + 1) * c]);
            }
            offset += c;
        }
        let need = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::from_vec(vec![rows, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            need,
        ))
    }

    /// Multiply row `i` by the constant `weights[i]`.
    pub fn scale_rows(&mut self, a: NodeId, weights: &[f64]) -> Result<NodeId, NumericsError> {
        let (r, c) = self.value(a).dims2()?;
        if weights.len() != r {
            return Err(NumericsError::dimension(
                "scale_rows",
                format!("{} weights for {r} rows", weights.len()),
            ));
        }
        let mut out = self.value(a).data().to_vec();
        for (row, &wt) in out.chunks_exact_mut(c).zip(weights) {
            row.iter_mut().for_each(|v| *v *= wt);
        }
        let need = self.needs(a);
        Ok(self.push(
            Tensor::from_vec(vec![r, c], out)?,
            Op::ScaleRows(a, weights.to_vec()),
            need,
        ))
    }

    /// Row `i·M + j` of the result is `a[i] + b[j]` for `a: N×h`, `b: M×h`.
    pub fn outer_add_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (n, h) = self.value(a).dims2()?;
        let (m, h2) = self.value(b).dims2()?;
        if h != h2 {
            return Err(NumericsError::dimension(
                "outer_add_rows",
                format!("widths {h} vs {h2}"),
            ));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * m * h);
        for i in 0..n {
            let ar = &av[i * h..(i + 1) * h];
            for j in 0..m {
                out.extend(ar.iter().zip(&bv[j * h..(j + 1) * h]).map(|(x, y)| x + y));
            }
        }
        let need = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::from_vec(vec![n * m, h], out)?,
            Op::OuterAddRows(a, b),
            need,
        ))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId, NumericsError> {
        let t = self.value(a).reshaped(shape)?;
        let need = self.needs(a);
        Ok(self.push(t, Op::Reshape(a), need))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: NodeId, store: &ParamStore) -> Result<Gradients, NumericsError> {
        if !self.value(loss).is_scalar() {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::zeros_like(store);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let mut send = |id: NodeId, contribution: Vec<f64>| {
                if !self.nodes[id.0].needs_grad {
                    return;
                }
                match &mut grads[id.0] {
                    Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contribution),
                }
            };
            match &node.op {
                Op::Leaf => {
                    if let Some(pid) = node.param {
                        let acc = out.get_mut(pid).data_mut();
                        acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v);
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2()?;
                    let n = self.value(*b).dims2()?.1;
                    if self.needs(*a) {
                        let mut da = vec![0.0; m * k];
                        gemm(m, n, k, &g, n, 1, self.value(*b).data(), 1, n, &mut da, 0.0);
                        send(*a, da);
                    }
                    if self.needs(*b) {
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, self.value(*a).data(), 1, k, &g, n, 1, &mut db, 0.0);
                        send(*b, db);
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = self.value(*a).dims2()?;
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] = g[j * r + i];
                        }
                    }
                    send(*a, da);
                }
                Op::Add(a, b) => {
                    let (la, lb) = (self.value(*a).numel(), self.value(*b).numel());
                    send(*a, reduce_to(g.clone(), la));
                    send(*b, reduce_to(g, lb));
                }
                Op::Sub(a, b) => {
                    let (la, lb) = (self.value(*a).numel(), self.value(*b).numel());
                    send(*a, reduce_to(g.clone(), la));
                    send(*b, reduce_to(g.iter().map(|v| -v).collect(), lb));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let ga = zip_broadcast_grad(&g, vb);
                        send(*a, reduce_to(ga, va.numel()));
                    }
                    if self.needs(*b) {
                        let gb = zip_broadcast_grad(&g, va);
                        send(*b, reduce_to(gb, vb.numel()));
                    }
                }
                Op::Scale(a, f) => send(*a, g.iter().map(|v| v * f).collect()),
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    send(
                        *a,
                        g.iter()
                            .zip(x)
                            .map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 })
                            .collect(),
                    );
                }
                Op::Sin(a) => {
                    let x = self.value(*a).data();
                    send(*a, g.iter().zip(x).map(|(gv, xv)| gv * xv.cos()).collect());
                }
                Op::Cos(a) => {
                    let x = self.value(*a).data();
                    send(*a, g.iter().zip(x).map(|(gv, xv)| -gv * xv.sin()).collect());
                }
                Op::Abs(a) => {
                    let x = self.value(*a).data();
                    send(
                        *a,
                        g.iter()
                            .zip(x)
                            .map(|(gv, &xv)| {
                                if xv > 0.0 {
                                    *gv
                                } else if xv < 0.0 {
                                    -gv
                                } else {
                                    0.0
                                }
                            })
                            .collect(),
                    );
                }
                Op::Sum(a) => send(*a, vec![g[0]; self.value(*a).numel()]),
                Op::Mean(a) => {
                    let n = self.value(*a).numel();
                    send(*a, vec![g[0] / n as f64; n]);
                }
                Op::AddRowBias(x, bias) => {
                    let n = self.value(*bias).numel();
                    if self.needs(*bias) {
                        let mut gb = vec![0.0; n];
                        for row in g.chunks_exact(n) {
                            gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                        }
                        send(*bias, gb);
                    }
                    send(*x, g);
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    padding,
                    cols,
                } => {
                    let (cin, h, w) = match self.shape(*input) {
                        [c, h, w] => (*c, *h, *w),
                        _ => unreachable!("validated at forward"),
                    };
                    let (cout, kh, kw) = match self.shape(*kernel) {
                        [o, _, kh, kw] => (*o, *kh, *kw),
                        _ => unreachable!("validated at forward"),
                    };
                    let (oh, ow) = (node.value.shape()[1], node.value.shape()[2]);
                    let patch = cin * kh * kw;
                    let plane = oh * ow;
                    if let Some(b) = bias {
                        if self.needs(*b) {
                            send(*b, g.chunks_exact(plane).map(|p| p.iter().sum()).collect());
                        }
                    }
                    if self.needs(*kernel) {
                        let mut dk = vec![0.0; cout * patch];
                        gemm(
                            cout, plane, patch, &g, plane, 1, cols, 1, plane, &mut dk, 0.0,
                        );
                        send(*kernel, dk);
                    }
                    if self.needs(*input) {
                        let mut dcols = vec![0.0; patch * plane];
                        gemm(
                            patch,
                            cout,
                            plane,
                            self.value(*kernel).data(),
                            1,
                            patch,
                            &g,
                            plane,
                            1,
                            &mut dcols,
                            0.0,
                        );
                        send(*input, col2im(&dcols, cin, h, w, kh, kw, *padding, oh, ow));
                    }
                }
                Op::Unfold3x3(a) => {
                    let (c, h, w) = match self.shape(*a) {
                        [c, h, w] => (*c, *h, *w),
                        _ => unreachable!("validated at forward"),
                    };
                    let width = 9 * c;
                    let mut da = vec![0.0; c * h * w];
                    for_each_unfold(c, h, w, |row, col, s| da[s] += g[row * width + col]);
                    send(*a, da);
                }
                Op::GatherRows(a, indices) => {
                    let (r, c) = self.value(*a).dims2()?;
                    let mut da = vec![0.0; r * c];
                    for (k, &i) in indices.iter().enumerate() {
                        da[i * c..(i + 1) * c]
                            .iter_mut()
                            .zip(&g[k * c..(k + 1) * c])
                            .for_each(|(d, v)| *d += v);
                    }
                    send(*a, da);
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.shape()[1];
                    let rows = node.value.shape()[0];
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).shape()[1];
                        if self.needs(p) {
                            let mut dp = Vec::with_capacity(rows * c);
                            for r in 0..rows {
                                dp.extend_from_slice(
                                    &g[r * total + offset..r * total + offset + c],
                                );
                            }
                            send(p, dp);
                        }
                        offset += c;
                    }
                }
                Op::ScaleRows(a, weights) => {
                    let c = node.value.shape()[1];
                    let mut da = g;
                    for (row, &wt) in da.chunks_exact_mut(c).zip(weights) {
                        row.iter_mut().for_each(|v| *v *= wt);
                    }
                    send(*a, da);
                }
                Op::OuterAddRows(a, b) => {
                    let (n, h) = self.value(*a).dims2()?;
                    let m = self.value(*b).dims2()?.0;
                    let mut da = vec![0.0; n * h];
                    let mut db = vec![0.0; m * h];
                    for i in 0..n {
                        for j in 0..m {
                            let row = &g[(i * m + j) * h..(i * m + j + 1) * h];
                            da[i * h..(i + 1) * h]
                                .iter_mut()
                                .zip(row)
                                .for_each(|(d, v)| *d += v);
                            db[j * h..(j + 1) * h]
                                .iter_mut()
                                .zip(row)
                                .for_each(|(d, v)| *d += v);
                        }
                    }
                    send(*a, da);
                    send(*b, db);
                }
                Op::Reshape(a) => send(*a, g),
            }
        }
        Ok(out)
    }
}

fn zip_broadcast_grad(g: &[f64], other: &Tensor) -> Vec<f64> {
    if other.is_scalar() && g.len() != 1 {
        let s = other.data()[0];
        g.iter().map(|a| a * s).collect()
    } else {
        g.iter().zip(other.data()).map(|(a, b)| a * b).collect()
    }
}

fn for_each_unfold(c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize)) {
    for i in 0..h {
        for j in 0..w {
            let row = i * w + j;
            for di in 0..3 {
                let Some(si) = (i + di).checked_sub(1).filter(|&v| v < h) else {
                    continue;
                };
                for dj in 0..3 {
                    let Some(sj) = (j + dj).checked_sub(1).filter(|&v| v < w) else {
                        continue;
                    };
                    for ch in 0..c {
                        f(row, ch * 9 + di * 3 + dj, ch * h * w + si * w + sj);
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    src: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let plane = oh * ow;
    let mut cols = vec![0.0; cin * kh * kw * plane];
    for c in 0..cin {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oi in 0..oh {
                    let Some(si) = (oi + ki).checked_sub(pad).filter(|&v| v < h) else {
                        continue;
                    };
                    for oj in 0..ow {
                        let Some(sj) = (oj + kj).checked_sub(pad).filter(|&v| v < w) else {
                            continue;
                        };
                        dst[oi * ow + oj] = src[(c * h + si) * w + sj];
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let plane = oh * ow;
    let mut out = vec![0.0; cin * h * w];
    for c in 0..cin {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let srcrow = &cols[row * plane..(row + 1) * plane];
                for oi in 0..oh {
                    let Some(si) = (oi + ki).checked_sub(pad).filter(|&v| v < h) else {
                        continue;
                    };
                    for oj in 0..ow {
                        let Some(sj) = (oj + kj).checked_sub(pad).filter(|&v| v < w) else {
                            continue;
                        };
                        out[(c * h + si) * w + sj] += srcrow[oi * ow + oj];
                    }
                }
            }
        }
    }
    out
}
