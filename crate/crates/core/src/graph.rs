//! Tape-style reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every primitive in creation order. Inputs of a node
//! always have smaller indices than the node itself, so a reverse sweep over
//! the node list is a valid topological order and visits each node once.
//! Gradients are summed across fan-out.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Shape, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, transpose_b: bool },
    Add { a: Var, b: Var },
    AddBroadcast { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, k: f64 },
    Tanh { a: Var },
    Sigmoid { a: Var },
    Relu { a: Var },
    Softmax { a: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, normed: Box<[f64]>, rstd: Box<[f64]> },
    Concat { inputs: Box<[Var]>, axis: usize },
    Narrow { a: Var, axis: usize, start: usize },
    Sum { a: Var },
    Mean { a: Var },
    Scalar { a: Var, local_grad: Box<[f64]> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation plus, after [`Graph::backward`], its gradients.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

// out[m×n] += a[m×k] · b[k×n]
fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

// out[m×n] += a[m×k] · b[n×k]ᵀ
fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            out[i * n + j] += dot;
        }
    }
}

// out[m×n] += a[k×m]ᵀ · b[k×n]
fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, av) in arow.iter().enumerate() {
            if *av == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Geometry of a (possibly batched) matrix product.
struct MatMulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    // b is shared across the batch, so a can be treated as one tall matrix
    shared_b: bool,
}

fn matmul_dims(a: Shape, b: Shape, transpose_b: bool) -> Result<(MatMulDims, Shape)> {
    let op = if transpose_b { "matmul_nt" } else { "matmul" };
    let (bk, bn, b_batch) = match b.dims() {
        [r, c] => (*r, *c, None),
        [bb, r, c] => (*r, *c, Some(*bb)),
        _ => return Err(shape_err(op, format!("right operand must be rank 2 or 3, got {b:?}"))),
    };
    let (bk, bn) = if transpose_b { (bn, bk) } else { (bk, bn) };
    let (batch, m, k) = match a.dims() {
        [m, k] => (1, *m, *k),
        [bb, m, k] => (*bb, *m, *k),
        _ => return Err(shape_err(op, format!("left operand must be rank 2 or 3, got {a:?}"))),
    };
    if k != bk {
        return Err(shape_err(op, format!("inner extents differ: {a:?} x {b:?}")));
    }
    if let Some(bb) = b_batch {
        if a.rank() != 3 || bb != batch {
            return Err(shape_err(op, format!("batch extents differ: {a:?} x {b:?}")));
        }
    }
    let out = if a.rank() == 3 {
        Shape::new(&[batch, m, bn])?
    } else {
        Shape::new(&[m, bn])?
    };
    Ok((
        MatMulDims {
            batch,
            m,
            k,
            n: bn,
            shared_b: b_batch.is_none(),
        },
        out,
    ))
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
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

    /// Adds a leaf; it participates in backward iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Adds a trainable leaf regardless of the tensor's flag.
    pub fn param(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(true);
        self.leaf(t)
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` with `b` given as `[n×k]` (or batched `[B×n×k]`).
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (d, shape) = matmul_dims(self.shape(a), self.shape(b), transpose_b)?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; shape.numel()];
        let kernel = if transpose_b { gemm_nt } else { gemm_nn };
        if d.shared_b {
            kernel(av, bv, &mut out, d.batch * d.m, d.k, d.n);
        } else {
            let (sa, sb, so) = (d.m * d.k, d.k * d.n, d.m * d.n);
            for i in 0..d.batch {
                kernel(
                    &av[i * sa..(i + 1) * sa],
                    &bv[i * sb..(i + 1) * sb],
                    &mut out[i * so..(i + 1) * so],
                    d.m,
                    d.k,
                    d.n,
                );
            }
        }
        check_finite("matmul", &out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_shape(shape, out)?, Op::MatMul { a, b, transpose_b }, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(sa)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let shape = self.same_shape(name, a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        check_finite(name, &out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_shape(shape, out)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    /// Adds `b` to `a`, repeating `b` over the leading axes of `a`.
    /// `b`'s extents must equal a suffix of `a`'s (a bias row, a positional table).
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (da, db) = (sa.dims(), sb.dims());
        if db.len() > da.len() || da[da.len() - db.len()..] != *db {
            return Err(shape_err("add_broadcast", format!("{sb:?} is not a suffix of {sa:?}")));
        }
        let bv = self.value(b).data();
        let m = bv.len();
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i % m])
            .collect();
        check_finite("add_broadcast", &out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_shape(sa, out)?, Op::AddBroadcast { a, b }, rg))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.value(a);
        let shape = t.shape();
        let out: Vec<f64> = t.data().iter().map(|x| f(*x)).collect();
        check_finite(name, &out)?;
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_shape(shape, out)?, op, rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.unary("scale", a, |x| x * k, Op::Scale { a, k })
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, libm::tanh, Op::Tanh { a })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid { a })
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu { a })
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a);
        if axis >= shape.rank() {
            return Err(shape_err("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, extent, inner) = shape.split_at_axis(axis);
        let x = self.value(a).data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * extent + j) * inner + i;
                let max = (0..extent).map(|j| x[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..extent {
                    let e = libm::exp(x[idx(j)] - max);
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..extent {
                    out[idx(j)] /= total;
                }
            }
        }
        check_finite("softmax", &out)?;
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_shape(shape, out)?, Op::Softmax { a, axis }, rg))
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`
    /// (both of length equal to the last extent).
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::InvalidArgument(format!("layernorm eps must be positive, got {eps}")));
        }
        let shape = self.shape(x);
        let n = shape.last();
        for (name, v) in [("gain", gain), ("bias", bias)] {
            if self.shape(v).numel() != n {
                return Err(shape_err(
                    "layernorm",
                    format!("{name} has {} entries, rows have {n}", self.shape(v).numel()),
                ));
            }
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = shape.rows();
        let mut normed = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / libm::sqrt(var + eps);
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                normed[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        check_finite("layernorm", &out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            Tensor::from_shape(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed: normed.into_boxed_slice(),
                rstd: rstd.into_boxed_slice(),
            },
            rg,
        ))
    }

    /// Concatenates along `axis`; every other extent must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let base = self.shape(first);
        if axis >= base.rank() {
            return Err(shape_err("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let off_axis_ok = s.rank() == base.rank()
                && s.dims().iter().zip(base.dims()).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !off_axis_ok {
                return Err(shape_err("concat", format!("{s:?} incompatible with {base:?} on axis {axis}")));
            }
            total += s.dims()[axis];
        }
        let shape = base.with_dim(axis, total);
        let (outer, _, inner) = shape.split_at_axis(axis);
        let mut out = Vec::with_capacity(shape.numel());
        for o in 0..outer {
            for &v in inputs {
                let ext = self.shape(v).dims()[axis];
                let chunk = ext * inner;
                out.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::from_shape(shape, out)?,
            Op::Concat {
                inputs: inputs.into(),
                axis,
            },
            rg,
        ))
    }

    /// The slice `start..start+len` of `a` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if axis >= s.rank() || len == 0 || start + len > s.dims()[axis] {
            return Err(shape_err(
                "narrow",
                format!("range {start}..{} on axis {axis} of {s:?}", start + len),
            ));
        }
        let (outer, extent, inner) = s.split_at_axis(axis);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::from_shape(s.with_dim(axis, len), out)?,
            Op::Narrow { a, axis, start },
            rg,
        ))
    }

    /// Splits `a` along `axis` into consecutive pieces of the given extents.
    pub fn split(&mut self, a: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let s = self.shape(a);
        if axis >= s.rank() || sizes.iter().sum::<usize>() != s.dims()[axis] {
            return Err(shape_err("split", format!("sizes {sizes:?} on axis {axis} of {s:?}")));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &len in sizes {
            out.push(self.narrow(a, axis, start, len)?);
            start += len;
        }
        Ok(out)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total: f64 = self.value(a).data().iter().sum();
        check_finite("sum", &[total])?;
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(total), Op::Sum { a }, rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        check_finite("mean", &[m])?;
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(m), Op::Mean { a }, rg))
    }

    /// Records a scalar function of `a` whose value and gradient were computed
    /// outside the graph. Used for fused losses.
    pub fn scalar_fn(&mut self, a: Var, value: f64, local_grad: Vec<f64>) -> Result<Var> {
        if local_grad.len() != self.shape(a).numel() {
            return Err(shape_err(
                "scalar_fn",
                format!("gradient length {} for input {:?}", local_grad.len(), self.shape(a)),
            ));
        }
        check_finite("scalar_fn", &[value])?;
        check_finite("scalar_fn", &local_grad)?;
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::scalar(value),
            Op::Scalar {
                a,
                local_grad: local_grad.into_boxed_slice(),
            },
            rg,
        ))
    }

    /// Back-propagates from the scalar `root`. Previous gradients are discarded.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.shape(root).numel() != 1 {
            return Err(shape_err("backward", format!("root must be scalar, got {:?}", self.shape(root))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            if self.nodes[idx].requires_grad {
                self.propagate(idx, &gout, &mut grads);
            }
            grads[idx] = Some(gout);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, idx: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let n = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, transpose_b } => {
                let (d, _) = matmul_dims(self.shape(*a), self.shape(*b), *transpose_b)
                    .expect("shapes validated in forward");
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let (sa, sb, so) = (d.m * d.k, d.k * d.n, d.m * d.n);
                acc(*a, &|ga| {
                    // dA = dC·Bᵀ (or dC·B when B was transposed)
                    let kernel = if *transpose_b { gemm_nn } else { gemm_nt };
                    if d.shared_b {
                        kernel(gout, bv, ga, d.batch * d.m, d.n, d.k);
                    } else {
                        for i in 0..d.batch {
                            kernel(
                                &gout[i * so..(i + 1) * so],
                                &bv[i * sb..(i + 1) * sb],
                                &mut ga[i * sa..(i + 1) * sa],
                                d.m,
                                d.n,
                                d.k,
                            );
                        }
                    }
                });
                acc(*b, &|gb| {
                    // dB = Aᵀ·dC, or dBᵀ = dCᵀ·A when transposed
                    let (rows, blocks) = if d.shared_b { (d.batch * d.m, 1) } else { (d.m, d.batch) };
                    for i in 0..blocks {
                        let a_blk = &av[i * sa..i * sa + rows * d.k];
                        let g_blk = &gout[i * so..i * so + rows * d.n];
                        let out = &mut gb[i * sb..(i + 1) * sb];
                        if *transpose_b {
                            gemm_tn(g_blk, a_blk, out, d.n, rows, d.k);
                        } else {
                            gemm_tn(a_blk, g_blk, out, d.k, rows, d.n);
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                acc(*a, &|g| g.iter_mut().zip(gout).for_each(|(x, y)| *x += y));
                acc(*b, &|g| g.iter_mut().zip(gout).for_each(|(x, y)| *x += y));
            }
            Op::AddBroadcast { a, b } => {
                acc(*a, &|g| g.iter_mut().zip(gout).for_each(|(x, y)| *x += y));
                acc(*b, &|g| {
                    let m = g.len();
                    for (i, y) in gout.iter().enumerate() {
                        g[i % m] += y;
                    }
                });
            }
            Op::Sub { a, b } => {
                acc(*a, &|g| g.iter_mut().zip(gout).for_each(|(x, y)| *x += y));
                acc(*b, &|g| g.iter_mut().zip(gout).for_each(|(x, y)| *x -= y));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * bv[i];
                    }
                });
                acc(*b, &|g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * av[i];
                    }
                });
            }
            Op::Scale { a, k } => {
                acc(*a, &|g| g.iter_mut().zip(gout).for_each(|(x, y)| *x += k * y));
            }
            Op::Tanh { a } => {
                let y = node.value.data();
                acc(*a, &|g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Sigmoid { a } => {
                let y = node.value.data();
                acc(*a, &|g| {
                    for i in 0..g.len() {
                        g[i] += gout[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Relu { a } => {
                let x = self.value(*a).data();
                acc(*a, &|g| {
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            g[i] += gout[i];
                        }
                    }
                });
            }
            Op::Softmax { a, axis } => {
                let y = node.value.data();
                let (outer, extent, inner) = node.value.shape().split_at_axis(*axis);
                acc(*a, &|g| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * extent + j) * inner + i;
                            let dot: f64 = (0..extent).map(|j| gout[idx(j)] * y[idx(j)]).sum();
                            for j in 0..extent {
                                g[idx(j)] += y[idx(j)] * (gout[idx(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                rstd,
            } => {
                let n = node.value.shape().last();
                let rows = node.value.shape().rows();
                let gv = self.value(*gain).data();
                acc(*x, &|gx| {
                    for r in 0..rows {
                        let go = &gout[r * n..(r + 1) * n];
                        let h = &normed[r * n..(r + 1) * n];
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for j in 0..n {
                            let d = go[j] * gv[j];
                            mean_d += d;
                            mean_dh += d * h[j];
                        }
                        mean_d /= n as f64;
                        mean_dh /= n as f64;
                        for j in 0..n {
                            let d = go[j] * gv[j];
                            gx[r * n + j] += rstd[r] * (d - mean_d - h[j] * mean_dh);
                        }
                    }
                });
                acc(*gain, &|gg| {
                    for (i, (go, h)) in gout.iter().zip(normed.iter()).enumerate() {
                        gg[i % n] += go * h;
                    }
                });
                acc(*bias, &|gb| {
                    for (i, go) in gout.iter().enumerate() {
                        gb[i % n] += go;
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = node.value.shape().split_at_axis(*axis);
                let total = node.value.shape().dims()[*axis];
                let mut offset = 0;
                for &v in inputs.iter() {
                    let ext = self.shape(v).dims()[*axis];
                    acc(v, &|g| {
                        for o in 0..outer {
                            let src = &gout[(o * total + offset) * inner..(o * total + offset + ext) * inner];
                            let dst = &mut g[o * ext * inner..(o + 1) * ext * inner];
                            dst.iter_mut().zip(src).for_each(|(x, y)| *x += y);
                        }
                    });
                    offset += ext;
                }
            }
            Op::Narrow { a, axis, start } => {
                let (outer, extent, inner) = self.shape(*a).split_at_axis(*axis);
                let len = node.value.shape().dims()[*axis];
                acc(*a, &|g| {
                    for o in 0..outer {
                        let base = (o * extent + start) * inner;
                        let src = &gout[o * len * inner..(o + 1) * len * inner];
                        g[base..base + len * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Sum { a } => {
                acc(*a, &|g| g.iter_mut().for_each(|x| *x += gout[0]));
            }
            Op::Mean { a } => {
                acc(*a, &|g| {
                    let k = gout[0] / g.len() as f64;
                    g.iter_mut().for_each(|x| *x += k);
                });
            }
            Op::Scalar { a, local_grad } => {
                acc(*a, &|g| {
                    g.iter_mut()
                        .zip(local_grad.iter())
                        .for_each(|(x, y)| *x += gout[0] * y);
                });
            }
        }
    }
}
