//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of one forward pass in creation order,
//! which is also a topological order. [`Graph::backward`] walks the record
//! once in reverse. Parameters are borrowed from a [`ParamSet`] and never
//! copied onto the graph; their gradients come back as [`Gradients`].
//!
//! Shape mismatches between graph operations are programming errors and
//! panic. Model-level entry points validate user-facing dimensions first and
//! report [`Error::Config`].

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{Gradients, ParamId, ParamSet, Tensor};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Square(NodeId),
    Clamp { x: NodeId, lo: f64, hi: f64 },
    Min(NodeId, NodeId),
    Concat(Vec<NodeId>),
    Slice { x: NodeId, start: usize },
    BroadcastRows(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumCols(NodeId),
    GaussianLogDensity { mean: NodeId, log_std: NodeId, value: Tensor },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input | Op::Param(_) => Vec::new(),
            Op::Affine { x, w, b } => vec![*x, *w, *b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Min(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Square(a)
            | Op::BroadcastRows(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumCols(a) => vec![*a],
            Op::Clamp { x, .. } | Op::Slice { x, .. } => vec![*x],
            Op::Concat(xs) => xs.clone(),
            Op::GaussianLogDensity { mean, log_std, .. } => vec![*mean, *log_std],
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    /// `None` for parameter leaves, whose value lives in the parameter set.
    value: Option<Tensor>,
    rows: usize,
    cols: usize,
    needs_grad: bool,
}

/// One forward pass worth of recorded operations.
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph { params, nodes: Vec::new() }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let n = &self.nodes[id.0];
        match (&n.value, &n.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.params.value(*p),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let needs_grad = match &op {
            Op::Input => false,
            Op::Param(_) => true,
            other => other.inputs().iter().any(|i| self.needs(*i)),
        };
        let (rows, cols) = value.shape();
        self.nodes.push(Node { op, value: Some(value), rows, cols, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn map(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let src = self.value(x);
        let mut out = Tensor::zeros(src.rows(), src.cols());
        for (o, v) in out.data_mut().iter_mut().zip(src.data()) {
            *o = f(*v);
        }
        self.push(op, out)
    }

    fn zip(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        let mut out = Tensor::zeros(va.rows(), va.cols());
        for ((o, x), y) in out.data_mut().iter_mut().zip(va.data()).zip(vb.data()) {
            *o = f(*x, *y);
        }
        self.push(op, out)
    }

    /// A constant leaf.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Input, t)
    }

    /// A leaf bound to a trainable tensor.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        let (rows, cols) = self.params.value(id).shape();
        self.nodes.push(Node { op: Op::Param(id), value: None, rows, cols, needs_grad: true });
        NodeId(self.nodes.len() - 1)
    }

    /// `x W^T + b` with `x: B x in`, `W: out x in`, `b: 1 x out`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        assert_eq!(xv.cols(), wv.cols(), "affine input width");
        assert_eq!(bv.shape(), (1, wv.rows()), "affine bias shape");
        let (batch, out_dim) = (xv.rows(), wv.rows());
        let mut out = Tensor::zeros(batch, out_dim);
        for r in 0..batch {
            let xr = xv.row(r);
            let yr = out.row_mut(r);
            for (o, y) in yr.iter_mut().enumerate() {
                *y = bv.data()[o] + math::dot(xr, wv.row(o));
            }
        }
        self.push(Op::Affine { x, w, b }, out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, |x, y| if x <= y { x } else { y }, Op::Min(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.map(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, math::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, math::sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.map(a, math::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.map(a, |x| x * x, Op::Square(a))
    }

    /// Elementwise clamp; the gradient passes where `lo <= x <= hi`.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        self.map(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let v = self.value(*p);
                assert_eq!(v.rows(), rows, "concat row mismatch");
                out.row_mut(r)[off..off + v.cols()].copy_from_slice(v.row(r));
                off += v.cols();
            }
        }
        self.push(Op::Concat(parts.to_vec()), out)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(x);
        assert!(start + len <= v.cols(), "slice out of range");
        let mut out = Tensor::zeros(v.rows(), len);
        for r in 0..v.rows() {
            out.row_mut(r).copy_from_slice(&v.row(r)[start..start + len]);
        }
        self.push(Op::Slice { x, start }, out)
    }

    /// Repeats a `1 x C` node into `rows x C`.
    pub fn broadcast_rows(&mut self, x: NodeId, rows: usize) -> NodeId {
        let v = self.value(x);
        assert_eq!(v.rows(), 1, "broadcast source must be a row");
        let mut out = Tensor::zeros(rows, v.cols());
        for r in 0..rows {
            out.row_mut(r).copy_from_slice(v.row(0));
        }
        self.push(Op::BroadcastRows(x), out)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Op::Mean(x), Tensor::scalar(s))
    }

    /// Row sums: `B x C -> B x 1`.
    pub fn sum_cols(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let mut out = Tensor::zeros(v.rows(), 1);
        for r in 0..v.rows() {
            out.data_mut()[r] = v.row(r).iter().sum();
        }
        self.push(Op::SumCols(x), out)
    }

    /// Diagonal Gaussian log-density of a constant `value`, one row per sample.
    ///
    /// `log_std` is either `B x D` or a `1 x D` row shared by every sample.
    pub fn gaussian_log_density(&mut self, mean: NodeId, log_std: NodeId, value: Tensor) -> NodeId {
        let (m, s) = (self.value(mean), self.value(log_std));
        assert_eq!(m.shape(), value.shape(), "gaussian value shape");
        assert!(s.cols() == m.cols() && (s.rows() == m.rows() || s.rows() == 1), "log-std shape");
        let mut out = Tensor::zeros(m.rows(), 1);
        for r in 0..m.rows() {
            let sr = if s.rows() == 1 { s.row(0) } else { s.row(r) };
            let mut lp = 0.0;
            for ((mu, ls), x) in m.row(r).iter().zip(sr).zip(value.row(r)) {
                let z = (x - mu) * math::exp(-ls);
                lp += -0.5 * z * z - ls - 0.5 * math::LN_2PI;
            }
            out.data_mut()[r] = lp;
        }
        self.push(Op::GaussianLogDensity { mean, log_std, value }, out)
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Structural(format!(
                "loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.op.inputs().iter().any(|inp| inp.0 >= i) {
                return Err(Error::Structural(format!("node {i} is not in topological order")));
            }
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut out: Vec<Option<Tensor>> = Vec::with_capacity(self.params.len());
        out.resize_with(self.params.len(), || None);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, i, &g, &mut grads, &mut out);
        }
        Ok(Gradients { per_param: out })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], id: NodeId) -> Option<&'a mut Vec<f64>> {
        let n = &self.nodes[id.0];
        if !n.needs_grad {
            return None;
        }
        Some(grads[id.0].get_or_insert_with(|| vec![0.0; n.rows * n.cols]))
    }

    fn propagate(
        &self,
        node: &Node,
        index: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut [Option<Tensor>],
    ) {
        let this = NodeId(index);
        match &node.op {
            Op::Input => {}
            Op::Param(p) => {
                let t = out[p.0].get_or_insert_with(|| Tensor::zeros(node.rows, node.cols));
                for (a, b) in t.data_mut().iter_mut().zip(g) {
                    *a += *b;
                }
            }
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (batch, out_dim, in_dim) = (xv.rows(), wv.rows(), wv.cols());
                if let Some(dx) = self.slot(grads, *x) {
                    for r in 0..batch {
                        let dxr = &mut dx[r * in_dim..(r + 1) * in_dim];
                        for o in 0..out_dim {
                            let gy = g[r * out_dim + o];
                            if gy != 0.0 {
                                math::axpy(dxr, wv.row(o), gy);
                            }
                        }
                    }
                }
                if let Some(dw) = self.slot(grads, *w) {
                    for r in 0..batch {
                        let xr = xv.row(r);
                        for o in 0..out_dim {
                            let gy = g[r * out_dim + o];
                            if gy != 0.0 {
                                math::axpy(&mut dw[o * in_dim..(o + 1) * in_dim], xr, gy);
                            }
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for r in 0..batch {
                        for o in 0..out_dim {
                            db[o] += g[r * out_dim + o];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.slot(grads, *a) {
                    math::axpy(da, g, 1.0);
                }
                if let Some(db) = self.slot(grads, *b) {
                    math::axpy(db, g, 1.0);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.slot(grads, *a) {
                    math::axpy(da, g, 1.0);
                }
                if let Some(db) = self.slot(grads, *b) {
                    math::axpy(db, g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, gi), y) in da.iter_mut().zip(g).zip(vb.data()) {
                        *d += gi * y;
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((d, gi), x) in db.iter_mut().zip(g).zip(va.data()) {
                        *d += gi * x;
                    }
                }
            }
            Op::Min(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let pick_a: Vec<bool> = va.data().iter().zip(vb.data()).map(|(x, y)| x <= y).collect();
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, gi), &p) in da.iter_mut().zip(g).zip(&pick_a) {
                        if p {
                            *d += gi;
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((d, gi), &p) in db.iter_mut().zip(g).zip(&pick_a) {
                        if !p {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(da) = self.slot(grads, *a) {
                    math::axpy(da, g, *c);
                }
            }
            Op::AddScalar(a) => {
                if let Some(da) = self.slot(grads, *a) {
                    math::axpy(da, g, 1.0);
                }
            }
            Op::Tanh(a) => {
                let y = self.value(this);
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, gi), yi) in da.iter_mut().zip(g).zip(y.data()) {
                        *d += gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = self.value(this);
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, gi), yi) in da.iter_mut().zip(g).zip(y.data()) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::Exp(a) => {
                let y = self.value(this);
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, gi), yi) in da.iter_mut().zip(g).zip(y.data()) {
                        *d += gi * yi;
                    }
                }
            }
            Op::Square(a) => {
                let x = self.value(*a);
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, gi), xi) in da.iter_mut().zip(g).zip(x.data()) {
                        *d += 2.0 * gi * xi;
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x);
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, gi), v) in dx.iter_mut().zip(g).zip(xv.data()) {
                        if *v >= *lo && *v <= *hi {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let rows = node.rows;
                let mut off = 0;
                for p in parts {
                    let pc = self.nodes[p.0].cols;
                    if let Some(dp) = self.slot(grads, *p) {
                        for r in 0..rows {
                            let src = &g[r * node.cols + off..r * node.cols + off + pc];
                            math::axpy(&mut dp[r * pc..(r + 1) * pc], src, 1.0);
                        }
                    }
                    off += pc;
                }
            }
            Op::Slice { x, start } => {
                let xc = self.nodes[x.0].cols;
                if let Some(dx) = self.slot(grads, *x) {
                    for r in 0..node.rows {
                        let dst = &mut dx[r * xc + start..r * xc + start + node.cols];
                        math::axpy(dst, &g[r * node.cols..(r + 1) * node.cols], 1.0);
                    }
                }
            }
            Op::BroadcastRows(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    for r in 0..node.rows {
                        math::axpy(dx, &g[r * node.cols..(r + 1) * node.cols], 1.0);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    let s = g[0] / dx.len() as f64;
                    dx.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::SumCols(x) => {
                let xc = self.nodes[x.0].cols;
                if let Some(dx) = self.slot(grads, *x) {
                    for r in 0..node.rows {
                        dx[r * xc..(r + 1) * xc].iter_mut().for_each(|d| *d += g[r]);
                    }
                }
            }
            Op::GaussianLogDensity { mean, log_std, value } => {
                let (m, s) = (self.value(*mean), self.value(*log_std));
                let d = m.cols();
                let shared = s.rows() == 1;
                // z_rd = (x - mu) / sigma, computed once for both inputs.
                let mut z = vec![0.0; m.len()];
                for r in 0..m.rows() {
                    let sr = if shared { s.row(0) } else { s.row(r) };
                    for c in 0..d {
                        z[r * d + c] = (value.get(r, c) - m.get(r, c)) * math::exp(-sr[c]);
                    }
                }
                if let Some(dm) = self.slot(grads, *mean) {
                    for r in 0..m.rows() {
                        let sr = if shared { s.row(0) } else { s.row(r) };
                        for c in 0..d {
                            dm[r * d + c] += g[r] * z[r * d + c] * math::exp(-sr[c]);
                        }
                    }
                }
                if let Some(ds) = self.slot(grads, *log_std) {
                    for r in 0..m.rows() {
                        let base = if shared { 0 } else { r * d };
                        for c in 0..d {
                            let zz = z[r * d + c];
                            ds[base + c] += g[r] * (zz * zz - 1.0);
                        }
                    }
                }
            }
        }
    }
}
