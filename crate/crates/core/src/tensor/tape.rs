use std::cell::OnceCell;
use std::rc::Rc;

use super::conv::{conv_input_grad, conv_weight_grad, valid_conv};
use super::{Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which input channels feed each output channel of a convolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Support {
    c_in: usize,
    per_out: Vec<Vec<usize>>,
}

impl Support {
    pub fn from_mask(c_out: usize, c_in: usize, mask: &[bool]) -> Self {
        assert_eq!(mask.len(), c_out * c_in);
        let per_out = (0..c_out)
            .map(|o| (0..c_in).filter(|&i| mask[o * c_in + i]).collect())
            .collect();
        Self { c_in, per_out }
    }

    pub fn inputs(&self, out: usize) -> &[usize] {
        &self.per_out[out]
    }

    pub fn c_out(&self) -> usize {
        self.per_out.len()
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }
}

/// Sparse linear map `y = A x`, stored by output row. Applied either across
/// the row axis ([`Tape::row_map`]) or across the time axis
/// ([`Tape::time_map`]) of a 2-D tensor.
#[derive(Debug)]
pub struct SparseMap {
    out_dim: usize,
    in_dim: usize,
    entries: Vec<Vec<(usize, f64)>>,
    /// Two-point rows evaluated as `x[lo] + f·(x[hi] − x[lo])`, which keeps
    /// constant signals exact.
    lerp: Option<Vec<(usize, usize, f64)>>,
    transpose: OnceCell<Rc<SparseMap>>,
}

impl SparseMap {
    pub fn new(out_dim: usize, in_dim: usize, entries: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(entries.len(), out_dim);
        debug_assert!(entries.iter().flatten().all(|&(i, _)| i < in_dim));
        Self {
            out_dim,
            in_dim,
            entries,
            lerp: None,
            transpose: OnceCell::new(),
        }
    }

    /// Linear interpolation: output `o` blends inputs `lo` and `hi` with
    /// weight `f` on `hi`.
    pub fn lerp(in_dim: usize, points: Vec<(usize, usize, f64)>) -> Self {
        let entries = points
            .iter()
            .map(|&(lo, hi, f)| {
                if lo == hi || f == 0.0 {
                    vec![(lo, 1.0)]
                } else {
                    vec![(lo, 1.0 - f), (hi, f)]
                }
            })
            .collect();
        let mut map = Self::new(points.len(), in_dim, entries);
        map.lerp = Some(points);
        map
    }

    /// Output `o` copies input `indices[o]`.
    pub fn gather(in_dim: usize, indices: &[usize]) -> Self {
        Self::new(
            indices.len(),
            in_dim,
            indices.iter().map(|&i| vec![(i, 1.0)]).collect(),
        )
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn row(&self, o: usize) -> &[(usize, f64)] {
        &self.entries[o]
    }

    pub fn transpose(&self) -> Rc<SparseMap> {
        self.transpose
            .get_or_init(|| {
                let mut entries = vec![Vec::new(); self.in_dim];
                for (o, row) in self.entries.iter().enumerate() {
                    for &(i, w) in row {
                        entries[i].push((o, w));
                    }
                }
                Rc::new(SparseMap::new(self.in_dim, self.out_dim, entries))
            })
            .clone()
    }

    /// Applies the map to a plain vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        if let Some(points) = &self.lerp {
            return points
                .iter()
                .map(|&(lo, hi, f)| if f == 0.0 { x[lo] } else { x[lo] + f * (x[hi] - x[lo]) })
                .collect();
        }
        self.entries
            .iter()
            .map(|row| row.iter().fold(0.0, |acc, &(i, w)| acc + w * x[i]))
            .collect()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulConst(Var, Rc<Tensor>),
    Recip(Var),
    Sqrt(Var),
    Exp(Var),
    Abs(Var),
    LeakyRelu(Var, f64),
    Sum(Var),
    Expand(Var),
    RowMap(Var, Rc<SparseMap>),
    TimeMap(Var, Rc<SparseMap>),
    Conv(Var, Var, Option<Rc<Support>>),
    ConvInputGrad(Var, Var, Option<Rc<Support>>),
    ConvWeightGrad(Var, Var, Option<Rc<Support>>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::MulConst(..) => "mul_const",
            Op::Recip(..) => "recip",
            Op::Sqrt(..) => "sqrt",
            Op::Exp(..) => "exp",
            Op::Abs(..) => "abs",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sum(..) => "sum",
            Op::Expand(..) => "expand",
            Op::RowMap(..) => "row_map",
            Op::TimeMap(..) => "time_map",
            Op::Conv(..) => "conv",
            Op::ConvInputGrad(..) => "conv_input_grad",
            Op::ConvWeightGrad(..) => "conv_weight_grad",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Conv(a, b, _) | Op::ConvInputGrad(a, b, ..) | Op::ConvWeightGrad(a, b, ..) => {
                vec![a, b]
            }
            Op::Scale(a, _)
            | Op::AddConst(a)
            | Op::MulConst(a, _)
            | Op::Recip(a)
            | Op::Sqrt(a)
            | Op::Exp(a)
            | Op::Abs(a)
            | Op::LeakyRelu(a, _)
            | Op::Sum(a)
            | Op::Expand(a)
            | Op::RowMap(a, _)
            | Op::TimeMap(a, _) => vec![a],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradient values aligned with the `wrt` list passed to [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients(Vec<Tensor>);

impl Gradients {
    pub fn get(&self, i: usize) -> &Tensor {
        &self.0[i]
    }

    pub fn into_vec(self) -> Vec<Tensor> {
        self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.0.iter()
    }
}

/// Recording of primitive operations in execution order.
///
/// Ops panic on shape misuse; non-finite results are remembered and
/// surfaced by [`Tape::ensure_finite`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    non_finite: Option<(usize, &'static str)>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Drops every node recorded at or after `len`.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        if matches!(self.non_finite, Some((i, _)) if i >= len) {
            self.non_finite = None;
        }
    }

    pub fn ensure_finite(&self) -> Result<(), TensorError> {
        match self.non_finite {
            Some((_, op)) => Err(TensorError::NonFinite(op)),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let id = self.nodes.len();
        if self.non_finite.is_none() && !value.all_finite() {
            self.non_finite = Some((id, op.name()));
        }
        self.nodes.push(Node { value, op });
        Var(id)
    }

    /// Records an input. Whether it is differentiated is decided per query
    /// by the `wrt` list.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.binary(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    fn binary(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise op shape mismatch");
        x.zip_map(y, f)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(v, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddConst(a))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, a: Var, c: Rc<Tensor>) -> Var {
        let v = self.value(a).zip_map(&c, |x, y| x * y);
        self.push(v, Op::MulConst(a, c))
    }

    /// `1 / x`, with `1 / 0` defined as 0 so that norms of zero vectors have
    /// a zero (sub)gradient instead of NaN.
    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x == 0.0 { 0.0 } else { 1.0 / x });
        self.push(v, Op::Recip(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = super::leaky_relu(self.value(a), slope);
        self.push(v, Op::LeakyRelu(a, slope))
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Broadcasts a scalar to `shape`.
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Var {
        assert!(self.value(a).is_scalar(), "expand expects a scalar");
        let v = Tensor::full(shape, self.value(a).item());
        self.push(v, Op::Expand(a))
    }

    /// Euclidean norm of all entries.
    pub fn norm(&mut self, a: Var) -> Var {
        let sq = self.square(a);
        let s = self.sum(sq);
        self.sqrt(s)
    }

    /// `y[o, t] = Σ A[o, i] x[i, t]`.
    pub fn row_map(&mut self, a: Var, map: Rc<SparseMap>) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape().len(), 2, "row_map expects a matrix");
        assert_eq!(x.rows(), map.in_dim(), "row_map dimension mismatch");
        let t = x.cols();
        let mut data = vec![0.0; map.out_dim() * t];
        for o in 0..map.out_dim() {
            let out = &mut data[o * t..(o + 1) * t];
            for &(i, w) in map.row(o) {
                for (y, xv) in out.iter_mut().zip(x.row(i)) {
                    *y += w * xv;
                }
            }
        }
        let v = Tensor::matrix(map.out_dim(), t, data).expect("row_map shape");
        self.push(v, Op::RowMap(a, map))
    }

    /// `y[r, t] = Σ A[t, s] x[r, s]`.
    pub fn time_map(&mut self, a: Var, map: Rc<SparseMap>) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape().len(), 2, "time_map expects a matrix");
        assert_eq!(x.cols(), map.in_dim(), "time_map dimension mismatch");
        let rows = x.rows();
        let mut data = Vec::with_capacity(rows * map.out_dim());
        for r in 0..rows {
            data.extend(map.apply(x.row(r)));
        }
        let v = Tensor::matrix(rows, map.out_dim(), data).expect("time_map shape");
        self.push(v, Op::TimeMap(a, map))
    }

    /// Valid (unpadded) temporal convolution of `[C_in × T']` by
    /// `[C_out × C_in × K]`.
    pub fn conv(&mut self, x: Var, w: Var, support: Option<Rc<Support>>) -> Var {
        let v = valid_conv(self.value(x), self.value(w), support.as_deref());
        self.push(v, Op::Conv(x, w, support))
    }

    fn conv_input_grad(&mut self, g: Var, w: Var, support: Option<Rc<Support>>, tp: usize) -> Var {
        let v = conv_input_grad(self.value(g), self.value(w), support.as_deref(), tp);
        self.push(v, Op::ConvInputGrad(g, w, support))
    }

    fn conv_weight_grad(&mut self, x: Var, g: Var, support: Option<Rc<Support>>, k: usize) -> Var {
        let v = conv_weight_grad(self.value(x), self.value(g), support.as_deref(), k);
        self.push(v, Op::ConvWeightGrad(x, g, support))
    }

    /// Reflect-pads the time axis by `pad` frames on both ends.
    pub fn reflect_pad(&mut self, x: Var, pad: usize) -> Var {
        let t = self.value(x).cols();
        let map = Rc::new(reflect_pad_map(t, pad));
        self.time_map(x, map)
    }

    /// Broadcasts a `[C × 1]` bias column over the time axis and adds it.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (c, t) = (self.value(x).rows(), self.value(x).cols());
        assert_eq!(self.shape(bias), &[c, 1], "bias must be a [C x 1] column");
        let ones = Rc::new(SparseMap::new(t, 1, vec![vec![(0, 1.0)]; t]));
        let b = self.time_map(bias, ones);
        self.add(x, b)
    }

    /// Reflect-padded, length-preserving skeleton-masked convolution plus
    /// bias. `mask` must hold zeros where `support` excludes a channel pair.
    pub fn temporal_conv(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        mask: Option<(Rc<Tensor>, Rc<Support>)>,
    ) -> Var {
        let k = self.value(kernel).shape()[2];
        assert!(k % 2 == 1, "kernel size must be odd");
        let padded = self.reflect_pad(x, (k - 1) / 2);
        let (w, support) = match mask {
            Some((m, s)) => (self.mul_const(kernel, m), Some(s)),
            None => (kernel, None),
        };
        let y = self.conv(padded, w, support);
        self.add_bias(y, bias)
    }

    /// Records the gradient of scalar `out` with respect to each `wrt` node
    /// as new, differentiable nodes on this tape.
    pub fn grad_graph(&mut self, out: Var, wrt: &[Var]) -> Result<Vec<Var>, TensorError> {
        if !self.value(out).is_scalar() {
            return Err(TensorError::NotScalar(self.value(out).shape().to_vec()));
        }
        let n = out.0 + 1;
        let mut depends = vec![false; n];
        for w in wrt {
            if w.0 < n {
                depends[w.0] = true;
            }
        }
        for i in 0..n {
            if !depends[i] && self.nodes[i].op.inputs().iter().any(|v| depends[v.0]) {
                depends[i] = true;
            }
        }

        let mut grads: Vec<Option<Var>> = vec![None; n];
        if depends[out.0] {
            grads[out.0] = Some(self.leaf(Tensor::scalar(1.0)));
        }
        for i in (0..n).rev() {
            let Some(g) = grads[i] else { continue };
            if !depends[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            for (input, contrib) in self.backward_rule(Var(i), &op, g, &depends) {
                grads[input.0] = Some(match grads[input.0] {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib),
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let zeros = Tensor::zeros(self.value(*w).shape());
                    self.leaf(zeros)
                }
            })
            .collect())
    }

    fn backward_rule(&mut self, node: Var, op: &Op, g: Var, depends: &[bool]) -> Vec<(Var, Var)> {
        let d = |v: &Var| depends[v.0];
        let mut out = Vec::with_capacity(2);
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if d(a) {
                    out.push((*a, g));
                }
                if d(b) {
                    out.push((*b, g));
                }
            }
            Op::Sub(a, b) => {
                if d(a) {
                    out.push((*a, g));
                }
                if d(b) {
                    let ng = self.neg(g);
                    out.push((*b, ng));
                }
            }
            Op::Mul(a, b) => {
                if d(a) {
                    let ga = self.mul(g, *b);
                    out.push((*a, ga));
                }
                if d(b) {
                    let gb = self.mul(g, *a);
                    out.push((*b, gb));
                }
            }
            Op::Scale(a, c) => {
                let ga = self.scale(g, *c);
                out.push((*a, ga));
            }
            Op::AddConst(a) => out.push((*a, g)),
            Op::MulConst(a, c) => {
                let ga = self.mul_const(g, c.clone());
                out.push((*a, ga));
            }
            Op::Recip(a) => {
                // d(1/x) = -1/x²
                let sq = self.mul(node, node);
                let t = self.mul(g, sq);
                let ga = self.neg(t);
                out.push((*a, ga));
            }
            Op::Sqrt(a) => {
                let inv = self.recip(node);
                let t = self.mul(g, inv);
                let ga = self.scale(t, 0.5);
                out.push((*a, ga));
            }
            Op::Exp(a) => {
                let ga = self.mul(g, node);
                out.push((*a, ga));
            }
            Op::Abs(a) => {
                let sign = Rc::new(self.value(*a).map(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }));
                let ga = self.mul_const(g, sign);
                out.push((*a, ga));
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                let pattern = Rc::new(self.value(*a).map(|x| if x >= 0.0 { 1.0 } else { s }));
                let ga = self.mul_const(g, pattern);
                out.push((*a, ga));
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                let ga = self.expand(g, &shape);
                out.push((*a, ga));
            }
            Op::Expand(a) => {
                let ga = self.sum(g);
                out.push((*a, ga));
            }
            Op::RowMap(a, m) => {
                let ga = self.row_map(g, m.transpose());
                out.push((*a, ga));
            }
            Op::TimeMap(a, m) => {
                let ga = self.time_map(g, m.transpose());
                out.push((*a, ga));
            }
            Op::Conv(x, w, s) => {
                if d(x) {
                    let tp = self.value(*x).cols();
                    let gx = self.conv_input_grad(g, *w, s.clone(), tp);
                    out.push((*x, gx));
                }
                if d(w) {
                    let k = self.value(*w).shape()[2];
                    let gw = self.conv_weight_grad(*x, g, s.clone(), k);
                    out.push((*w, gw));
                }
            }
            Op::ConvInputGrad(gy, w, s) => {
                // node = A_w^T(gy); upstream g has the padded-input shape.
                if d(gy) {
                    let ggy = self.conv(g, *w, s.clone());
                    out.push((*gy, ggy));
                }
                if d(w) {
                    let k = self.value(*w).shape()[2];
                    let gw = self.conv_weight_grad(g, *gy, s.clone(), k);
                    out.push((*w, gw));
                }
            }
            Op::ConvWeightGrad(x, gy, s) => {
                // node = B_x^T(gy); upstream g has the kernel shape.
                if d(x) {
                    let tp = self.value(*x).cols();
                    let gx = self.conv_input_grad(*gy, g, s.clone(), tp);
                    out.push((*x, gx));
                }
                if d(gy) {
                    let ggy = self.conv(*x, g, s.clone());
                    out.push((*gy, ggy));
                }
            }
        }
        out
    }

    /// Numeric gradients of scalar `out`. Gradient nodes are recorded and
    /// then discarded, so the tape can be queried again.
    pub fn backward(&mut self, out: Var, wrt: &[Var]) -> Result<Gradients, TensorError> {
        let mark = self.len();
        let vars = self.grad_graph(out, wrt)?;
        let values = vars.iter().map(|v| self.value(*v).clone()).collect();
        self.truncate(mark);
        Ok(Gradients(values))
    }
}

/// Time map implementing reflect padding by `pad` frames.
pub(crate) fn reflect_pad_map(t: usize, pad: usize) -> SparseMap {
    let idx: Vec<usize> = (0..t + 2 * pad)
        .map(|i| super::reflect_pad_index(i as isize - pad as isize, t))
        .collect();
    SparseMap::gather(t, &idx)
}
