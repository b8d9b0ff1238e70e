//! Append-only computation graph with a reverse sweep over tensor nodes.

use super::tensor::{broadcast_shape, matmul_nn, matmul_nt, matmul_tn, zip_broadcast, Tensor};
use super::AdError;

/// Identifies a trainable tensor across tapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Handle to a node on a [`Tape`]. Only valid for the tape generation that
/// issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    idx: u32,
    generation: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx as usize
    }
}

/// Fused scalar functions used by jet propagation, so that an activation's
/// derivative factors cost one node each.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pointwise {
    /// `1 - u^2`: `tanh'` written in terms of `u = tanh(x)`.
    TanhD1,
    /// `-2u (1 - u^2)`: `tanh''` in terms of `u = tanh(x)`.
    TanhD2,
    /// `-x exp(-x^2/2)`
    Wavelet,
    /// `(x^2 - 1) exp(-x^2/2)`
    WaveletD1,
    /// `x (3 - x^2) exp(-x^2/2)`
    WaveletD2,
}

impl Pointwise {
    fn name(self) -> &'static str {
        match self {
            Pointwise::TanhD1 => "tanh_d1",
            Pointwise::TanhD2 => "tanh_d2",
            Pointwise::Wavelet => "wavelet",
            Pointwise::WaveletD1 => "wavelet_d1",
            Pointwise::WaveletD2 => "wavelet_d2",
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Pointwise::TanhD1 => 1.0 - x * x,
            Pointwise::TanhD2 => -2.0 * x * (1.0 - x * x),
            Pointwise::Wavelet => -x * (-0.5 * x * x).exp(),
            Pointwise::WaveletD1 => (x * x - 1.0) * (-0.5 * x * x).exp(),
            Pointwise::WaveletD2 => x * (3.0 - x * x) * (-0.5 * x * x).exp(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Pointwise::TanhD1 => -2.0 * x,
            Pointwise::TanhD2 => 6.0 * x * x - 2.0,
            Pointwise::Wavelet => Pointwise::WaveletD1.eval(x),
            Pointwise::WaveletD1 => Pointwise::WaveletD2.eval(x),
            Pointwise::WaveletD2 => {
                let x2 = x * x;
                (3.0 - 6.0 * x2 + x2 * x2) * (-0.5 * x2).exp()
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Const,
    Param(ParamId),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    Square(usize),
    Powi(usize, i32),
    Sin(usize),
    Cos(usize),
    Exp(usize),
    Tanh(usize),
    Map(usize, Pointwise),
    ChainSecond { g1: usize, d2: Option<usize>, g2: usize, d1: usize },
    MatMulT { x: usize, w: usize },
    Affine { x: usize, w: usize, b: usize },
    Gather { src: usize, idx: Vec<usize> },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols { a: usize, start: usize },
    SumBlocks { a: usize, groups: usize },
    RowsToCols { a: usize, groups: usize },
    SumCols(usize),
    SumAll(usize),
    Mean(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Const => "constant",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::Offset(_) => "offset",
            Op::Square(_) => "square",
            Op::Powi(..) => "powi",
            Op::Sin(_) => "sin",
            Op::Cos(_) => "cos",
            Op::Exp(_) => "exp",
            Op::Tanh(_) => "tanh",
            Op::Map(_, f) => f.name(),
            Op::ChainSecond { .. } => "chain_second",
            Op::MatMulT { .. } => "matmul",
            Op::Affine { .. } => "affine",
            Op::Gather { .. } => "gather",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::SumBlocks { .. } => "sum_blocks",
            Op::RowsToCols { .. } => "rows_to_cols",
            Op::SumCols(_) => "sum_cols",
            Op::SumAll(_) => "sum",
            Op::Mean(_) => "mean",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Single-writer computation graph. Parents always precede children, so the
/// reverse sweep is a plain descending scan.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    generation: u32,
}

/// Parameter gradients produced by [`Tape::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_param: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|(_, g)| g.is_finite())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node. Handles issued before the call become stale.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.generation = self.generation.wrapping_add(1);
    }

    fn check(&self, v: Var) -> Result<usize, AdError> {
        if v.generation != self.generation || v.index() >= self.nodes.len() {
            return Err(AdError::StaleHandle);
        }
        Ok(v.index())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.index()].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.index()].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, AdError> {
        if !value.is_finite() {
            return Err(AdError::NonFinite { op: op.name() });
        }
        let idx = u32::try_from(self.nodes.len()).expect("tape exceeds u32 nodes");
        self.nodes.push(Node { value, op });
        Ok(Var {
            idx,
            generation: self.generation,
        })
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var, AdError> {
        self.push(value, Op::Const)
    }

    pub fn scalar(&mut self, value: f64) -> Result<Var, AdError> {
        self.constant(Tensor::scalar(value))
    }

    pub fn param(&mut self, id: ParamId, value: Tensor) -> Result<Var, AdError> {
        self.push(value, Op::Param(id))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Result<Var, AdError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let shape = broadcast_shape(name, va.shape(), vb.shape())?;
        let out = zip_broadcast(va, vb, shape, f);
        self.push(out, op(ia, ib))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: impl FnOnce(usize) -> Op) -> Result<Var, AdError> {
        let ia = self.check(a)?;
        let out = self.nodes[ia].value.map(f);
        self.push(out, op(ia))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let ib = self.check(b)?;
        if self.nodes[ib].value.data().iter().any(|&v| v == 0.0) {
            return Err(AdError::DivisionByZero);
        }
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, AdError> {
        self.unary(a, |x| -x, Op::Neg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AdError> {
        self.unary(a, |x| c * x, |i| Op::Scale(i, c))
    }

    /// `a + c` for a scalar constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var, AdError> {
        self.unary(a, |x| x + c, Op::Offset)
    }

    pub fn square(&mut self, a: Var) -> Result<Var, AdError> {
        self.unary(a, |x| x * x, Op::Square)
    }

    pub fn powi(&mut self, a: Var, n: i32) -> Result<Var, AdError> {
        self.unary(a, |x| x.powi(n), |i| Op::Powi(i, n))
    }

    pub fn sin(&mut self, a: Var) -> Result<Var, AdError> {
        self.unary(a, f64::sin, Op::Sin)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var, AdError> {
        self.unary(a, f64::cos, Op::Cos)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AdError> {
        self.unary(a, f64::exp, Op::Exp)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AdError> {
        self.unary(a, f64::tanh, Op::Tanh)
    }

    pub fn pointwise(&mut self, a: Var, f: Pointwise) -> Result<Var, AdError> {
        self.unary(a, |x| f.eval(x), |i| Op::Map(i, f))
    }

    /// `g1 * d2 + g2 * d1^2`, the second-order chain rule of a scalar
    /// function with derivative factors `g1`, `g2`. All operands share one
    /// shape; a missing `d2` counts as zero.
    pub fn chain_second(&mut self, g1: Var, d2: Option<Var>, g2: Var, d1: Var) -> Result<Var, AdError> {
        let (i1, i2, j1) = (self.check(g1)?, self.check(g2)?, self.check(d1)?);
        let k2 = d2.map(|d| self.check(d)).transpose()?;
        let shape = self.nodes[i1].value.shape();
        for j in [Some(i2), Some(j1), k2].into_iter().flatten() {
            let other = self.nodes[j].value.shape();
            if other != shape {
                return Err(AdError::ShapeMismatch {
                    op: "chain_second",
                    lhs: shape,
                    rhs: other,
                });
            }
        }
        let (vg1, vg2, vd1) = (self.nodes[i1].value.data(), self.nodes[i2].value.data(), self.nodes[j1].value.data());
        let data: Vec<f64> = match k2 {
            Some(k) => {
                let vd2 = self.nodes[k].value.data();
                (0..vg1.len()).map(|n| vg1[n] * vd2[n] + vg2[n] * vd1[n] * vd1[n]).collect()
            }
            None => (0..vg1.len()).map(|n| vg2[n] * vd1[n] * vd1[n]).collect(),
        };
        let out = Tensor::new(shape.0, shape.1, data)?;
        self.push(
            out,
            Op::ChainSecond {
                g1: i1,
                d2: k2,
                g2: i2,
                d1: j1,
            },
        )
    }

    /// `x W^T` for a batch `x` (`B x in`) and weight `W` (`out x in`).
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var, AdError> {
        let (ix, iw) = (self.check(x)?, self.check(w)?);
        let (vx, vw) = (&self.nodes[ix].value, &self.nodes[iw].value);
        if vx.cols() != vw.cols() {
            return Err(AdError::ShapeMismatch {
                op: "matmul",
                lhs: vx.shape(),
                rhs: vw.shape(),
            });
        }
        let out = matmul_nt(vx, vw);
        self.push(out, Op::MatMulT { x: ix, w: iw })
    }

    /// Dense layer `x W^T + b`, with `b` a `1 x out` row.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var, AdError> {
        let (ix, iw, ib) = (self.check(x)?, self.check(w)?, self.check(b)?);
        let (vx, vw, vb) = (&self.nodes[ix].value, &self.nodes[iw].value, &self.nodes[ib].value);
        if vx.cols() != vw.cols() {
            return Err(AdError::ShapeMismatch {
                op: "affine",
                lhs: vw.shape(),
                rhs: vx.shape(),
            });
        }
        if vb.shape() != (1, vw.rows()) {
            return Err(AdError::ShapeMismatch {
                op: "affine",
                lhs: (1, vw.rows()),
                rhs: vb.shape(),
            });
        }
        let mut out = matmul_nt(vx, vw);
        let bias = vb.data();
        let n = bias.len();
        for row in out.data_mut().chunks_exact_mut(n.max(1)) {
            for (o, b) in row.iter_mut().zip(bias) {
                *o += b;
            }
        }
        self.push(out, Op::Affine { x: ix, w: iw, b: ib })
    }

    /// Selects rows of `src` by index.
    pub fn gather_rows(&mut self, src: Var, idx: Vec<usize>) -> Result<Var, AdError> {
        let is = self.check(src)?;
        let v = &self.nodes[is].value;
        let cols = v.cols();
        if let Some(&bad) = idx.iter().find(|&&i| i >= v.rows()) {
            return Err(AdError::IndexOutOfBounds { index: bad, len: v.rows() });
        }
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in &idx {
            data.extend_from_slice(v.row_slice(i));
        }
        let out = Tensor::new(idx.len(), cols, data)?;
        self.push(out, Op::Gather { src: is, idx })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        let ids = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>, _>>()?;
        let rows = ids.iter().map(|&i| self.nodes[i].value.rows()).max().unwrap_or(0);
        for &i in &ids {
            let r = self.nodes[i].value.rows();
            if r != rows {
                return Err(AdError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: (rows, 0),
                    rhs: self.nodes[i].value.shape(),
                });
            }
        }
        let cols: usize = ids.iter().map(|&i| self.nodes[i].value.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &i in &ids {
                data.extend_from_slice(self.nodes[i].value.row_slice(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        self.push(out, Op::ConcatCols(ids))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AdError> {
        let ids = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>, _>>()?;
        let cols = ids.first().map(|&i| self.nodes[i].value.cols()).unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for &i in &ids {
            let v = &self.nodes[i].value;
            if v.cols() != cols {
                return Err(AdError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: (0, cols),
                    rhs: v.shape(),
                });
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(rows, cols, data)?;
        self.push(out, Op::ConcatRows(ids))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AdError> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        if start + len > v.cols() {
            return Err(AdError::ShapeMismatch {
                op: "slice_cols",
                lhs: v.shape(),
                rhs: (start, len),
            });
        }
        let out = Tensor::from_fn(v.rows(), len, |r, c| v.get(r, start + c));
        self.push(out, Op::SliceCols { a: ia, start })
    }

    /// Input laid out as `groups` blocks of `k` stacked `b x c` sub-blocks;
    /// sums the `k` sub-blocks of every group, giving `groups * b x c`.
    pub fn sum_blocks(&mut self, a: Var, groups: usize, k: usize) -> Result<Var, AdError> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        let (rows, cols) = v.shape();
        if groups == 0 || k == 0 || rows % (groups * k) != 0 {
            return Err(AdError::ShapeMismatch {
                op: "sum_blocks",
                lhs: v.shape(),
                rhs: (groups, k),
            });
        }
        let b = rows / (groups * k);
        let mut out = Tensor::zeros(groups * b, cols);
        for g in 0..groups {
            for j in 0..k {
                let src = &v.data()[(g * k + j) * b * cols..(g * k + j + 1) * b * cols];
                let dst = &mut out.data_mut()[g * b * cols..(g + 1) * b * cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        self.push(out, Op::SumBlocks { a: ia, groups })
    }

    /// `groups` stacked `b x c` blocks laid side by side as `b x (groups*c)`.
    pub fn rows_to_cols(&mut self, a: Var, groups: usize) -> Result<Var, AdError> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        let (rows, cols) = v.shape();
        if groups == 0 || rows % groups != 0 {
            return Err(AdError::ShapeMismatch {
                op: "rows_to_cols",
                lhs: v.shape(),
                rhs: (groups, 1),
            });
        }
        let b = rows / groups;
        let out = Tensor::from_fn(b, groups * cols, |i, j| v.get((j / cols) * b + i, j % cols));
        self.push(out, Op::RowsToCols { a: ia, groups })
    }

    /// Row sums, `B x c -> B x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var, AdError> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        let cols = v.cols().max(1);
        let data = v.data().chunks(cols).map(|r| r.iter().sum()).collect::<Vec<f64>>();
        let out = Tensor::new(v.rows(), 1, data)?;
        self.push(out, Op::SumCols(ia))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AdError> {
        let ia = self.check(a)?;
        let s = pairwise_sum(self.nodes[ia].value.data());
        self.push(Tensor::scalar(s), Op::SumAll(ia))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AdError> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        if v.is_empty() {
            return Err(AdError::Empty { op: "mean" });
        }
        let s = pairwise_sum(v.data()) / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(ia))
    }

    /// Reverse sweep from a scalar root. Every parameter leaf on the tape gets
    /// an entry; leaves the root does not depend on get zeros.
    pub fn backward(&self, root: Var) -> Result<Gradients, AdError> {
        let ir = self.check(root)?;
        let rshape = self.nodes[ir].value.shape();
        if rshape != (1, 1) {
            return Err(AdError::NonScalarRoot { shape: rshape });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; ir + 1];
        grads[ir] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::default();

        for i in (0..=ir).rev() {
            let node = &self.nodes[i];
            if let Op::Param(id) = node.op {
                if out.by_param.len() <= id.0 {
                    out.by_param.resize(id.0 + 1, None);
                }
                let g = grads[i].take().unwrap_or_else(|| Tensor::zeros(node.value.rows(), node.value.cols()));
                match &mut out.by_param[id.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, g, &mut grads);
        }
        // Parameter leaves registered after the root cannot influence it.
        for node in &self.nodes[ir + 1..] {
            if let Op::Param(id) = node.op {
                if out.by_param.len() <= id.0 {
                    out.by_param.resize(id.0 + 1, None);
                }
                if out.by_param[id.0].is_none() {
                    out.by_param[id.0] = Some(Tensor::zeros(node.value.rows(), node.value.cols()));
                }
            }
        }
        Ok(out)
    }

    fn propagate(&self, i: usize, g: Tensor, grads: &mut [Option<Tensor>]) {
        let val = |j: usize| &self.nodes[j].value;
        let out = &self.nodes[i].value;
        let mut acc = |j: usize, t: Tensor| {
            let t = t.reduce_to(val(j).shape());
            match &mut grads[j] {
                Some(a) => a.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let gs = g.shape();
        match &self.nodes[i].op {
            Op::Const | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc(*b, g.clone());
                acc(*a, g);
            }
            Op::Sub(a, b) => {
                acc(*b, g.map(|x| -x));
                acc(*a, g);
            }
            Op::Mul(a, b) => {
                acc(*a, zip_broadcast(&g, val(*b), gs, |x, y| x * y));
                acc(*b, zip_broadcast(&g, val(*a), gs, |x, y| x * y));
            }
            Op::Div(a, b) => {
                let gb = zip_broadcast(&zip_broadcast(&g, out, gs, |x, y| x * y), val(*b), gs, |x, y| -x / y);
                acc(*a, zip_broadcast(&g, val(*b), gs, |x, y| x / y));
                acc(*b, gb);
            }
            Op::Neg(a) => acc(*a, g.map(|x| -x)),
            Op::Scale(a, c) => {
                let c = *c;
                acc(*a, g.map(|x| c * x))
            }
            Op::Offset(a) => acc(*a, g),
            Op::Square(a) => acc(*a, zip_broadcast(&g, val(*a), gs, |x, y| 2.0 * x * y)),
            Op::Powi(a, n) => {
                let n = *n;
                acc(*a, zip_broadcast(&g, val(*a), gs, |x, y| x * n as f64 * y.powi(n - 1)))
            }
            Op::Sin(a) => acc(*a, zip_broadcast(&g, val(*a), gs, |x, y| x * y.cos())),
            Op::Cos(a) => acc(*a, zip_broadcast(&g, val(*a), gs, |x, y| -x * y.sin())),
            Op::Exp(a) => acc(*a, zip_broadcast(&g, out, gs, |x, y| x * y)),
            Op::Tanh(a) => acc(*a, zip_broadcast(&g, out, gs, |x, y| x * (1.0 - y * y))),
            Op::Map(a, f) => {
                let f = *f;
                acc(*a, zip_broadcast(&g, val(*a), gs, |x, y| x * f.derivative(y)))
            }
            Op::ChainSecond { g1, d2, g2, d1 } => {
                let (vg1, vg2, vd1) = (val(*g1), val(*g2), val(*d1));
                let gd = g.data();
                let n = gd.len();
                let ds = |f: &dyn Fn(usize) -> f64| Tensor::new(g.rows(), g.cols(), (0..n).map(f).collect()).expect("same shape");
                if let Some(d2) = d2 {
                    let vd2 = val(*d2);
                    acc(*g1, ds(&|k| gd[k] * vd2.data()[k]));
                    acc(*d2, ds(&|k| gd[k] * vg1.data()[k]));
                }
                acc(*g2, ds(&|k| gd[k] * vd1.data()[k] * vd1.data()[k]));
                acc(*d1, ds(&|k| 2.0 * gd[k] * vg2.data()[k] * vd1.data()[k]));
            }
            Op::MatMulT { x, w } => {
                acc(*w, matmul_tn(&g, val(*x)));
                acc(*x, matmul_nn(&g, val(*w)));
            }
            Op::Affine { x, w, b } => {
                acc(*b, g.clone().reduce_to((1, g.cols())));
                acc(*w, matmul_tn(&g, val(*x)));
                acc(*x, matmul_nn(&g, val(*w)));
            }
            Op::Gather { src, idx } => {
                let sv = val(*src);
                let mut t = Tensor::zeros(sv.rows(), sv.cols());
                let cols = sv.cols();
                for (r, &s) in idx.iter().enumerate() {
                    let dst = &mut t.data_mut()[s * cols..(s + 1) * cols];
                    for (d, x) in dst.iter_mut().zip(g.row_slice(r)) {
                        *d += x;
                    }
                }
                acc(*src, t);
            }
            Op::ConcatCols(ids) => {
                let mut start = 0;
                for &j in ids {
                    let c = val(j).cols();
                    acc(j, Tensor::from_fn(g.rows(), c, |r, k| g.get(r, start + k)));
                    start += c;
                }
            }
            Op::ConcatRows(ids) => {
                let mut start = 0;
                let cols = g.cols();
                for &j in ids {
                    let r = val(j).rows();
                    let data = g.data()[start * cols..(start + r) * cols].to_vec();
                    acc(j, Tensor::new(r, cols, data).expect("row block"));
                    start += r;
                }
            }
            Op::SliceCols { a, start } => {
                let av = val(*a);
                let mut t = Tensor::zeros(av.rows(), av.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        t.set(r, start + c, g.get(r, c));
                    }
                }
                acc(*a, t);
            }
            Op::SumBlocks { a, groups } => {
                let (rows, cols) = val(*a).shape();
                let b = g.rows() / groups;
                let k = rows / (groups * b).max(1);
                let mut data = Vec::with_capacity(rows * cols);
                for gi in 0..*groups {
                    let src = &g.data()[gi * b * cols..(gi + 1) * b * cols];
                    for _ in 0..k {
                        data.extend_from_slice(src);
                    }
                }
                acc(*a, Tensor::new(rows, cols, data).expect("block layout"));
            }
            Op::RowsToCols { a, groups } => {
                let cols = val(*a).cols();
                let b = g.rows();
                let t = Tensor::from_fn(groups * b, cols, |r, c| g.get(r % b, (r / b) * cols + c));
                acc(*a, t);
            }
            Op::SumCols(a) => {
                let c = val(*a).cols();
                acc(*a, Tensor::from_fn(g.rows(), c, |r, _| g.get(r, 0)));
            }
            Op::SumAll(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Tensor::full(r, c, g.data()[0]));
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Tensor::full(r, c, g.data()[0] / (r * c) as f64));
            }
        }
    }
}

/// Fixed-order pairwise summation; the result depends only on the input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_has_zero_gradient() {
        let mut t = Tape::new();
        let c = t.scalar(0.0).unwrap();
        let p = t.param(ParamId(0), Tensor::scalar(2.0)).unwrap();
        let y = t.add(c, p).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().item(), Some(1.0));
        let pi = t.scalar(std::f64::consts::PI).unwrap();
        assert_eq!(t.value(pi).item(), Some(std::f64::consts::PI));
    }

    #[test]
    fn linear_in_parameter() {
        let mut t = Tape::new();
        let c = t.scalar(5.0).unwrap();
        let p = t.param(ParamId(0), Tensor::scalar(-1.5)).unwrap();
        let y = t.mul(c, p).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().item(), Some(5.0));
    }

    #[test]
    fn product_rule() {
        let mut t = Tape::new();
        let x = t.param(ParamId(0), Tensor::scalar(2.0)).unwrap();
        let y = t.param(ParamId(1), Tensor::scalar(3.0)).unwrap();
        let z = t.mul(x, y).unwrap();
        let g = t.backward(z).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().item(), Some(3.0));
        assert_eq!(g.get(ParamId(1)).unwrap().item(), Some(2.0));
    }

    #[test]
    fn square_of_parameter() {
        let mut t = Tape::new();
        let p = t.param(ParamId(0), Tensor::scalar(3.0)).unwrap();
        let l = t.square(p).unwrap();
        assert_eq!(t.backward(l).unwrap().get(ParamId(0)).unwrap().item(), Some(6.0));
    }

    #[test]
    fn affine_one_by_one() {
        let mut t = Tape::new();
        let w = t.param(ParamId(0), Tensor::scalar(2.0)).unwrap();
        let x = t.param(ParamId(1), Tensor::scalar(3.0)).unwrap();
        let b = t.param(ParamId(2), Tensor::scalar(1.0)).unwrap();
        let y = t.affine(w, x, b).unwrap();
        assert_eq!(t.value(y).item(), Some(7.0));
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().item(), Some(3.0));
        assert_eq!(g.get(ParamId(1)).unwrap().item(), Some(2.0));
        assert_eq!(g.get(ParamId(2)).unwrap().item(), Some(1.0));
    }

    #[test]
    fn affine_identity_passes_input() {
        let mut t = Tape::new();
        let w = t.constant(Tensor::identity(3)).unwrap();
        let b = t.constant(Tensor::zeros(1, 3)).unwrap();
        let x = t.constant(Tensor::from_fn(4, 3, |r, c| (r * 3 + c) as f64 - 4.0)).unwrap();
        let y = t.affine(w, x, b).unwrap();
        assert_eq!(t.value(y), t.value(x));
    }

    #[test]
    fn errors_are_reported() {
        let mut t = Tape::new();
        assert!(matches!(t.scalar(f64::NAN), Err(AdError::NonFinite { .. })));
        let a = t.scalar(1.0).unwrap();
        let z = t.scalar(0.0).unwrap();
        assert!(matches!(t.div(a, z), Err(AdError::DivisionByZero)));
        let m = t.constant(Tensor::zeros(3, 2)).unwrap();
        let n = t.constant(Tensor::zeros(2, 2)).unwrap();
        assert!(matches!(t.add(m, n), Err(AdError::ShapeMismatch { .. })));
        assert!(matches!(t.backward(m), Err(AdError::NonScalarRoot { .. })));
        t.clear();
        assert!(matches!(t.neg(a), Err(AdError::StaleHandle)));
    }

    #[test]
    fn unreached_parameter_gets_zero() {
        let mut t = Tape::new();
        let p = t.param(ParamId(0), Tensor::scalar(1.0)).unwrap();
        let _q = t.param(ParamId(1), Tensor::zeros(2, 2)).unwrap();
        let l = t.square(p).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(ParamId(1)).unwrap(), &Tensor::zeros(2, 2));
    }

    #[test]
    fn repeated_backward_is_identical() {
        let mut t = Tape::new();
        let p = t.param(ParamId(0), Tensor::row(&[0.3, -0.7])).unwrap();
        let s = t.sin(p).unwrap();
        let q = t.mul(s, p).unwrap();
        let l = t.sum(q).unwrap();
        let g1 = t.backward(l).unwrap();
        let g2 = t.backward(l).unwrap();
        assert_eq!(g1.get(ParamId(0)), g2.get(ParamId(0)));
    }

    #[test]
    fn block_reshapes_round_trip_gradients() {
        let mut t = Tape::new();
        let p = t.param(ParamId(0), Tensor::from_fn(12, 2, |r, c| (r * 2 + c) as f64)).unwrap();
        let s = t.sum_blocks(p, 2, 3).unwrap();
        assert_eq!(t.shape(s), (4, 2));
        // group 0, row 0: rows 0, 2, 4 of the input
        assert_eq!(t.value(s).get(0, 0), 0.0 + 4.0 + 8.0);
        let c = t.rows_to_cols(s, 2).unwrap();
        assert_eq!(t.shape(c), (2, 4));
        assert_eq!(t.value(c).get(1, 2), t.value(s).get(3, 0));
        let l = t.sum(c).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap(), &Tensor::full(12, 2, 1.0));
    }
}
