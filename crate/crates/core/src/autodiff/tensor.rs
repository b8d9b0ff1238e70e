//! Dense row-major 2-D arrays of `f64`.
//!
//! Every value on the tape is a `Tensor`. Scalars are `1 x 1`, row vectors
//! `1 x n`, and point batches `B x width` (one point per row).

use std::mem::{ManuallyDrop, MaybeUninit};

use super::AdError;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AdError> {
        if rows * cols != data.len() {
            return Err(AdError::ShapeMismatch {
                op: "tensor",
                lhs: (rows, cols),
                rhs: (data.len(), 1),
            });
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn row(values: &[f64]) -> Self {
        Tensor {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn column(values: &[f64]) -> Self {
        Tensor {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Tensor { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Tensor::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a `1 x 1` tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        // Branch-free so the scan vectorizes; this runs on every tape node.
        const EXP: u64 = 0x7ff0_0000_0000_0000;
        !self.data.iter().fold(false, |bad, v| bad | (v.to_bits() & EXP == EXP))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn column_values(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Sums `self` down to `shape`, undoing a broadcast.
    pub(crate) fn reduce_to(self, shape: (usize, usize)) -> Tensor {
        if self.shape() == shape {
            return self;
        }
        let (rows, cols) = shape;
        let mut out = Tensor::zeros(rows, cols);
        if rows == 1 && cols == self.cols {
            for row in self.data.chunks_exact(cols.max(1)) {
                for (o, v) in out.data.iter_mut().zip(row) {
                    *o += v;
                }
            }
            return out;
        }
        for r in 0..self.rows {
            let ro = if rows == 1 { 0 } else { r };
            for c in 0..self.cols {
                let co = if cols == 1 { 0 } else { c };
                out.data[ro * cols + co] += self.data[r * self.cols + c];
            }
        }
        out
    }
}

/// Result shape of an elementwise op between `a` and `b`; a dimension of
/// size 1 broadcasts against any size.
pub(crate) fn broadcast_shape(
    op: &'static str,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<(usize, usize), AdError> {
    let dim = |x: usize, y: usize| {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(AdError::ShapeMismatch { op, lhs: a, rhs: b }),
    }
}

/// Elementwise binary kernel with broadcasting.
pub(crate) fn zip_broadcast(
    a: &Tensor,
    b: &Tensor,
    shape: (usize, usize),
    f: impl Fn(f64, f64) -> f64,
) -> Tensor {
    let (rows, cols) = shape;
    if a.shape() == shape && b.shape() == shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Tensor { rows, cols, data };
    }
    if b.len() == 1 {
        let y = b.data[0];
        if a.shape() == shape {
            return a.map(|x| f(x, y));
        }
    }
    if a.len() == 1 {
        let x = a.data[0];
        if b.shape() == shape {
            return b.map(|y| f(x, y));
        }
    }
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let ra = if a.rows == 1 { 0 } else { r };
        let rb = if b.rows == 1 { 0 } else { r };
        let arow = &a.data[ra * a.cols..(ra + 1) * a.cols];
        let brow = &b.data[rb * b.cols..(rb + 1) * b.cols];
        match (a.cols == cols, b.cols == cols) {
            (true, true) => data.extend(arow.iter().zip(brow).map(|(&x, &y)| f(x, y))),
            (true, false) => {
                let y = brow[0];
                data.extend(arow.iter().map(|&x| f(x, y)));
            }
            (false, true) => {
                let x = arow[0];
                data.extend(brow.iter().map(|&y| f(x, y)));
            }
            (false, false) => {
                let v = f(arow[0], brow[0]);
                data.extend(std::iter::repeat_n(v, cols));
            }
        }
    }
    Tensor { rows, cols, data }
}

/// Row-major `m x n` product of strided operands: `a` is `m x k` with
/// strides `(rsa, csa)`, `b` is `k x n` with strides `(rsb, csb)`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize) -> Tensor {
    if m == 0 || n == 0 || k == 0 {
        return Tensor::zeros(m, n);
    }
    let len = m * n;
    let mut buf: Vec<MaybeUninit<f64>> = Vec::with_capacity(len);
    // SAFETY: `MaybeUninit` needs no initialization. With beta = 0 dgemm
    // never reads C and writes every element, so the buffer is fully
    // initialized before it is reinterpreted as `Vec<f64>`.
    unsafe {
        buf.set_len(len);
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
            0.0,
            buf.as_mut_ptr().cast::<f64>(),
            n as isize,
            1,
        );
        let mut buf = ManuallyDrop::new(buf);
        let data = Vec::from_raw_parts(buf.as_mut_ptr().cast::<f64>(), len, buf.capacity());
        Tensor { rows: m, cols: n, data }
    }
}

/// `out = a * b^T` where `a` is `m x k` and `b` is `n x k`.
pub(crate) fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = a.shape();
    gemm(m, k, b.rows, &a.data, k, 1, &b.data, 1, k)
}

/// `out = a * b` where `a` is `m x k` and `b` is `k x n`.
pub(crate) fn matmul_nn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = a.shape();
    gemm(m, k, b.cols, &a.data, k, 1, &b.data, b.cols, 1)
}

/// `out = a^T * b` where `a` is `k x m` and `b` is `k x n`.
pub(crate) fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = a.shape();
    gemm(m, k, b.cols, &a.data, 1, m, &b.data, b.cols, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        Tensor::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
        })
    }

    fn transpose(a: &Tensor) -> Tensor {
        Tensor::from_fn(a.cols(), a.rows(), |i, j| a.get(j, i))
    }

    #[test]
    fn matmul_variants_agree_with_naive_product() {
        let a = Tensor::from_fn(5, 3, |i, j| (i as f64) * 0.3 - j as f64 + 0.1);
        let b = Tensor::from_fn(3, 4, |i, j| (i * j) as f64 - 0.5);
        let want = naive(&a, &b);
        let nn = matmul_nn(&a, &b);
        let nt = matmul_nt(&a, &transpose(&b));
        let tn = matmul_tn(&transpose(&a), &b);
        for (((x, y), w), z) in nt.data().iter().zip(tn.data()).zip(nn.data()).zip(want.data()) {
            assert!((x - z).abs() < 1e-12 && (y - z).abs() < 1e-12 && (w - z).abs() < 1e-12);
        }
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape("t", (4, 3), (1, 3)).unwrap(), (4, 3));
        assert_eq!(broadcast_shape("t", (4, 1), (1, 3)).unwrap(), (4, 3));
        assert_eq!(broadcast_shape("t", (1, 1), (7, 2)).unwrap(), (7, 2));
        assert!(broadcast_shape("t", (4, 3), (2, 3)).is_err());
    }

    #[test]
    fn reduce_undoes_broadcast() {
        let g = Tensor::full(4, 3, 1.0);
        assert_eq!(g.clone().reduce_to((1, 3)), Tensor::full(1, 3, 4.0));
        assert_eq!(g.clone().reduce_to((4, 1)), Tensor::full(4, 1, 3.0));
        assert_eq!(g.reduce_to((1, 1)), Tensor::scalar(12.0));
    }
}
