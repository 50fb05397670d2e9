//! Dense row-major tensors and the multilinear primitives used by the sensing
//! and synthesis transforms.
//!
//! Indices are 0-based. The mode-k unfolding places mode k along the rows and
//! orders the columns cyclically over modes `k+1, .., K-1, 0, .., k-1`, with
//! the last mode of that sequence varying fastest.

use crate::error::{Error, Result};

/// Dense multiway array of `f64` in row-major (last index fastest) order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape("tensor rank must be at least 1".into()));
    }
    if let Some(k) = shape.iter().position(|&e| e == 0) {
        return Err(Error::Shape(format!("extent of mode {k} is zero")));
    }
    Ok(shape.iter().product())
}

/// Splits `shape` around mode `k` into (product before, extent, product after).
fn split_at_mode(shape: &[usize], k: usize) -> (usize, usize, usize) {
    let outer = shape[..k].iter().product();
    let inner = shape[k + 1..].iter().product();
    (outer, shape[k], inner)
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = check_shape(&shape)?;
        if data.len() != n {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?} ({n} elements)",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        })
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let n = check_shape(shape)?;
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            increment_index(&mut idx, shape);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn strides(&self) -> Vec<usize> {
        row_major_strides(&self.shape)
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, e) in index.iter().zip(&self.shape) {
            off = off * e + i;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.squared_norm().sqrt()
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Same data viewed under a new shape with the same element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data)
    }
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * shape[k + 1];
    }
    strides
}

/// Advances a row-major multi-index; wraps to all zeros after the last index.
pub(crate) fn increment_index(idx: &mut [usize], shape: &[usize]) {
    for k in (0..shape.len()).rev() {
        idx[k] += 1;
        if idx[k] < shape[k] {
            return;
        }
        idx[k] = 0;
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("matrix {rows}x{cols} has a zero extent")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix extents must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for l in 0..self.cols {
                let a = self.data[i * self.cols + l];
                if a == 0.0 {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(other.row(l)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Shape(format!(
                "vector of length {} against {} columns",
                x.len(),
                self.cols
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Copies the leading `rows` rows.
    pub fn top_rows(&self, rows: usize) -> Matrix {
        assert!(rows >= 1 && rows <= self.rows);
        Matrix {
            rows,
            cols: self.cols,
            data: self.data[..rows * self.cols].to_vec(),
        }
    }

    /// Copies the leading `cols` columns.
    pub fn left_cols(&self, cols: usize) -> Matrix {
        assert!(cols >= 1 && cols <= self.cols);
        Matrix::from_fn(self.rows, cols, |i, j| self.get(i, j))
    }
}

fn check_mode(t: &Tensor, k: usize) -> Result<()> {
    if k >= t.rank() {
        return Err(Error::ModeIndex {
            mode: k,
            rank: t.rank(),
        });
    }
    Ok(())
}

/// Mode-k matricization: `shape[k]` rows, product of the other extents as columns.
pub fn mode_unfold(t: &Tensor, k: usize) -> Result<Matrix> {
    check_mode(t, k)?;
    let (outer, n, inner) = split_at_mode(&t.shape, k);
    let cols = outer * inner;
    let mut data = vec![0.0; n * cols];
    for o in 0..outer {
        for r in 0..n {
            let src = &t.data[(o * n + r) * inner..(o * n + r + 1) * inner];
            for (i, &v) in src.iter().enumerate() {
                data[r * cols + i * outer + o] = v;
            }
        }
    }
    Matrix::new(n, cols, data)
}

/// Inverse of [`mode_unfold`].
pub fn mode_fold(m: &Matrix, k: usize, target_shape: &[usize]) -> Result<Tensor> {
    let total = check_shape(target_shape)?;
    if k >= target_shape.len() {
        return Err(Error::ModeIndex {
            mode: k,
            rank: target_shape.len(),
        });
    }
    let (outer, n, inner) = split_at_mode(target_shape, k);
    if m.rows != n || m.cols != outer * inner {
        return Err(Error::Shape(format!(
            "{}x{} matrix cannot fold along mode {k} into {:?}",
            m.rows, m.cols, target_shape
        )));
    }
    let cols = m.cols;
    let mut data = vec![0.0; total];
    for o in 0..outer {
        for r in 0..n {
            let dst = &mut data[(o * n + r) * inner..(o * n + r + 1) * inner];
            for (i, d) in dst.iter_mut().enumerate() {
                *d = m.data[r * cols + i * outer + o];
            }
        }
    }
    Tensor::new(target_shape.to_vec(), data)
}

/// Mode-k product `t ×_k a`: extent k becomes `a.rows()`.
pub fn mode_product(t: &Tensor, a: &Matrix, k: usize) -> Result<Tensor> {
    check_mode(t, k)?;
    let (outer, n, inner) = split_at_mode(&t.shape, k);
    if a.cols != n {
        return Err(Error::Shape(format!(
            "{}x{} matrix does not conform to extent {n} of mode {k}",
            a.rows, a.cols
        )));
    }
    let m = a.rows;
    let mut data = vec![0.0; outer * m * inner];
    for o in 0..outer {
        let src = &t.data[o * n * inner..(o + 1) * n * inner];
        let dst_block = &mut data[o * m * inner..(o + 1) * m * inner];
        for j in 0..m {
            let dst = &mut dst_block[j * inner..(j + 1) * inner];
            for l in 0..n {
                let w = a.data[j * n + l];
                for (d, &s) in dst.iter_mut().zip(&src[l * inner..(l + 1) * inner]) {
                    *d += w * s;
                }
            }
        }
    }
    let mut shape = t.shape.clone();
    shape[k] = m;
    Tensor::new(shape, data)
}

/// Applies several mode products in list order. Modes must be distinct.
pub fn multi_mode_product(t: &Tensor, mats: &[(&Matrix, usize)]) -> Result<Tensor> {
    for (i, (_, k)) in mats.iter().enumerate() {
        if mats[..i].iter().any(|(_, j)| j == k) {
            return Err(Error::Argument(format!("mode {k} appears more than once")));
        }
    }
    let mut out = t.clone();
    for (a, k) in mats {
        out = mode_product(&out, a, *k)?;
    }
    Ok(out)
}

/// `Σ_{other indices} x[.., j, ..] · y[.., l, ..]` over mode k, i.e. the
/// product of the mode-k unfoldings `X_(k) · Y_(k)^T`. This is the gradient of
/// `y ×_k A` with respect to `A` when `x` is the upstream gradient.
pub fn mode_cross(x: &Tensor, y: &Tensor, k: usize) -> Result<Matrix> {
    check_mode(x, k)?;
    check_mode(y, k)?;
    let (outer, m, inner) = split_at_mode(&x.shape, k);
    let (outer_y, n, inner_y) = split_at_mode(&y.shape, k);
    if outer != outer_y || inner != inner_y {
        return Err(Error::Shape(format!(
            "tensors {:?} and {:?} differ outside mode {k}",
            x.shape, y.shape
        )));
    }
    let mut out = vec![0.0; m * n];
    for o in 0..outer {
        for j in 0..m {
            let xs = &x.data[(o * m + j) * inner..(o * m + j + 1) * inner];
            for l in 0..n {
                let ys = &y.data[(o * n + l) * inner..(o * n + l + 1) * inner];
                out[j * n + l] += xs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    Matrix::new(m, n, out)
}

fn check_dims_within(dims: &[usize], shape: &[usize]) -> Result<()> {
    if dims.len() != shape.len() {
        return Err(Error::Dims(format!(
            "dims {:?} have rank {} but tensor has rank {}",
            dims,
            dims.len(),
            shape.len()
        )));
    }
    for (k, (&m, &e)) in dims.iter().zip(shape).enumerate() {
        if m == 0 || m > e {
            return Err(Error::Dims(format!(
                "dims[{k}] = {m} outside [1, {e}]"
            )));
        }
    }
    Ok(())
}

/// Leading block `t[0..m_1, .., 0..m_K]`, copied one contiguous last-mode run at a time.
pub fn subtensor_prefix(t: &Tensor, dims: &[usize]) -> Result<Tensor> {
    check_dims_within(dims, &t.shape)?;
    let rank = dims.len();
    let run = dims[rank - 1];
    let strides = t.strides();
    let runs: usize = dims[..rank - 1].iter().product();
    let mut data = Vec::with_capacity(runs * run);
    let mut idx = vec![0usize; rank - 1];
    for _ in 0..runs {
        let start: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        data.extend_from_slice(&t.data[start..start + run]);
        increment_index(&mut idx, &dims[..rank - 1]);
    }
    Tensor::new(dims.to_vec(), data)
}

/// Embeds `t` at the origin of a zero tensor of `target_shape`.
pub fn zero_pad_to(t: &Tensor, target_shape: &[usize]) -> Result<Tensor> {
    if target_shape.len() != t.rank() || t.shape.iter().zip(target_shape).any(|(a, b)| a > b) {
        return Err(Error::Shape(format!(
            "cannot pad {:?} to {:?}",
            t.shape, target_shape
        )));
    }
    let mut out = Tensor::zeros(target_shape)?;
    let rank = t.rank();
    let run = t.shape[rank - 1];
    let strides = out.strides();
    let runs: usize = t.shape[..rank - 1].iter().product();
    let mut idx = vec![0usize; rank - 1];
    for r in 0..runs {
        let start: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.data[start..start + run].copy_from_slice(&t.data[r * run..(r + 1) * run]);
        increment_index(&mut idx, &t.shape[..rank - 1]);
    }
    Ok(out)
}

/// Hadamard product.
pub fn elementwise_mul(t: &Tensor, b: &Tensor) -> Result<Tensor> {
    t.zip_with(b, |x, y| x * y)
}
