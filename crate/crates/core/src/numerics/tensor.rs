use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64`.
///
/// Most operations are defined on 2-D tensors (`rows × cols`); higher ranks
/// only appear in containers such as attention dumps.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "Tensor::new",
                format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![v],
        }
    }

    /// Builds a 2-D tensor from nested rows. Panics on ragged input; meant for
    /// literals in tests and fixtures.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self {
            shape: vec![r, c],
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn row_vector(v: Vec<f64>) -> Self {
        Self {
            shape: vec![1, v.len()],
            data: v,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Value of a `[1,1]` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::dim(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    fn expect_2d(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::dim(op, format!("expected 2-D, got {:?}", self.shape)));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other, "zip_map")?;
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

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&self, b: &Tensor) -> Result<Tensor> {
        let (m, k) = self.expect_2d("matmul")?;
        let (k2, n) = b.expect_2d("matmul")?;
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("{:?} x {:?}", self.shape, b.shape),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, (k, 1), &b.data, (n, 1), &mut out);
        Tensor::new(vec![m, n], out)
    }

    /// `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_bt(&self, b: &Tensor) -> Result<Tensor> {
        let (m, k) = self.expect_2d("matmul_bt")?;
        let (n, k2) = b.expect_2d("matmul_bt")?;
        if k != k2 {
            return Err(Error::dim(
                "matmul_bt",
                format!("{:?} x {:?}^T", self.shape, b.shape),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, (k, 1), &b.data, (1, k), &mut out);
        Tensor::new(vec![m, n], out)
    }

    /// `a[k×m]ᵀ · b[k×n]`.
    pub fn matmul_at(&self, b: &Tensor) -> Result<Tensor> {
        let (k, m) = self.expect_2d("matmul_at")?;
        let (k2, n) = b.expect_2d("matmul_at")?;
        if k != k2 {
            return Err(Error::dim(
                "matmul_at",
                format!("{:?}^T x {:?}", self.shape, b.shape),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, (1, m), &b.data, (n, 1), &mut out);
        Tensor::new(vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.expect_2d("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(vec![c, r], out)
    }

    /// Adds a `[1×n]` row vector to every row of an `[m×n]` tensor.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let (m, n) = self.expect_2d("add_row")?;
        if bias.len() != n {
            return Err(Error::dim(
                "add_row",
                format!("{:?} + row {:?}", self.shape, bias.shape),
            ));
        }
        let mut out = self.data.clone();
        for i in 0..m {
            for (o, b) in out[i * n..(i + 1) * n].iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (m, n) = self.expect_2d("softmax_rows")?;
        let mut out = self.data.clone();
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        Tensor::new(vec![m, n], out)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Tensor {
        self.map(f64::tanh)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (m, n) = self.expect_2d("slice_cols")?;
        if start + len > n {
            return Err(Error::dim(
                "slice_cols",
                format!("cols {}..{} of {}", start, start + len, n),
            ));
        }
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&self.data[i * n + start..i * n + start + len]);
        }
        Tensor::new(vec![m, len], out)
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor> {
        let (m, n) = self.expect_2d("slice_rows")?;
        if start + len > m {
            return Err(Error::dim(
                "slice_rows",
                format!("rows {}..{} of {}", start, start + len, m),
            ));
        }
        Tensor::new(vec![len, n], self.data[start * n..(start + len) * n].to_vec())
    }

    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let m = parts.first().map_or(0, |t| t.rows());
        if parts.iter().any(|t| t.shape.len() != 2 || t.rows() != m) {
            return Err(Error::dim("concat_cols", "row counts differ"));
        }
        let n: usize = parts.iter().map(|t| t.cols()).sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for t in parts {
                out.extend_from_slice(t.row(i));
            }
        }
        Tensor::new(vec![m, n], out)
    }

    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let n = parts.first().map_or(0, |t| t.cols());
        if parts.iter().any(|t| t.shape.len() != 2 || t.cols() != n) {
            return Err(Error::dim("concat_rows", "column counts differ"));
        }
        let m: usize = parts.iter().map(|t| t.rows()).sum();
        let mut out = Vec::with_capacity(m * n);
        for t in parts {
            out.extend_from_slice(&t.data);
        }
        Tensor::new(vec![m, n], out)
    }

    /// Trace of a square 2-D tensor.
    pub fn trace(&self) -> f64 {
        let n = self.rows().min(self.cols());
        (0..n).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-row layer normalization. Returns the output plus the per-row mean and
/// inverse standard deviation needed by the backward pass.
/// `out[m×n] = a[m×k] · b[k×n]` with `(row, col)` element strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), out: &mut [f64]) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: the strides describe in-bounds views of `a` (m×k), `b` (k×n)
    // and the dense row-major `out` (m×n), whose lengths were checked by the
    // callers' shape validation.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn layer_norm_rows(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (m, n) = x.expect_2d("layer_norm")?;
    if gamma.len() != n || beta.len() != n {
        return Err(Error::dim(
            "layer_norm",
            format!("x {:?}, gamma {:?}, beta {:?}", x.shape, gamma.shape, beta.shape),
        ));
    }
    let mut out = vec![0.0; m * n];
    let mut means = Vec::with_capacity(m);
    let mut inv_stds = Vec::with_capacity(m);
    for i in 0..m {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..n {
            out[i * n + j] = (row[j] - mean) * inv * gamma.data[j] + beta.data[j];
        }
        means.push(mean);
        inv_stds.push(inv);
    }
    Ok((Tensor::new(vec![m, n], out)?, means, inv_stds))
}
