use num_complex::Complex64;

use crate::error::{Result, SpectfError};

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(SpectfError::invalid(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(SpectfError::invalid("ragged rows"));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
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

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }
}

/// Dense row-major complex matrix stored as separate real and imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, re: vec![0.0; rows * cols], im: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: Complex64) -> Self {
        Self { rows, cols, re: vec![value.re; rows * cols], im: vec![value.im; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.re[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_parts(rows: usize, cols: usize, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != rows * cols || im.len() != rows * cols {
            return Err(SpectfError::invalid(format!(
                "complex matrix planes ({}, {}) do not match {rows}x{cols}",
                re.len(),
                im.len()
            )));
        }
        Ok(Self { rows, cols, re, im })
    }

    pub fn from_real(m: &Matrix) -> Self {
        Self { rows: m.rows, cols: m.cols, re: m.data.clone(), im: vec![0.0; m.data.len()] }
    }

    pub fn from_complex(rows: usize, cols: usize, values: &[Complex64]) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(SpectfError::invalid("complex value count does not match shape"));
        }
        Ok(Self {
            rows,
            cols,
            re: values.iter().map(|z| z.re).collect(),
            im: values.iter().map(|z| z.im).collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn re_mut(&mut self) -> &mut [f64] {
        &mut self.re
    }

    pub fn im_mut(&mut self) -> &mut [f64] {
        &mut self.im
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        let i = r * self.cols + c;
        Complex64::new(self.re[i], self.im[i])
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, z: Complex64) {
        let i = r * self.cols + c;
        self.re[i] = z.re;
        self.im[i] = z.im;
    }

    pub fn real_part(&self) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.re.clone() }
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.re[c * self.rows + r] = self.re[r * self.cols + c];
                out.im[c * self.rows + r] = self.im[r * self.cols + c];
            }
        }
        out
    }

    pub fn conj(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            re: self.re.clone(),
            im: self.im.iter().map(|v| -v).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            re: self.re.iter().map(|v| v * s).collect(),
            im: self.im.iter().map(|v| v * s).collect(),
        }
    }

    fn require_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(SpectfError::invalid(format!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.require_same_shape(other, "add")?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            re: self.re.iter().zip(&other.re).map(|(a, b)| a + b).collect(),
            im: self.im.iter().zip(&other.im).map(|(a, b)| a + b).collect(),
        })
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.re.iter_mut().zip(&other.re) {
            *a += b;
        }
        for (a, b) in self.im.iter_mut().zip(&other.im) {
            *a += b;
        }
    }

    /// Complex matrix product.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(SpectfError::invalid(format!(
                "matmul: inner dimensions disagree ({}x{} * {}x{})",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(m, n);
        for i in 0..m {
            for p in 0..k {
                let ar = self.re[i * k + p];
                let ai = self.im[i * k + p];
                if ar == 0.0 && ai == 0.0 {
                    continue;
                }
                let brow = p * n;
                let orow = i * n;
                for j in 0..n {
                    let br = other.re[brow + j];
                    let bi = other.im[brow + j];
                    out.re[orow + j] += ar * br - ai * bi;
                    out.im[orow + j] += ar * bi + ai * br;
                }
            }
        }
        Ok(out)
    }

    /// Two independent real products: `re = A.re * B.re`, `im = A.im * B.im`.
    pub fn pair_matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(SpectfError::invalid(format!(
                "pair_matmul: inner dimensions disagree ({}x{} * {}x{})",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Self::zeros(m, n);
        real_matmul_acc(&self.re, &other.re, &mut out.re, m, k, n);
        real_matmul_acc(&self.im, &other.im, &mut out.im, m, k, n);
        Ok(out)
    }

    /// Entrywise complex product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.require_same_shape(other, "cmul_elementwise")?;
        let n = self.len();
        let mut out = Self::zeros(self.rows, self.cols);
        for i in 0..n {
            let (ar, ai, br, bi) = (self.re[i], self.im[i], other.re[i], other.im[i]);
            out.re[i] = ar * br - ai * bi;
            out.im[i] = ar * bi + ai * br;
        }
        Ok(out)
    }

    pub fn magnitude(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.re.iter().zip(&self.im).map(|(a, b)| a.hypot(*b)).collect(),
        }
    }

    /// Round every entry to the nearest `f32`, so that 32-bit serialization is lossless.
    pub fn round_to_f32(&mut self) {
        for v in self.re.iter_mut().chain(self.im.iter_mut()) {
            *v = *v as f32 as f64;
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.re.iter().chain(&self.im).map(|v| v * v).sum()
    }

    pub fn fill_zero(&mut self) {
        self.re.iter_mut().for_each(|v| *v = 0.0);
        self.im.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// `out += a * b` for row-major real matrices of shape `m x k` and `k x n`.
pub(crate) fn real_matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Transpose of a row-major `rows x cols` real buffer.
pub(crate) fn real_transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}
