use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense row-major `f64` matrix.
///
/// Every reduction in this type (and in the kernels below) accumulates in a
/// fixed sequential order per output element, so results are bit-identical
/// across runs and independent of how elements are scheduled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    /// Largest row ℓ₂ norm.
    pub fn two_infinity_norm(&self) -> f64 {
        (0..self.rows)
            .map(|r| norm(self.row(r)))
            .fold(0.0, f64::max)
    }

    /// Frobenius inner product `Σ aᵢⱼ bᵢⱼ`.
    pub fn inner(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        dot(&self.data, &other.data)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    pub fn scale_in_place(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    /// `self - other`.
    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// `self - other`, written into `out`.
    pub fn sub_into(&self, other: &Self, out: &mut Self) {
        debug_assert_eq!(self.shape(), other.shape());
        out.rows = self.rows;
        out.cols = self.cols;
        out.data.clear();
        out.data
            .extend(self.data.iter().zip(&other.data).map(|(a, b)| a - b));
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        axpy(alpha, &other.data, &mut self.data);
    }

    /// `self · v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    /// `selfᵀ · v`, accumulated row by row.
    pub fn transpose_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            if vr != 0.0 {
                axpy(vr, self.row(r), &mut out);
            }
        }
        out
    }

    /// Plain matrix product `self · other`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(k), dst);
                }
            }
        }
        out
    }

    /// Largest `|aᵢⱼ − aⱼᵢ|`; `None` for non-square input.
    pub fn asymmetry(&self) -> Option<f64> {
        if !self.is_square() {
            return None;
        }
        let n = self.rows;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        Some(worst)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Sequential dot product.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

// Register-blocked kernels. Each output element owns one accumulator that
// walks the reduction index in increasing order, so every result equals the
// naive sequential loop bit for bit; blocking only interleaves independent
// sums. Rust never contracts `a * b + c` into an FMA, which keeps this true
// for any SIMD width.
const MR: usize = 4;
const NR: usize = 8;

/// Batched `out[i][j] = Σ_k a[i][k]·w[j][k]` for `a: n×K`, `w: m×K`.
pub fn mul_rows_by_transpose(a: &Matrix, w: &Matrix) -> Matrix {
    assert_eq!(a.cols, w.cols, "inner dimension mismatch");
    let (n, kdim, m) = (a.rows, a.cols, w.rows);
    let at = a.transpose();
    let mut out = Matrix::zeros(n, m);
    let (n_full, m_full) = (n - n % NR, m - m % MR);
    for j0 in (0..m_full).step_by(MR) {
        let wrows: [&[f64]; MR] = std::array::from_fn(|t| w.row(j0 + t));
        for i0 in (0..n_full).step_by(NR) {
            let mut acc = [[0.0f64; NR]; MR];
            for k in 0..kdim {
                let av: &[f64; NR] = at.data[k * n + i0..k * n + i0 + NR].try_into().unwrap();
                for t in 0..MR {
                    let wv = wrows[t][k];
                    for s in 0..NR {
                        acc[t][s] += av[s] * wv;
                    }
                }
            }
            for t in 0..MR {
                for s in 0..NR {
                    out.data[(i0 + s) * m + j0 + t] = acc[t][s];
                }
            }
        }
    }
    // Ragged edges. Leftover rows still take NR columns at a time so that
    // small batches are not bound by a single accumulator's latency.
    for i in 0..n {
        let ar = a.row(i);
        let mut j = if i < n_full { m_full } else { 0 };
        while j + NR <= m {
            let wrows: [&[f64]; NR] = std::array::from_fn(|t| w.row(j + t));
            let mut acc = [0.0f64; NR];
            for (k, &av) in ar.iter().enumerate() {
                for t in 0..NR {
                    acc[t] += av * wrows[t][k];
                }
            }
            out.data[i * m + j..i * m + j + NR].copy_from_slice(&acc);
            j += NR;
        }
        for j in j..m {
            out.data[i * m + j] = dot(ar, w.row(j));
        }
    }
    out
}

/// Batched `out[i][k] = Σ_j d[i][j]·w[j][k]` for `d: n×m`, `w: m×K`.
pub fn mul_rows_by(d: &Matrix, w: &Matrix) -> Matrix {
    assert_eq!(d.cols, w.rows, "inner dimension mismatch");
    let (n, m, kdim) = (d.rows, d.cols, w.cols);
    let mut out = Matrix::zeros(n, kdim);
    let (n_full, k_full) = (n - n % MR, kdim - kdim % NR);
    // Column strip of `w`, packed contiguously: rows of `w` are often a
    // power-of-two number of bytes apart, which would alias cache sets.
    let mut strip = vec![0.0f64; m * NR];
    for k0 in (0..k_full).step_by(NR) {
        for j in 0..m {
            strip[j * NR..(j + 1) * NR].copy_from_slice(&w.data[j * kdim + k0..j * kdim + k0 + NR]);
        }
        for i0 in (0..n_full).step_by(MR) {
            let drows: [&[f64]; MR] = std::array::from_fn(|t| d.row(i0 + t));
            let mut acc = [[0.0f64; NR]; MR];
            for j in 0..m {
                let wv: &[f64; NR] = strip[j * NR..(j + 1) * NR].try_into().unwrap();
                for t in 0..MR {
                    let c = drows[t][j];
                    for s in 0..NR {
                        acc[t][s] += c * wv[s];
                    }
                }
            }
            for t in 0..MR {
                out.data[(i0 + t) * kdim + k0..(i0 + t) * kdim + k0 + NR].copy_from_slice(&acc[t]);
            }
        }
    }
    for i in 0..n {
        let k_start = if i < n_full { k_full } else { 0 };
        for k in k_start..kdim {
            let mut s = 0.0;
            for j in 0..m {
                s += d.data[i * m + j] * w.data[j * kdim + k];
            }
            out.data[i * kdim + k] = s;
        }
    }
    out
}

/// `out[j][k] = (Σ_i d[i][j]·x[i][k]) / denom` for `d: n×m`, `x: n×K`.
///
/// The sum of outer products `Σ_i d_i x_iᵀ`, accumulated over examples in
/// increasing index order and divided once at the end.
pub fn sum_outer_products(d: &Matrix, x: &Matrix, denom: f64) -> Matrix {
    assert_eq!(d.rows, x.rows, "example count mismatch");
    let (n, m, kdim) = (d.rows, d.cols, x.cols);
    let mut out = Matrix::zeros(m, kdim);
    let (m_full, k_full) = (m - m % MR, kdim - kdim % NR);
    for j0 in (0..m_full).step_by(MR) {
        for k0 in (0..k_full).step_by(NR) {
            let mut acc = [[0.0f64; NR]; MR];
            for i in 0..n {
                let xv: &[f64; NR] = x.data[i * kdim + k0..i * kdim + k0 + NR].try_into().unwrap();
                let dv = &d.data[i * m + j0..i * m + j0 + MR];
                for t in 0..MR {
                    let c = dv[t];
                    for s in 0..NR {
                        acc[t][s] += c * xv[s];
                    }
                }
            }
            for t in 0..MR {
                for s in 0..NR {
                    out.data[(j0 + t) * kdim + k0 + s] = acc[t][s] / denom;
                }
            }
        }
    }
    for j in 0..m {
        let k_start = if j < m_full { k_full } else { 0 };
        for k in k_start..kdim {
            let mut s = 0.0;
            for i in 0..n {
                s += d.data[i * m + j] * x.data[i * kdim + k];
            }
            out.data[j * kdim + k] = s / denom;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_roundtrip() {
        let m = Matrix::from_fn(3, 5, |r, c| (r * 7 + c) as f64);
        assert_eq!(m.transpose().transpose(), m);
        assert_eq!(m.transpose()[(4, 2)], m[(2, 4)]);
    }

    #[test]
    fn batched_kernels_match_matmul() {
        let a = Matrix::from_fn(4, 6, |r, c| ((r * 13 + c * 7) % 11) as f64 - 5.0);
        let w = Matrix::from_fn(3, 6, |r, c| ((r * 5 + c * 3) % 7) as f64 - 3.0);
        assert_eq!(mul_rows_by_transpose(&a, &w), a.matmul(&w.transpose()));

        let d = Matrix::from_fn(4, 3, |r, c| ((r + 2 * c) % 5) as f64 - 2.0);
        assert_eq!(mul_rows_by(&d, &w), d.matmul(&w));

        let outer = sum_outer_products(&d, &a, 1.0);
        assert_eq!(outer, d.transpose().matmul(&a));
    }

    #[test]
    fn norms_of_diag() {
        let m = Matrix::from_diag(&[3.0, 1.0]);
        assert_eq!(m.frobenius_norm_sq(), 10.0);
        assert_eq!(m.two_infinity_norm(), 3.0);
        assert_eq!(m.asymmetry(), Some(0.0));
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
    }
}
