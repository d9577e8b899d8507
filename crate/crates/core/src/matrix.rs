//! Dense row-major `f64` matrix with the handful of kernels the networks need.
//!
//! All reductions run in a fixed order so results are bit-reproducible.

use crate::error::{shape_check, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        shape_check(data.len() == rows * cols, || {
            format!("{} values cannot fill a {rows}x{cols} matrix", data.len())
        })?;
        Ok(Matrix { rows, cols, data })
    }

    /// Stacks equally long rows. An empty iterator gives a `0 x cols` matrix.
    pub fn from_rows<'a>(cols: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut data = Vec::new();
        let mut n = 0;
        for row in rows {
            shape_check(row.len() == cols, || {
                format!("row {n} has {} columns, expected {cols}", row.len())
            })?;
            data.extend_from_slice(row);
            n += 1;
        }
        Ok(Matrix { rows: n, cols, data })
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a zero-width matrix still has rows
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// `self · wᵀ`, where `w` is stored `out x in` and `self` is `batch x in`.
    pub fn matmul_t(&self, w: &Matrix) -> Result<Matrix> {
        shape_check(self.cols == w.cols, || {
            format!("input width {} does not match weight width {}", self.cols, w.cols)
        })?;
        let mut out = Matrix::zeros(self.rows, w.rows);
        for i in 0..self.rows {
            let x = self.row(i);
            let dst = out.row_mut(i);
            for (o, d) in dst.iter_mut().enumerate() {
                *d = dot(x, w.row(o));
            }
        }
        Ok(out)
    }

    /// `self · w`, where `self` is `batch x out` and `w` is `out x in`.
    pub fn matmul(&self, w: &Matrix) -> Result<Matrix> {
        shape_check(self.cols == w.rows, || {
            format!("left width {} does not match right height {}", self.cols, w.rows)
        })?;
        let mut out = Matrix::zeros(self.rows, w.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * w.cols..(i + 1) * w.cols];
            for (o, &g) in self.row(i).iter().enumerate() {
                if g != 0.0 {
                    axpy(g, w.row(o), dst);
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · x`, where `self` is `batch x out` and `x` is `batch x in`; result is `out x in`.
    pub fn t_matmul(&self, x: &Matrix) -> Result<Matrix> {
        shape_check(self.rows == x.rows, || {
            format!("batch sizes differ: {} vs {}", self.rows, x.rows)
        })?;
        let mut out = Matrix::zeros(self.cols, x.cols);
        for b in 0..self.rows {
            let xr = x.row(b);
            for (o, &g) in self.row(b).iter().enumerate() {
                if g != 0.0 {
                    axpy(g, xr, out.row_mut(o));
                }
            }
        }
        Ok(out)
    }

    /// Column sums, i.e. `1ᵀ · self`.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in self.iter_rows() {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }
}

/// Dot product with four fixed-order partial sums.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += a · x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Matrix {
        Matrix::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn products_match_hand_values() {
        let x = m(2, 3, &[1., 2., 3., 4., 5., 6.]);
        let w = m(2, 3, &[1., 0., -1., 0.5, 0.5, 0.5]);
        let z = x.matmul_t(&w).unwrap();
        assert_eq!(z.as_slice(), &[-2., 3., -2., 7.5]);

        let g = m(2, 2, &[1., 2., 3., 4.]);
        assert_eq!(g.matmul(&w).unwrap().as_slice(), &[2., 1., 0., 5., 2., -1.]);
        assert_eq!(g.t_matmul(&x).unwrap().as_slice(), &[13., 17., 21., 18., 24., 30.]);
        assert_eq!(g.col_sums(), vec![4., 6.]);
    }

    #[test]
    fn shape_errors() {
        let x = Matrix::zeros(2, 3);
        assert!(x.matmul_t(&Matrix::zeros(4, 2)).is_err());
        assert!(Matrix::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn dot_handles_remainders() {
        let a: Vec<f64> = (1..=7).map(f64::from).collect();
        assert_eq!(dot(&a, &a), 140.0);
        assert_eq!(dot(&[], &[]), 0.0);
    }
}
