//! Dense row-major `f64` matrices and the handful of kernels the encoder needs.
//!
//! Matrix products go through `matrixmultiply`, which accepts arbitrary
//! strides, so transposed operands never get materialized.

use std::ops::{Index, IndexMut};

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Mat { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
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
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
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

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Copies rows `start..start + n` into a new matrix.
    pub fn slice_rows(&self, start: usize, n: usize) -> Mat {
        Mat::from_vec(
            n,
            self.cols,
            self.data[start * self.cols..(start + n) * self.cols].to_vec(),
        )
    }

    /// Copies columns `start..start + n` into a new matrix.
    pub fn slice_cols(&self, start: usize, n: usize) -> Mat {
        Mat::from_fn(self.rows, n, |r, c| self[(r, start + c)])
    }

    /// Writes `src` into columns `start..start + src.cols()`.
    pub fn set_cols(&mut self, start: usize, src: &Mat) {
        assert_eq!(self.rows, src.rows);
        for r in 0..self.rows {
            let dst = &mut self.data[r * self.cols + start..r * self.cols + start + src.cols];
            dst.copy_from_slice(src.row(r));
        }
    }

    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// Adds `bias` to every row.
    pub fn add_row_vector(&mut self, bias: &[f64]) {
        assert_eq!(bias.len(), self.cols);
        for row in self.data.chunks_exact_mut(self.cols) {
            row.iter_mut().zip(bias).for_each(|(x, b)| *x += b);
        }
    }

    /// Sums over rows, yielding one value per column.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for row in self.data.chunks_exact(self.cols) {
            out.iter_mut().zip(row).for_each(|(o, x)| *o += x);
        }
        out
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Whether an operand of [`gemm_into`] is read transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

/// `out = beta * out + alpha * op(a) * op(b)`.
pub fn gemm_into(alpha: f64, a: &Mat, ta: Trans, b: &Mat, tb: Trans, beta: f64, out: &mut Mat) {
    let (m, k, rsa, csa) = match ta {
        Trans::No => (a.rows, a.cols, a.cols as isize, 1isize),
        Trans::Yes => (a.cols, a.rows, 1isize, a.cols as isize),
    };
    let (k2, n, rsb, csb) = match tb {
        Trans::No => (b.rows, b.cols, b.cols as isize, 1isize),
        Trans::Yes => (b.cols, b.rows, 1isize, b.cols as isize),
    };
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!(out.shape(), (m, n), "output shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.scale(beta);
        return;
    }
    // SAFETY: dimensions and strides describe the owned buffers checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.data.as_mut_ptr(),
            out.cols as isize,
            1,
        );
    }
}

/// `op(a) * op(b)` as a fresh matrix.
pub fn matmul(a: &Mat, ta: Trans, b: &Mat, tb: Trans) -> Mat {
    let m = if ta == Trans::No { a.rows } else { a.cols };
    let n = if tb == Trans::No { b.cols } else { b.rows };
    let mut out = Mat::zeros(m, n);
    gemm_into(1.0, a, ta, b, tb, 0.0, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Mat, b: &Mat) -> Mat {
        Mat::from_fn(a.rows(), b.cols(), |r, c| {
            (0..a.cols()).map(|k| a[(r, k)] * b[(k, c)]).sum()
        })
    }

    #[test]
    fn gemm_matches_naive_for_all_transpositions() {
        let a = Mat::from_fn(3, 4, |r, c| (r * 4 + c) as f64 * 0.5 - 2.0);
        let b = Mat::from_fn(4, 5, |r, c| ((r + 2 * c) % 7) as f64 - 3.0);
        let expect = naive(&a, &b);
        assert_eq!(matmul(&a, Trans::No, &b, Trans::No), expect);
        let at = a.transpose();
        let bt = b.transpose();
        assert!(matmul(&at, Trans::Yes, &b, Trans::No).max_abs_diff(&expect) < 1e-12);
        assert!(matmul(&a, Trans::No, &bt, Trans::Yes).max_abs_diff(&expect) < 1e-12);
        assert!(matmul(&at, Trans::Yes, &bt, Trans::Yes).max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn gemm_accumulates_with_beta() {
        let a = Mat::from_fn(2, 2, |r, c| (r + c) as f64);
        let mut out = Mat::from_fn(2, 2, |_, _| 1.0);
        gemm_into(2.0, &a, Trans::No, &a, Trans::No, 1.0, &mut out);
        let expect = naive(&a, &a);
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(out[(r, c)], 1.0 + 2.0 * expect[(r, c)]);
            }
        }
    }

    #[test]
    fn column_helpers() {
        let mut m = Mat::from_fn(2, 4, |r, c| (r * 10 + c) as f64);
        let s = m.slice_cols(1, 2);
        assert_eq!(s.as_slice(), &[1.0, 2.0, 11.0, 12.0]);
        m.set_cols(2, &s);
        assert_eq!(m.row(1), &[10.0, 11.0, 11.0, 12.0]);
        assert_eq!(m.column_sums(), vec![10.0, 12.0, 12.0, 14.0]);
    }
}
