//! Row-major matrix with the handful of kernels the model needs. Inner
//! loops run over contiguous rows so the compiler can vectorize them.

use super::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::ZERO; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    pub fn map_to<T: Scalar>(&self) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| T::from_f64(x.to_f64())).collect(),
        }
    }
}

#[inline]
pub fn dot<S: Scalar>(x: &[S], y: &[S]) -> S {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = S::ZERO;
    for (a, b) in x.iter().zip(y) {
        acc += *a * *b;
    }
    acc
}

/// y += alpha * x
#[inline]
pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// c += a @ b, shapes (m x k)(k x n).
pub fn matmul_acc<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>, c: &mut Matrix<S>) {
    assert_eq!(a.cols, b.rows);
    assert_eq!(c.rows, a.rows);
    assert_eq!(c.cols, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let c_row = c.row_mut(i);
        for (t, &a_it) in a_row.iter().enumerate() {
            axpy(a_it, b.row(t), c_row);
        }
    }
}

/// c += a^T @ b, shapes (k x m)^T (k x n).
pub fn matmul_at_b_acc<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>, c: &mut Matrix<S>) {
    assert_eq!(a.rows, b.rows);
    assert_eq!(c.rows, a.cols);
    assert_eq!(c.cols, b.cols);
    for t in 0..a.rows {
        let a_row = a.row(t);
        let b_row = b.row(t);
        for (i, &a_ti) in a_row.iter().enumerate() {
            axpy(a_ti, b_row, c.row_mut(i));
        }
    }
}

/// c += a @ b^T, shapes (m x k)(n x k)^T.
pub fn matmul_a_bt_acc<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>, c: &mut Matrix<S>) {
    assert_eq!(a.cols, b.cols);
    assert_eq!(c.rows, a.rows);
    assert_eq!(c.cols, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let c_row = c.row_mut(i);
        for (j, cij) in c_row.iter_mut().enumerate() {
            *cij += dot(a_row, b.row(j));
        }
    }
}

pub fn matmul<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> Matrix<S> {
    let mut c = Matrix::zeros(a.rows, b.cols);
    matmul_acc(a, b, &mut c);
    c
}

/// Adds `bias` to every row.
pub fn add_bias<S: Scalar>(m: &mut Matrix<S>, bias: &[S]) {
    assert_eq!(m.cols, bias.len());
    for r in 0..m.rows {
        for (x, b) in m.row_mut(r).iter_mut().zip(bias) {
            *x += *b;
        }
    }
}

/// acc[j] += sum over rows of m[., j]
pub fn col_sum_acc<S: Scalar>(m: &Matrix<S>, acc: &mut [S]) {
    assert_eq!(m.cols, acc.len());
    for r in 0..m.rows {
        for (a, x) in acc.iter_mut().zip(m.row(r)) {
            *a += *x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Matrix<f64> {
        Matrix::from_vec(rows, cols, v.to_vec())
    }

    #[test]
    fn matmul_small() {
        let a = m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = m(3, 2, &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = matmul(&a, &b);
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transpose_variants_agree_with_explicit_transpose() {
        let a = m(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = m(3, 4, &(0..12).map(|x| x as f64).collect::<Vec<_>>());
        // a^T @ b
        let mut c = Matrix::zeros(2, 4);
        matmul_at_b_acc(&a, &b, &mut c);
        let at = m(2, 3, &[1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
        assert_eq!(c.data, matmul(&at, &b).data);
        // b @ a' where a': 4x? -> use a (3x2): b^T is 4x3, (4x3)(3x2)
        let mut d = Matrix::zeros(4, 3);
        let e = m(4, 2, &(0..8).map(|x| x as f64).collect::<Vec<_>>());
        let f = m(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        matmul_a_bt_acc(&e, &f, &mut d);
        let ft = m(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(d.data, matmul(&e, &ft).data);
    }

    #[test]
    fn bias_and_colsum() {
        let mut a = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        add_bias(&mut a, &[10.0, 20.0]);
        assert_eq!(a.data, vec![11.0, 22.0, 13.0, 24.0]);
        let mut s = vec![0.0; 2];
        col_sum_acc(&a, &mut s);
        assert_eq!(s, vec![24.0, 46.0]);
    }
}
