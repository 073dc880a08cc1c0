//! Small dense matrices. Dimensions here are the state dimension N of the
//! operator, so everything is O(N^3) and written for clarity.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        Self { rows, cols, data }
    }

    /// Builds from nested rows; returns `None` if the rows are ragged.
    pub fn from_rows(rows: &[Vec<T>]) -> Option<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return None;
        }
        Some(Self { rows: r, cols: c, data: rows.iter().flatten().copied().collect() })
    }

    pub fn diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
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
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| U::lit(v.to_f64_lossy())).collect() }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn mat_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(self.cols, x.len(), "vector length differs from column count");
        (0..self.rows).map(|i| self.row(i).iter().zip(x).map(|(&a, &b)| a * b).sum()).collect()
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v * s).collect() }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Symmetric part check with absolute tolerance `tol`.
    pub fn is_symmetric(&self, tol: T) -> bool {
        self.is_square() && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// `D M D` for a diagonal `D` given by its entries.
    pub fn sandwich_diag(&self, d: &[T]) -> Self {
        let mut m = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(i, j)] = d[i] * self[(i, j)] * d[j];
            }
        }
        m
    }

    /// Lower Cholesky factor, `None` if the matrix is not numerically PD.
    pub fn cholesky(&self) -> Option<Self> {
        if !self.is_square() {
            return None;
        }
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) {
                return None;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Some(l)
    }

    /// Inverse through Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Option<Self> {
        if !self.is_square() {
            return None;
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        let scale = self.max_abs();
        if scale == T::zero() {
            return None;
        }
        for col in 0..n {
            let (piv, pval) = (col..n).map(|r| (r, a[(r, col)].abs())).fold((col, -T::one()), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            });
            if pval <= scale * T::epsilon() * T::from_usize_lossy(n) * T::lit(1e-3) {
                return None;
            }
            if piv != col {
                for j in 0..n {
                    a.data.swap(piv * n + j, col * n + j);
                    inv.data.swap(piv * n + j, col * n + j);
                }
            }
            let p = a[(col, col)];
            for j in 0..n {
                a[(col, j)] /= p;
                inv[(col, j)] /= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[(r, col)];
                if f == T::zero() {
                    continue;
                }
                for j in 0..n {
                    let (ac, ic) = (a[(col, j)], inv[(col, j)]);
                    a[(r, j)] -= f * ac;
                    inv[(r, j)] -= f * ic;
                }
            }
        }
        Some(inv)
    }

    /// Inverse of a symmetric positive definite matrix via Cholesky; the
    /// result is symmetrized.
    pub fn inverse_spd(&self) -> Option<Self> {
        let l = self.cholesky()?;
        let n = self.rows;
        let mut inv = Self::zeros(n, n);
        for c in 0..n {
            let mut e = vec![T::zero(); n];
            e[c] = T::one();
            let x = cholesky_solve(&l, &e);
            for r in 0..n {
                inv[(r, c)] = x[r];
            }
        }
        Some(inv.symmetrized())
    }

    pub fn symmetrized(&self) -> Self {
        let t = self.transpose();
        self.add(&t).scale(T::lit(0.5))
    }

    /// log det of an SPD matrix.
    pub fn log_det_spd(&self) -> Option<T> {
        let l = self.cholesky()?;
        Some((0..self.rows).map(|i| l[(i, i)].ln()).sum::<T>() * T::lit(2.0))
    }

    /// Symmetric eigendecomposition by cyclic Jacobi rotations. Returns
    /// eigenvalues in ascending order and the matching eigenvectors as columns.
    pub fn sym_eigen(&self) -> (Vec<T>, Self) {
        assert!(self.is_square(), "eigen of non-square matrix");
        let n = self.rows;
        let mut a = self.symmetrized();
        let mut v = Self::identity(n);
        let scale = a.frobenius();
        for _sweep in 0..100 {
            let mut off = T::zero();
            for i in 0..n {
                for j in 0..i {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
            if off.sqrt() <= scale * T::epsilon() * T::lit(1e-2) || off == T::zero() {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    if apq == T::zero() {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (T::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[(k, p)], a[(k, q)]);
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap_or(std::cmp::Ordering::Equal));
        let vals = idx.iter().map(|&i| a[(i, i)]).collect();
        let mut vecs = Self::zeros(n, n);
        for (new, &old) in idx.iter().enumerate() {
            for k in 0..n {
                vecs[(k, new)] = v[(k, old)];
            }
        }
        (vals, vecs)
    }

    pub fn eig_min_max(&self) -> (T, T) {
        let (vals, _) = self.sym_eigen();
        (vals[0], vals[vals.len() - 1])
    }

    /// Operator 2-norm via the largest eigenvalue of `MᵀM`.
    pub fn op_norm(&self) -> T {
        let mtm = self.transpose().matmul(self);
        mtm.eig_min_max().1.max(T::zero()).sqrt()
    }

    /// Singular values, ascending.
    pub fn singular_values(&self) -> Vec<T> {
        let mtm = self.transpose().matmul(self);
        mtm.sym_eigen().0.into_iter().map(|v| v.max(T::zero()).sqrt()).collect()
    }

    /// Symmetric PSD square root `S` with `S S = M`.
    pub fn sqrt_psd(&self) -> Self {
        let (vals, vecs) = self.sym_eigen();
        let d: Vec<T> = vals.iter().map(|&v| v.max(T::zero()).sqrt()).collect();
        let n = self.rows;
        let mut out = Self::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = (0..n).map(|k| vecs[(i, k)] * d[k] * vecs[(j, k)]).sum();
            }
        }
        out
    }

    pub fn quad_form(&self, x: &[T]) -> T {
        x.iter().zip(self.mat_vec(x)).map(|(&a, b)| a * b).sum()
    }
}

/// Solves `L Lᵀ x = b` for a lower Cholesky factor `L`.
pub fn cholesky_solve<T: Scalar>(l: &Matrix<T>, b: &[T]) -> Vec<T> {
    let n = l.rows();
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn inverse_of_kolmogorov_gramian() {
        let c1 = m(&[&[1.0, -0.5], &[-0.5, 1.0 / 3.0]]);
        let inv = c1.inverse_spd().unwrap();
        let want = m(&[&[4.0, 6.0], &[6.0, 12.0]]);
        assert!(inv.sub(&want).max_abs() < 1e-12);
        let gj = c1.inverse().unwrap();
        assert!(gj.sub(&want).max_abs() < 1e-12);
    }

    #[test]
    fn golden_ratio_singular_value() {
        let e = m(&[&[1.0, 0.0], &[-1.0, 1.0]]);
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((e.op_norm() - phi).abs() < 1e-13);
    }

    #[test]
    fn jacobi_reconstructs() {
        let a = m(&[&[4.0, 1.0, 0.5], &[1.0, 3.0, -0.2], &[0.5, -0.2, 1.0]]);
        let (vals, vecs) = a.sym_eigen();
        let rebuilt = vecs.matmul(&Matrix::diag(&vals)).matmul(&vecs.transpose());
        assert!(rebuilt.sub(&a).max_abs() < 1e-12);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let s = a.sqrt_psd();
        assert!(s.matmul(&s).sub(&a).max_abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_has_no_inverse() {
        let a = m(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(a.inverse().is_none());
        assert!(a.cholesky().is_none());
    }

    #[test]
    fn log_det_matches_product_of_pivots() {
        let a = m(&[&[2.0, 0.3], &[0.3, 1.0]]);
        let want = (2.0f64 * 1.0 - 0.09).ln();
        assert!((a.log_det_spd().unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn works_in_single_precision() {
        let a: Matrix<f32> = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let (lo, hi) = a.eig_min_max();
        assert!((lo - 1.0).abs() < 1e-5 && (hi - 3.0).abs() < 1e-5);
    }
}
