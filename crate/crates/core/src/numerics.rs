//! Small dense linear algebra shared across the crate.
//!
//! Everything here is sized for motion-policy trees (dimensions in the single
//! digits), so matrices are plain row-major `Vec`s. [`Matrix`] is generic over
//! [`Real`] so the same pullback code runs on `f64` and on tape variables.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative tolerance for rank truncation in [`pseudo_inverse`].
pub const DEFAULT_PINV_TOL: f64 = 1e-10;

/// Scalar type the policy algebra is generic over: plain `f64`, or a variable
/// recorded on a differentiation tape.
pub trait Real:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(self) -> f64;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    /// `ln(1 + e^x)`, evaluated without overflow.
    fn softplus(self) -> Self;
    fn sigmoid(self) -> Self;

    /// Solves `m a = f` through the Moore-Penrose inverse of a symmetric PSD `m`.
    fn pinv_solve(m: &Matrix<Self>, f: &[Self], tol: f64) -> Result<Vec<Self>>;

    /// The value if it is known not to depend on any recorded input.
    fn as_constant(self) -> Option<f64>;

    fn zero() -> Self {
        Self::constant(0.0)
    }
}

pub fn softplus_f64(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Real for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn softplus(self) -> Self {
        softplus_f64(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid_f64(self)
    }
    fn pinv_solve(m: &Matrix<f64>, f: &[f64], tol: f64) -> Result<Vec<f64>> {
        let pinv = pseudo_inverse(m, tol)?;
        pinv.matvec(f)
    }
    fn as_constant(self) -> Option<f64> {
        Some(self)
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix<f64> {
    type Error = Error;
    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::new(raw.rows, raw.cols, raw.data)
    }
}

impl Serialize for Matrix<f64> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RawMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Matrix<f64> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawMatrix::deserialize(d)?;
        Matrix::try_from(raw).map_err(serde::de::Error::custom)
    }
}

impl Matrix<f64> {
    /// Validating constructor: length must match and every entry must be finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite matrix entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Matrix::new(r, c, rows.iter().flat_map(|row| row.iter().copied()).collect())
    }

    pub fn diag(entries: &[f64]) -> Self {
        let n = entries.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &v) in entries.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Symmetric to within `tol` relative to the largest entry (floored at 1).
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let scale = self.max_abs().max(1.0);
        (0..self.rows).all(|i| {
            (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol * scale)
        })
    }

    /// Eigenvalues (ascending) and matching unit eigenvectors (as columns) of the
    /// symmetric part of a square matrix.
    pub fn symmetric_eigen(&self) -> Result<(Vec<f64>, Matrix<f64>)> {
        self.require_square("symmetric_eigen")?;
        let n = self.rows;
        if n == 0 {
            return Ok((Vec::new(), Matrix::zeros(0, 0)));
        }
        let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (self.get(i, j) + self.get(j, i)));
        let eig = sym.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = Matrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
        Ok((values, vectors))
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let (values, _) = self.symmetric_eigen()?;
        Ok(values.first().copied().unwrap_or(0.0))
    }

    fn require_square(&self, what: &str) -> Result<()> {
        if !self.is_square() {
            return Err(Error::Dimension(format!(
                "{what} needs a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| T::constant(if i == j { 1.0 } else { 0.0 }))
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Unchecked constructor for internal use where the shape is known to be right.
    pub(crate) fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> Matrix<f64> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v.value()).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scale(&self, s: T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix<T>) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Matrix<T>) -> Result<Self> {
        self.add(&other.scale(T::constant(-1.0)))
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {:?} by {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Matrix::from_fn(self.rows, other.cols, |i, j| {
            let mut acc = T::zero();
            for k in 0..self.cols {
                acc = acc + self.get(i, k) * other.get(k, j);
            }
            acc
        }))
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if self.cols != v.len() {
            return Err(Error::Dimension(format!(
                "cannot multiply {:?} by vector of length {}",
                self.shape(),
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect())
    }

    /// `jᵀ · self · j` for a constant `j`. Structural zeros of `j` are skipped so
    /// tape-backed scalars record only the products that matter.
    pub fn congruence(&self, j: &Matrix<f64>) -> Result<Self> {
        if !self.is_square() || j.rows != self.rows {
            return Err(Error::Dimension(format!(
                "congruence of {:?} by {:?}",
                self.shape(),
                j.shape()
            )));
        }
        let n = j.cols;
        let m = self.rows;
        // mj = self · j  (m × n)
        let mut mj = vec![T::zero(); m * n];
        for r in 0..m {
            for c in 0..n {
                let mut acc: Option<T> = None;
                for k in 0..m {
                    let jk = j.get(k, c);
                    if jk != 0.0 {
                        let term = self.get(r, k) * jk;
                        acc = Some(acc.map_or(term, |a| a + term));
                    }
                }
                mj[r * n + c] = acc.unwrap_or_else(T::zero);
            }
        }
        let mut out = vec![T::zero(); n * n];
        for a in 0..n {
            for c in 0..n {
                let mut acc: Option<T> = None;
                for r in 0..m {
                    let jr = j.get(r, a);
                    if jr != 0.0 {
                        let term = mj[r * n + c] * jr;
                        acc = Some(acc.map_or(term, |s| s + term));
                    }
                }
                out[a * n + c] = acc.unwrap_or_else(T::zero);
            }
        }
        Ok(Matrix::from_vec(n, n, out))
    }
}

impl Matrix<f64> {
    pub fn lift<T: Real>(&self) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| T::constant(v)).collect(),
        }
    }
}

/// `jᵀ v` for a constant `j`.
pub fn tr_matvec<T: Real>(j: &Matrix<f64>, v: &[T]) -> Result<Vec<T>> {
    if j.rows() != v.len() {
        return Err(Error::Dimension(format!(
            "transpose product of {:?} with vector of length {}",
            j.shape(),
            v.len()
        )));
    }
    Ok((0..j.cols())
        .map(|c| {
            let mut acc: Option<T> = None;
            for (r, &vr) in v.iter().enumerate() {
                let jr = j.get(r, c);
                if jr != 0.0 {
                    let term = vr * jr;
                    acc = Some(acc.map_or(term, |a| a + term));
                }
            }
            acc.unwrap_or_else(T::zero)
        })
        .collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Moore-Penrose inverse of a symmetric matrix through its eigendecomposition.
///
/// Eigenvalues with magnitude at most `tol` times the largest magnitude are
/// treated as zero.
pub fn pseudo_inverse(m: &Matrix<f64>, tol: f64) -> Result<Matrix<f64>> {
    m.require_square("pseudo_inverse")?;
    if !m.is_finite() {
        return Err(Error::Numeric("pseudo_inverse of non-finite matrix".into()));
    }
    if !m.is_symmetric(tol.max(1e-12)) {
        return Err(Error::Numeric("pseudo_inverse needs a symmetric matrix".into()));
    }
    let n = m.rows();
    let (values, vectors) = m.symmetric_eigen()?;
    let largest = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let mut out = Matrix::zeros(n, n);
    if largest == 0.0 {
        return Ok(out);
    }
    let cutoff = tol * largest;
    for (k, &lambda) in values.iter().enumerate() {
        if lambda.abs() <= cutoff {
            continue;
        }
        let inv = 1.0 / lambda;
        for i in 0..n {
            let vi = vectors.get(i, k) * inv;
            for j in 0..n {
                out.data[i * n + j] += vi * vectors.get(j, k);
            }
        }
    }
    Ok(out)
}

/// Symmetric within `tol` and smallest eigenvalue at least `-tol` (both relative
/// to the matrix scale, floored at 1).
pub fn is_psd(m: &Matrix<f64>, tol: f64) -> Result<bool> {
    m.require_square("is_psd")?;
    if !m.is_symmetric(tol) {
        return Ok(false);
    }
    let (values, _) = m.symmetric_eigen()?;
    let scale = values.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    Ok(values.first().is_none_or(|&v| v >= -tol * scale))
}

/// Central-difference gradient of a scalar function.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite difference step must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "function is not finite around coordinate {i}"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Central-difference Jacobian of a vector function (rows = outputs).
pub fn finite_diff_jacobian(
    f: impl Fn(&[f64]) -> Vec<f64>,
    x: &[f64],
    h: f64,
) -> Result<Matrix<f64>> {
    let out_dim = f(x).len();
    let mut cols = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        let col: Vec<f64> = plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect();
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "function is not finite around coordinate {i}"
            )));
        }
        cols.push(col);
    }
    Ok(Matrix::from_fn(out_dim, x.len(), |r, c| cols[c][r]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &Matrix<f64>, b: &Matrix<f64>, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn pinv_identity() {
        let i3 = Matrix::<f64>::identity(3);
        assert_close(&pseudo_inverse(&i3, 1e-12).unwrap(), &i3, 1e-15);
    }

    #[test]
    fn pinv_zero_is_zero() {
        let z = Matrix::<f64>::zeros(2, 2);
        assert_close(&pseudo_inverse(&z, 1e-12).unwrap(), &z, 0.0);
    }

    #[test]
    fn pinv_rank_deficient_diag() {
        let m = Matrix::diag(&[2.0, 0.0]);
        assert_close(&pseudo_inverse(&m, 1e-12).unwrap(), &Matrix::diag(&[0.5, 0.0]), 1e-15);
    }

    #[test]
    fn pinv_rejects_bad_input() {
        let rect = Matrix::new(2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(pseudo_inverse(&rect, 1e-12), Err(Error::Dimension(_))));
        assert!(matches!(Matrix::new(1, 1, vec![f64::NAN]), Err(Error::Numeric(_))));
    }

    #[test]
    fn pinv_penrose_condition() {
        let m = Matrix::from_rows(&[&[4.0, 2.0, 0.0], &[2.0, 1.0, 0.0], &[0.0, 0.0, 3.0]]).unwrap();
        let p = pseudo_inverse(&m, 1e-10).unwrap();
        let pmp = p.matmul(&m).unwrap().matmul(&p).unwrap();
        assert_close(&pmp, &p, 1e-9);
    }

    #[test]
    fn psd_examples() {
        assert!(is_psd(&Matrix::identity(2), 1e-12).unwrap());
        assert!(!is_psd(&Matrix::diag(&[1.0, -1.0]), 1e-12).unwrap());
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let m = Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]).unwrap();
        assert!(is_psd(&m, 1e-12).unwrap());
        let (values, _) = m.symmetric_eigen().unwrap();
        assert!((values[0] - 1.0).abs() < 1e-12 && (values[1] - 3.0).abs() < 1e-12);
        assert!(is_psd(&Matrix::new(2, 3, vec![0.0; 6]).unwrap(), 1e-12).is_err());
    }

    #[test]
    fn finite_difference_examples() {
        let g = finite_diff_grad(|x| x[0] * x[0] + x[1] * x[1], &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);

        let g = finite_diff_grad(|_| 7.0, &[0.3, -1.0, 2.0], 1e-5).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));

        // cos(0.3) from its Taylor series
        let mut term = 1.0;
        let mut cos = 1.0;
        for k in 1..12 {
            term *= -0.09 / ((2 * k - 1) * (2 * k)) as f64;
            cos += term;
        }
        let g = finite_diff_grad(|x| x[0].sin(), &[0.3], 1e-5).unwrap();
        assert!((g[0] - cos).abs() < 1e-9);
    }

    #[test]
    fn finite_difference_reports_coordinate() {
        let err = finite_diff_grad(|x| if x[1] > 0.5 { f64::NAN } else { 0.0 }, &[0.0, 0.5], 1e-3)
            .unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
    }

    #[test]
    fn congruence_matches_explicit_product() {
        let m = Matrix::from_rows(&[&[2.0, 0.5], &[0.5, 1.0]]).unwrap();
        let j = Matrix::from_rows(&[&[1.0, 0.0, 2.0], &[0.0, -1.0, 3.0]]).unwrap();
        let expected = j.transpose().matmul(&m).unwrap().matmul(&j).unwrap();
        assert_close(&m.congruence(&j).unwrap(), &expected, 1e-14);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus_f64(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus_f64(800.0), 800.0);
        assert!(softplus_f64(-800.0) >= 0.0);
        assert!((sigmoid_f64(-800.0)).abs() < 1e-300 + 1e-300);
    }
}
