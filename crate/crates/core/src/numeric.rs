//! Dense row-major kernels with hand-written backward passes.
//!
//! Everything the model needs is built from this small fixed set of
//! operations. Loops run in a fixed order so results are bit-reproducible.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Stabilizer added to the mean square in [`rmsnorm`].
pub const RMS_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "Matrix::new",
                lhs: (rows, cols),
                rhs: (data.len(), 1),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape {
                    op: "Matrix::from_rows",
                    lhs: (rows.len(), cols),
                    rhs: (1, r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
        Matrix { rows, cols, data }
    }

    pub fn random_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
        Matrix { rows, cols, data }
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
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Matrix {
        self.map(|x| x * k)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.check_same(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.check_same(other, op)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    fn check_same(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(())
    }

    /// Columns `[start, end)` as a new matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.cols);
        let w = end - start;
        let mut out = Matrix::zeros(self.rows, w);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[start..end]);
        }
        out
    }

    /// Side-by-side concatenation `[self | other]`.
    pub fn hconcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape {
                op: "hconcat",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let cols = self.cols + other.cols;
        let mut out = Matrix::zeros(self.rows, cols);
        for i in 0..self.rows {
            let r = out.row_mut(i);
            r[..self.cols].copy_from_slice(self.row(i));
            r[self.cols..].copy_from_slice(other.row(i));
        }
        Ok(out)
    }

    /// Zeroes the strict upper triangle in place.
    pub fn causal_mask_in_place(&mut self) {
        for i in 0..self.rows {
            for j in (i + 1).min(self.cols)..self.cols {
                self.data[i * self.cols + j] = 0.0;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// `A · B`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape {
            op: "matmul",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

/// `Aᵀ · B` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::Shape {
            op: "matmul_tn",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let a_row = a.row(k);
        let b_row = b.row(k);
        for (i, &aki) in a_row.iter().enumerate() {
            if aki == 0.0 {
                continue;
            }
            let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aki * bv;
            }
        }
    }
    Ok(out)
}

/// `A · Bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::Shape {
            op: "matmul_nt",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = dot(a_row, b.row(j));
        }
    }
    Ok(out)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `xᵢ · gainᵢ / sqrt(mean(x²) + ε)`.
pub fn rmsnorm(x: &[f64], gain: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Numeric("rmsnorm of zero-length input".into()));
    }
    if x.len() != gain.len() {
        return Err(Error::Shape {
            op: "rmsnorm",
            lhs: (1, x.len()),
            rhs: (1, gain.len()),
        });
    }
    let inv = inv_rms(x);
    Ok(x.iter().zip(gain).map(|(&v, &g)| v * g * inv).collect())
}

#[inline]
fn inv_rms(x: &[f64]) -> f64 {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    1.0 / (ms + RMS_EPS).sqrt()
}

/// Row-wise RMSNorm. Returns the output and the per-row inverse RMS
/// needed by [`rmsnorm_rows_backward`].
pub fn rmsnorm_rows(x: &Matrix, gain: &[f64]) -> Result<(Matrix, Vec<f64>)> {
    if x.cols == 0 {
        return Err(Error::Numeric("rmsnorm of zero-length input".into()));
    }
    if gain.len() != x.cols {
        return Err(Error::Shape {
            op: "rmsnorm_rows",
            lhs: x.shape(),
            rhs: (1, gain.len()),
        });
    }
    let mut out = Matrix::zeros(x.rows, x.cols);
    let mut invs = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let r = x.row(i);
        let inv = inv_rms(r);
        invs.push(inv);
        for ((o, &v), &g) in out.row_mut(i).iter_mut().zip(r).zip(gain) {
            *o = v * g * inv;
        }
    }
    Ok((out, invs))
}

/// Backward of [`rmsnorm_rows`]: returns `(dx, dgain)`.
pub fn rmsnorm_rows_backward(x: &Matrix, gain: &[f64], inv_rms: &[f64], dy: &Matrix) -> (Matrix, Vec<f64>) {
    let m = x.cols as f64;
    let mut dx = Matrix::zeros(x.rows, x.cols);
    let mut dgain = vec![0.0; x.cols];
    for (i, &inv) in inv_rms[..x.rows].iter().enumerate() {
        let xr = x.row(i);
        let dyr = dy.row(i);
        let mut proj = 0.0;
        for k in 0..x.cols {
            proj += dyr[k] * gain[k] * xr[k];
            dgain[k] += dyr[k] * xr[k] * inv;
        }
        let coef = proj * inv * inv * inv / m;
        for (k, d) in dx.row_mut(i).iter_mut().enumerate() {
            *d = dyr[k] * gain[k] * inv - xr[k] * coef;
        }
    }
    (dx, dgain)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// d/dx of `x·σ(x)`.
#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Max-subtracted softmax.
pub fn softmax_row(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `ln Σ exp(xᵢ)`, overflow-safe.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Default central-difference step at 64-bit precision.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Compares analytic gradients of a scalar objective against central
/// differences. `point[k]` and `analytic[k]` must share a shape.
///
/// Returns `max |analytic − numeric| / max(1, |numeric|)` over every entry.
pub fn grad_check<F>(mut objective: F, point: &[Matrix], analytic: &[Matrix], names: &[&str], step: f64) -> Result<f64>
where
    F: FnMut(&[Matrix]) -> f64,
{
    if point.len() != analytic.len() || point.len() != names.len() {
        return Err(Error::Numeric(format!(
            "grad_check: {} inputs, {} gradients, {} names",
            point.len(),
            analytic.len(),
            names.len()
        )));
    }
    let mut work: Vec<Matrix> = point.to_vec();
    let mut worst: f64 = 0.0;
    for (k, grad) in analytic.iter().enumerate() {
        if grad.shape() != point[k].shape() {
            return Err(Error::Shape {
                op: "grad_check",
                lhs: point[k].shape(),
                rhs: grad.shape(),
            });
        }
        if !grad.is_finite() {
            return Err(Error::Numeric(format!("non-finite analytic gradient for `{}`", names[k])));
        }
        for idx in 0..grad.data.len() {
            let orig = work[k].data[idx];
            work[k].data[idx] = orig + step;
            let up = objective(&work);
            work[k].data[idx] = orig - step;
            let down = objective(&work);
            work[k].data[idx] = orig;
            let numeric = (up - down) / (2.0 * step);
            if !numeric.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite numeric gradient for `{}`[{idx}]",
                    names[k]
                )));
            }
            let err = (grad.data[idx] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
