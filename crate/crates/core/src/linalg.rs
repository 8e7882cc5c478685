//! Dense row-major matrices, the norms used throughout the bounds, and the
//! Gaussian primitives (sampling, KL between spherical Gaussians).

use std::ops::{Index, IndexMut};

use crate::error::{invalid, Result};
use crate::rng::Rng;
use crate::scalar::Real;

pub const DEFAULT_SPECTRAL_TOL: f64 = 1e-10;
pub const DEFAULT_SPECTRAL_MAX_ITERS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return invalid(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return invalid("ragged rows");
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
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

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, alpha: T) -> Self {
        self.map(|x| x * alpha)
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

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape() != other.shape() {
            return invalid(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            ));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `(1 - t) * self + t * other`.
    pub fn lerp(&self, other: &Self, t: T) -> Result<Self> {
        self.zip_with(other, |a, b| (T::one() - t) * a + t * b)
    }

    /// `self += alpha * other`, shapes must agree.
    pub fn axpy_in_place(&mut self, alpha: T, other: &Self) {
        assert_eq!(self.shape(), other.shape());
        axpy(alpha, &other.data, &mut self.data);
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return invalid(format!(
                "matvec: matrix has {} columns, vector has {} entries",
                self.cols,
                x.len()
            ));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `selfᵀ x`.
    pub fn matvec_t(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.rows {
            return invalid(format!(
                "matvec_t: matrix has {} rows, vector has {} entries",
                self.rows,
                x.len()
            ));
        }
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != T::zero() {
                axpy(xi, self.row(i), &mut out);
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return invalid(format!(
                "matmul: {:?} times {:?}",
                self.shape(),
                other.shape()
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != T::zero() {
                    axpy(a, other.row(k), out_row);
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`; both operands are scanned along contiguous rows.
    pub fn matmul_transb(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return invalid(format!(
                "matmul_transb: {:?} times transpose of {:?}",
                self.shape(),
                other.shape()
            ));
        }
        let mut out = Self::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn matmul_transa(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return invalid(format!(
                "matmul_transa: transpose of {:?} times {:?}",
                self.shape(),
                other.shape()
            ));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let b = other.row(r);
            for (i, &a) in self.row(r).iter().enumerate() {
                if a != T::zero() {
                    axpy(a, b, &mut out.data[i * other.cols..(i + 1) * other.cols]);
                }
            }
        }
        Ok(out)
    }

    /// Zero every column `j` with `mask[j] == false`.
    pub fn mask_columns(&self, mask: &[bool]) -> Self {
        assert_eq!(mask.len(), self.cols);
        let mut out = self.clone();
        for i in 0..self.rows {
            for (x, &keep) in out.row_mut(i).iter_mut().zip(mask) {
                if !keep {
                    *x = T::zero();
                }
            }
        }
        out
    }

    pub fn convert<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::of(x.to_f64_lossy())).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of bounds");
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        assert!(i < self.rows && j < self.cols, "index ({i},{j}) out of bounds");
        &mut self.data[i * self.cols + j]
    }
}

/// Dot product, summed left to right. Matrix products built from [`axpy`]
/// accumulate in the same order, so the two paths agree bit for bit.
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

/// `y += alpha * x`.
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

pub fn l2_norm<T: Real>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

fn ensure_usable<T: Real>(m: &Matrix<T>, op: &str) -> Result<()> {
    if m.is_empty() {
        return invalid(format!("{op}: empty matrix"));
    }
    if !m.is_finite() {
        return invalid(format!("{op}: non-finite entry"));
    }
    Ok(())
}

pub fn frobenius_norm<T: Real>(m: &Matrix<T>) -> Result<T> {
    ensure_usable(m, "frobenius_norm")?;
    Ok(l2_norm(m.as_slice()))
}

/// Which ℓ2 norms `‖·‖_{2,1}` sums. The column reading is the default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm21Convention {
    #[default]
    ColumnSums,
    RowSums,
}

pub fn norm_2_1<T: Real>(m: &Matrix<T>) -> Result<T> {
    norm_2_1_with(m, Norm21Convention::ColumnSums)
}

pub fn norm_2_1_with<T: Real>(m: &Matrix<T>, convention: Norm21Convention) -> Result<T> {
    ensure_usable(m, "norm_2_1")?;
    Ok(match convention {
        Norm21Convention::ColumnSums => (0..m.cols()).map(|j| l2_norm(&m.column(j))).sum(),
        Norm21Convention::RowSums => (0..m.rows()).map(|i| l2_norm(m.row(i))).sum(),
    })
}

/// `‖M‖_{2,∞}`: the largest row ℓ2 norm.
pub fn max_row_l2<T: Real>(m: &Matrix<T>) -> Result<T> {
    ensure_usable(m, "max_row_l2")?;
    Ok((0..m.rows())
        .map(|i| l2_norm(m.row(i)))
        .fold(T::zero(), T::max))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralEstimate<T> {
    pub value: T,
    pub converged: bool,
    pub iterations: usize,
}

pub fn spectral_norm_default<T: Real>(m: &Matrix<T>) -> Result<T> {
    spectral_norm(m, T::of(DEFAULT_SPECTRAL_TOL), DEFAULT_SPECTRAL_MAX_ITERS).map(|e| e.value)
}

/// Largest singular value by power iteration on `MᵀM`, started from the
/// normalized all-ones vector.
///
/// Stops once the predicted remaining error of the eigenvalue estimate,
/// extrapolated from the observed contraction ratio, falls under `tol`
/// relative. On `max_iters` the best estimate comes back with
/// `converged == false`.
pub fn spectral_norm<T: Real>(m: &Matrix<T>, tol: T, max_iters: usize) -> Result<SpectralEstimate<T>> {
    ensure_usable(m, "spectral_norm")?;
    if !(tol > T::zero()) {
        return invalid("spectral_norm: tol must be positive");
    }
    let tol = tol.max(T::of(8.0) * T::epsilon());
    let n = m.cols();
    let mut v = vec![T::one() / T::of_usize(n).sqrt(); n];
    if l2_norm(&m.matvec(&v)?) == T::zero() {
        // All-ones start is orthogonal to the row space; start from the
        // heaviest column instead.
        if frobenius_norm(m)? == T::zero() {
            return Ok(SpectralEstimate { value: T::zero(), converged: true, iterations: 0 });
        }
        let heaviest = (0..n)
            .max_by(|&a, &b| {
                l2_norm(&m.column(a))
                    .partial_cmp(&l2_norm(&m.column(b)))
                    .unwrap()
            })
            .unwrap();
        v = vec![T::zero(); n];
        v[heaviest] = T::one();
    }

    let mut lambda = T::zero();
    let mut prev_delta: Option<T> = None;
    for iter in 1..=max_iters {
        let mv = m.matvec(&v)?;
        let w = m.matvec_t(&mv)?;
        // Rayleigh quotient of MᵀM at the unit vector v.
        let next = dot(&mv, &mv);
        let w_norm = l2_norm(&w);
        if w_norm == T::zero() {
            return Ok(SpectralEstimate { value: next.sqrt(), converged: true, iterations: iter });
        }
        v = w.into_iter().map(|x| x / w_norm).collect();
        let delta = (next - lambda).abs();
        lambda = next;
        if iter > 1 {
            let ratio = prev_delta
                .filter(|&p| p > T::zero())
                .map(|p| (delta / p).min(T::of(0.999_999)))
                .unwrap_or(T::zero());
            let remaining = delta * (T::one() + ratio / (T::one() - ratio));
            if remaining <= tol * lambda {
                let value = w_norm.sqrt();
                return Ok(SpectralEstimate { value: value.max(lambda.sqrt()), converged: true, iterations: iter });
            }
        }
        prev_delta = Some(delta);
    }
    Ok(SpectralEstimate { value: lambda.sqrt(), converged: false, iterations: max_iters })
}

/// Matrix with i.i.d. `N(0, sigma²)` entries.
pub fn sample_gaussian_matrix<T: Real>(rows: usize, cols: usize, sigma: f64, rng: &mut Rng) -> Result<Matrix<T>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return invalid(format!("sample_gaussian_matrix: sigma must be >= 0, got {sigma}"));
    }
    let data = (0..rows * cols).map(|_| T::of(sigma * rng.normal())).collect();
    Matrix::from_vec(rows, cols, data)
}

/// `KL(N(mu2, σ²I) ‖ N(mu1, σ²I)) = ‖mu2 − mu1‖² / (2σ²)`, symmetric in the means.
pub fn kl_spherical_gaussians<T: Real>(mu1: &[T], mu2: &[T], sigma: T) -> Result<T> {
    if !(sigma > T::zero()) {
        return invalid("kl_spherical_gaussians: sigma must be positive");
    }
    if mu1.len() != mu2.len() {
        return invalid(format!(
            "kl_spherical_gaussians: dimension mismatch {} vs {}",
            mu1.len(),
            mu2.len()
        ));
    }
    let sq: T = mu1.iter().zip(mu2).map(|(&a, &b)| (b - a) * (b - a)).sum();
    Ok(sq / (T::of(2.0) * sigma * sigma))
}
