//! Dense `f64` matrices and a one-sided Jacobi SVD.
//!
//! Everything the orthogonal low-rank embedding needs lives here: the thin
//! SVD, the nuclear norm and its thresholded subgradient `U₁V₁ᵀ`.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Maximum number of Jacobi sweeps before the SVD reports failure.
pub const MAX_SWEEPS: usize = 80;

/// Singular values below this fraction of the largest are set to exactly zero.
pub const RELATIVE_ZERO: f64 = 1e-12;

/// Dense row-major real matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
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

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Matrix::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix whose columns are the given equal-length vectors.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Shape("columns have differing lengths".into()));
        }
        Ok(Matrix::from_fn(rows, columns.len(), |i, j| columns[j][i]))
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    /// Columns at `indices`, in the given order.
    pub fn select_columns(&self, indices: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, indices.len(), |i, j| self[(i, indices[j])])
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "hstack of {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let left = self.cols;
        Ok(Matrix::from_fn(
            self.rows,
            self.cols + other.cols,
            |i, j| {
                if j < left {
                    self[(i, j)]
                } else {
                    other[(i, j - left)]
                }
            },
        ))
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul of {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Matrix {
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

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            writeln!(f, "  {row:?}")?;
        }
        write!(f, "]")
    }
}

/// Thin singular value decomposition `A = U · diag(s) · Vᵀ`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `rows × r` with orthonormal columns.
    pub u: Matrix,
    /// Nonincreasing, nonnegative, length `r = min(rows, cols)`.
    pub singular_values: Vec<f64>,
    /// `cols × r` with orthonormal columns.
    pub v: Matrix,
}

impl Svd {
    pub fn rank(&self) -> usize {
        self.singular_values.iter().filter(|&&s| s > 0.0).count()
    }

    pub fn reconstruct(&self) -> Matrix {
        let r = self.singular_values.len();
        let us = Matrix::from_fn(self.u.rows(), r, |i, j| {
            self.u[(i, j)] * self.singular_values[j]
        });
        us.matmul(&self.v.transpose())
            .expect("svd factor shapes agree")
    }
}

/// Thin SVD by one-sided (Hestenes) Jacobi rotations.
///
/// The result is a deterministic function of the input: singular values below
/// `RELATIVE_ZERO · s_max` are clamped to zero, the left vectors for zero
/// singular values are completed from the standard basis, and each `U` column
/// is signed so its largest-magnitude entry is nonnegative.
pub fn svd(a: &Matrix) -> Result<Svd> {
    if a.is_empty() {
        return Err(Error::Shape("SVD of an empty matrix".into()));
    }
    if !a.is_finite() {
        return Err(Error::Shape("SVD input has non-finite entries".into()));
    }
    if a.rows < a.cols {
        let t = svd_tall(&a.transpose())?;
        // Aᵀ = U s Vᵀ  ⇒  A = V s Uᵀ; re-sign on the new U.
        let mut out = Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        };
        fix_signs(&mut out);
        return Ok(out);
    }
    svd_tall(a)
}

fn svd_tall(a: &Matrix) -> Result<Svd> {
    let (m, n) = a.shape();
    debug_assert!(m >= n);

    // Column-major working copies.
    let mut w: Vec<f64> = (0..n).flat_map(|j| a.column(j)).collect();
    let mut v: Vec<f64> = vec![0.0; n * n];
    for j in 0..n {
        v[j * n + j] = 1.0;
    }

    let tol = m as f64 * f64::EPSILON;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (wp, wq) = column_pair(&mut w, m, p, q);
                let alpha: f64 = wp.iter().map(|x| x * x).sum();
                let beta: f64 = wq.iter().map(|x| x * x).sum();
                let gamma: f64 = wp.iter().zip(wq.iter()).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(wp, wq, c, s);
                let (vp, vq) = column_pair(&mut v, n, p, q);
                rotate(vp, vq, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Decomposition {
            rows: m,
            cols: n,
            sweeps: MAX_SWEEPS,
        });
    }

    let norms: Vec<f64> = (0..n)
        .map(|j| {
            w[j * m..(j + 1) * m]
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let s_max = norms[order[0]];
    let mut singular_values = Vec::with_capacity(n);
    let mut u = Matrix::zeros(m, n);
    let mut vm = Matrix::zeros(n, n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        let s = if s <= RELATIVE_ZERO * s_max { 0.0 } else { s };
        singular_values.push(s);
        if s > 0.0 {
            let col: Vec<f64> = w[j * m..(j + 1) * m].iter().map(|x| x / s).collect();
            u.set_column(k, &col);
        } else {
            missing.push(k);
        }
        vm.set_column(k, &v[j * n..(j + 1) * n]);
    }
    complete_orthonormal(&mut u, &missing);

    let mut out = Svd {
        u,
        singular_values,
        v: vm,
    };
    fix_signs(&mut out);
    Ok(out)
}

fn column_pair(buf: &mut [f64], len: usize, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let (head, tail) = buf.split_at_mut(q * len);
    (&mut head[p * len..(p + 1) * len], &mut tail[..len])
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Fills the columns listed in `missing` with unit vectors orthogonal to all
/// other columns, drawn deterministically from the standard basis.
fn complete_orthonormal(u: &mut Matrix, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let m = u.rows();
    let mut basis: Vec<Vec<f64>> = (0..u.cols())
        .filter(|k| !missing.contains(k))
        .map(|k| u.column(k))
        .collect();
    let mut candidate = 0;
    for &k in missing {
        loop {
            assert!(candidate < m, "ran out of basis vectors during completion");
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            // Two passes of Gram-Schmidt for numerical orthogonality.
            for _ in 0..2 {
                for b in &basis {
                    let d: f64 = e.iter().zip(b).map(|(x, y)| x * y).sum();
                    for (x, y) in e.iter_mut().zip(b) {
                        *x -= d * y;
                    }
                }
            }
            let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.5 {
                e.iter_mut().for_each(|x| *x /= norm);
                u.set_column(k, &e);
                basis.push(e);
                break;
            }
        }
    }
}

fn fix_signs(svd: &mut Svd) {
    for k in 0..svd.singular_values.len() {
        let col = svd.u.column(k);
        let mut best = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            for i in 0..svd.u.rows() {
                svd.u[(i, k)] = -svd.u[(i, k)];
            }
            for i in 0..svd.v.rows() {
                svd.v[(i, k)] = -svd.v[(i, k)];
            }
        }
    }
}

/// Sum of singular values.
pub fn nuclear_norm(a: &Matrix) -> Result<f64> {
    Ok(svd(a)?.singular_values.iter().sum())
}

/// Largest singular value.
pub fn spectral_norm(a: &Matrix) -> Result<f64> {
    Ok(svd(a)?.singular_values[0])
}

/// Projected subgradient `U₁V₁ᵀ` of the nuclear norm, keeping only the
/// singular directions whose singular value exceeds `threshold`.
pub fn nuclear_norm_subgradient(a: &Matrix, threshold: f64) -> Result<Matrix> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::Config(format!(
            "singular value threshold must be >= 0, got {threshold}"
        )));
    }
    let svd = svd(a)?;
    Ok(subgradient_from_svd(&svd, threshold))
}

pub(crate) fn subgradient_from_svd(svd: &Svd, threshold: f64) -> Matrix {
    let (rows, cols) = (svd.u.rows(), svd.v.rows());
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > threshold)
        .map(|(k, _)| k)
        .collect();
    let mut out = Matrix::zeros(rows, cols);
    for &k in &keep {
        for i in 0..rows {
            let uik = svd.u[(i, k)];
            if uik == 0.0 {
                continue;
            }
            for j in 0..cols {
                out[(i, j)] += uik * svd.v[(j, k)];
            }
        }
    }
    out
}
