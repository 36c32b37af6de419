//! Dense matrix and vector primitives shared by the detectors.
//!
//! Storage is row-major `f32`. Anything that accumulates (covariance sums,
//! factorizations, solves) runs in `f64` and only rounds back to `f32` at the
//! public boundary.

use rayon::prelude::*;

use crate::error::{OodError, Result};

/// Rows per partial sum in the covariance reduction. Fixed so the reduction
/// tree, and therefore the result, does not depend on the thread count.
const COVARIANCE_CHUNK_ROWS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        let expected = rows
            .checked_mul(cols)
            .ok_or_else(|| OodError::invalid("matrix shape overflows"))?;
        if data.len() != expected {
            return Err(OodError::dim("matrix data length", expected, data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(OodError::invalid(format!(
                "non-finite matrix entry at row {}, column {}",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

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
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows. An empty slice yields a 0×0 matrix.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(OodError::dim("matrix row length", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub(crate) fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::new(rows, cols, data.iter().map(|&v| v as f32).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Exact (bitwise) symmetry check.
    pub fn is_symmetric(&self) -> bool {
        self.is_square()
            && (0..self.rows)
                .all(|i| (0..i).all(|j| self.get(i, j).to_bits() == self.get(j, i).to_bits()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols))
            .map(|i| self.get(i, i) as f64)
            .sum()
    }

    pub(crate) fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Keeps the rows at `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f32>);

impl Vector {
    pub fn new(data: Vec<f32>) -> Result<Self> {
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(OodError::invalid(format!(
                "non-finite vector entry at index {pos}"
            )));
        }
        Ok(Self(data))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }
}

/// A value plus the indices of rows that hit a degenerate case while it was
/// computed (zero-norm rows, saturated exponentials, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Flagged<T> {
    pub value: T,
    pub flagged_rows: Vec<usize>,
}

impl<T> Flagged<T> {
    pub fn is_clean(&self) -> bool {
        self.flagged_rows.is_empty()
    }
}

/// Pooled class-centered population covariance, `f64`, row-major `d×d`.
pub(crate) fn pooled_covariance(
    features: &Matrix,
    centroids: &Matrix,
    class_of: &[usize],
) -> Result<Vec<f64>> {
    if features.is_empty() || features.cols() == 0 {
        return Err(OodError::invalid("covariance of an empty feature matrix"));
    }
    let d = features.cols();
    if centroids.cols() != d {
        return Err(OodError::dim("centroid dimension", d, centroids.cols()));
    }
    if class_of.len() != features.rows() {
        return Err(OodError::dim(
            "class index count",
            features.rows(),
            class_of.len(),
        ));
    }
    if let Some(&bad) = class_of.iter().find(|&&c| c >= centroids.rows()) {
        return Err(OodError::invalid(format!(
            "class index {bad} out of range for {} centroids",
            centroids.rows()
        )));
    }

    let row_ids: Vec<usize> = (0..features.rows()).collect();
    let mut partials: Vec<Vec<f64>> = row_ids
        .par_chunks(COVARIANCE_CHUNK_ROWS)
        .map(|chunk| {
            let mut acc = vec![0.0f64; d * d];
            let mut dev = vec![0.0f64; d];
            for &r in chunk {
                let x = features.row(r);
                let mu = centroids.row(class_of[r]);
                for k in 0..d {
                    dev[k] = x[k] as f64 - mu[k] as f64;
                }
                for i in 0..d {
                    let di = dev[i];
                    let row = &mut acc[i * d..(i + 1) * d];
                    for j in i..d {
                        row[j] += di * dev[j];
                    }
                }
            }
            acc
        })
        .collect();

    // pairwise tree reduction, fixed shape
    while partials.len() > 1 {
        let mut next = Vec::with_capacity(partials.len().div_ceil(2));
        let mut it = partials.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            next.push(a);
        }
        partials = next;
    }
    let mut cov = partials.pop().unwrap_or_else(|| vec![0.0; d * d]);

    let n = features.rows() as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / n;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok(cov)
}

/// Pooled class-centered covariance with the population divisor `N`.
///
/// `class_of[r]` is the row index into `class_centroids` for feature row `r`.
pub fn centered_covariance(
    features: &Matrix,
    class_centroids: &Matrix,
    class_of: &[usize],
) -> Result<Matrix> {
    let d = features.cols();
    let cov = pooled_covariance(features, class_centroids, class_of)?;
    Matrix::from_f64(d, d, &cov)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon < 0.0 || !epsilon.is_finite() {
        return Err(OodError::invalid(format!(
            "shrinkage epsilon must be a finite non-negative number, got {epsilon}"
        )));
    }
    Ok(())
}

/// Ridge added to the diagonal: `epsilon * trace / d`, or plain `epsilon`
/// when the trace is not positive.
pub(crate) fn ridge_amount(sigma: &[f64], d: usize, epsilon: f64) -> f64 {
    let trace: f64 = (0..d).map(|i| sigma[i * d + i]).sum();
    if trace > 0.0 {
        epsilon * trace / d as f64
    } else {
        epsilon
    }
}

pub(crate) fn shrink_in_place(sigma: &mut [f64], d: usize, epsilon: f64) -> Result<()> {
    check_epsilon(epsilon)?;
    let ridge = ridge_amount(sigma, d, epsilon);
    for i in 0..d {
        sigma[i * d + i] += ridge;
    }
    Ok(())
}

/// Trace-scaled ridge shrinkage: `sigma + epsilon * trace(sigma) / d * I`.
pub fn shrink(sigma: &Matrix, epsilon: f64) -> Result<Matrix> {
    if !sigma.is_square() {
        return Err(OodError::dim("square matrix", sigma.rows(), sigma.cols()));
    }
    let d = sigma.rows();
    let mut m = sigma.to_f64();
    shrink_in_place(&mut m, d, epsilon)?;
    Matrix::from_f64(d, d, &m)
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`, kept in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    /// Factorizes a symmetric matrix given as row-major `f64`. Only the lower
    /// triangle is read.
    pub fn factor_f64(a: &[f64], dim: usize) -> Result<Self> {
        if a.len() != dim * dim {
            return Err(OodError::dim("square matrix data", dim * dim, a.len()));
        }
        if dim == 0 {
            return Err(OodError::invalid("cannot factorize a 0×0 matrix"));
        }
        let max_diag = (0..dim).map(|i| a[i * dim + i].abs()).fold(0.0, f64::max);
        // pivots at or below this are treated as numerically zero
        let tol = f64::EPSILON * dim as f64 * max_diag;

        let mut l = vec![0.0f64; dim * dim];
        for j in 0..dim {
            let mut pivot = a[j * dim + j];
            for k in 0..j {
                pivot -= l[j * dim + k] * l[j * dim + k];
            }
            if !pivot.is_finite() || pivot <= tol {
                return Err(OodError::SingularMatrix(format!(
                    "pivot {j} is {pivot:.3e}"
                )));
            }
            let ljj = pivot.sqrt();
            l[j * dim + j] = ljj;
            for i in (j + 1)..dim {
                let mut s = a[i * dim + j];
                for k in 0..j {
                    s -= l[i * dim + k] * l[j * dim + k];
                }
                l[i * dim + j] = s / ljj;
            }
        }
        Ok(Self { dim, lower: l })
    }

    pub fn factor(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(OodError::dim("square matrix", m.rows(), m.cols()));
        }
        Self::factor_f64(&m.to_f64(), m.rows())
    }

    /// Rebuilds a factor from a stored lower triangle (upper triangle ignored).
    pub fn from_lower(dim: usize, lower: Vec<f64>) -> Result<Self> {
        if lower.len() != dim * dim {
            return Err(OodError::dim("factor data", dim * dim, lower.len()));
        }
        let mut lower = lower;
        for i in 0..dim {
            for j in (i + 1)..dim {
                lower[i * dim + j] = 0.0;
            }
            let p = lower[i * dim + i];
            if p <= 0.0 || !p.is_finite() {
                return Err(OodError::SingularMatrix(format!(
                    "stored factor has non-positive diagonal entry {i}"
                )));
            }
        }
        Ok(Self { dim, lower })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major lower triangle (zeros above the diagonal).
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    /// Smallest pivot `L_ii²`, a lower bound witness for the spectrum.
    pub fn min_pivot(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.lower[i * self.dim + i].powi(2))
            .fold(f64::INFINITY, f64::min)
    }

    /// Solves `L y = b` in place.
    pub fn forward_substitute(&self, b: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(l, y)| l * y).sum();
            b[i] = (b[i] - s) / self.lower[i * d + i];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn backward_substitute(&self, y: &mut [f64]) {
        let d = self.dim;
        for i in (0..d).rev() {
            let mut s = y[i];
            for (k, yk) in y.iter().enumerate().skip(i + 1) {
                s -= self.lower[k * d + i] * yk;
            }
            y[i] = s / self.lower[i * d + i];
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.forward_substitute(&mut x);
        self.backward_substitute(&mut x);
        x
    }

    /// `vᵀ A⁻¹ v`, computed as `‖L⁻¹ v‖²`.
    pub fn inverse_quadratic_form(&self, v: &mut [f64]) -> f64 {
        self.forward_substitute(v);
        v.iter().map(|x| x * x).sum()
    }
}

/// Solves `sigma · v = rhs` for symmetric positive-definite `sigma` via Cholesky.
pub fn spd_solve(sigma: &Matrix, rhs: &Vector) -> Result<Vector> {
    if !sigma.is_square() {
        return Err(OodError::dim("square matrix", sigma.rows(), sigma.cols()));
    }
    if rhs.len() != sigma.rows() {
        return Err(OodError::dim("right-hand side", sigma.rows(), rhs.len()));
    }
    let chol = Cholesky::factor(sigma)?;
    let b: Vec<f64> = rhs.as_slice().iter().map(|&v| v as f64).collect();
    let x = chol.solve(&b);
    Vector::new(x.into_iter().map(|v| v as f32).collect())
}

/// Scales every nonzero row to unit Euclidean norm. Zero rows are left as-is
/// and reported in `flagged_rows`.
pub fn l2_normalize_rows(features: &Matrix) -> Flagged<Matrix> {
    let mut out = features.clone();
    let mut zero_rows = Vec::new();
    let cols = out.cols;
    for (i, row) in out.data.chunks_mut(cols.max(1)).enumerate().take(out.rows) {
        let norm = row
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            zero_rows.push(i);
            continue;
        }
        for v in row.iter_mut() {
            *v = (*v as f64 / norm) as f32;
        }
    }
    if !zero_rows.is_empty() {
        log::warn!("{} zero-norm rows left unnormalized", zero_rows.len());
    }
    Flagged {
        value: out,
        flagged_rows: zero_rows,
    }
}
