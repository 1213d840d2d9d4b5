//! Dense numeric kernel shared by every estimator.
//!
//! Matrices are `nalgebra` column-major storage. Data matrices are `n × p`
//! with one observation per row. Sums run in a fixed order so that repeated
//! calls on identical input are bit-identical.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Square matrix whose storage is exactly symmetric.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
#[serde(transparent)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps a square matrix, averaging it with its transpose so that
    /// `a[(i, j)] == a[(j, i)]` holds bit-for-bit.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                context: "SymMatrix::from_matrix",
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::EmptyData("SymMatrix::from_matrix"));
        }
        let mut m = m;
        let dim = m.nrows();
        for j in 0..dim {
            for i in (j + 1)..dim {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        Ok(SymMatrix(m))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self += scale · v vᵀ`, filled symmetrically.
    pub fn add_outer(&mut self, v: &DVector<f64>, scale: f64) {
        let dim = self.dim();
        for j in 0..dim {
            let vj = scale * v[j];
            for i in j..dim {
                let add = v[i] * vj;
                self.0[(i, j)] += add;
                if i != j {
                    self.0[(j, i)] += add;
                }
            }
        }
    }

    /// Entrywise `self += other`.
    pub fn add_assign(&mut self, other: &SymMatrix) {
        self.0 += &other.0;
    }

    pub fn scale(&mut self, s: f64) {
        self.0 *= s;
    }

    /// Leading `k × k` block.
    pub fn leading_block(&self, k: usize) -> SymMatrix {
        SymMatrix(self.0.view((0, 0), (k, k)).into_owned())
    }
}

/// Full symmetric eigendecomposition with deterministic conventions:
/// eigenvalues in non-increasing order (ties keep the solver's index order)
/// and each eigenvector's largest-magnitude entry positive (ties broken by
/// lowest index).
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenDecomposition {
    /// First `d` eigenvectors as a `p × d` matrix.
    pub fn top(&self, d: usize) -> DMatrix<f64> {
        self.vectors.columns(0, d).into_owned()
    }
}

/// Arithmetic mean of each column of an `n × p` matrix.
pub fn sample_mean(data: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = data.nrows();
    if n == 0 || data.ncols() == 0 {
        return Err(Error::EmptyData("sample_mean"));
    }
    let inv = 1.0 / n as f64;
    Ok(DVector::from_iterator(
        data.ncols(),
        data.column_iter().map(|col| col.iter().sum::<f64>() * inv),
    ))
}

/// Covariance with divisor `n`: `n⁻¹ Σᵢ (xᵢ − μ)(xᵢ − μ)ᵀ`.
pub fn sample_covariance(data: &DMatrix<f64>, mean: &DVector<f64>) -> Result<SymMatrix> {
    let n = data.nrows();
    if n == 0 {
        return Err(Error::EmptyData("sample_covariance"));
    }
    if mean.len() != data.ncols() {
        return Err(Error::DimensionMismatch {
            context: "sample_covariance",
            expected: data.ncols(),
            found: mean.len(),
        });
    }
    let p = data.ncols();
    let mut centered = data.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let mut cov = DMatrix::zeros(p, p);
    for j in 0..p {
        let cj = centered.column(j);
        for i in j..p {
            let s = centered.column(i).dot(&cj) / n as f64;
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    Ok(SymMatrix(cov))
}

/// Scale-aware default ridge, `1e-8 · trace(A) / dim`.
pub fn default_ridge(a: &SymMatrix) -> f64 {
    1e-8 * a.trace().abs() / a.dim() as f64
}

/// Symmetric eigendecomposition following the conventions of
/// [`EigenDecomposition`].
pub fn sym_eigen(a: &SymMatrix) -> Result<EigenDecomposition> {
    if !a.is_finite() {
        return Err(Error::NonFinite("sym_eigen"));
    }
    let dim = a.dim();
    let eig = SymmetricEigen::try_new(a.as_matrix().clone(), f64::EPSILON, 0)
        .ok_or(Error::NonFinite("sym_eigen"))?;

    let mut order: Vec<usize> = (0..dim).collect();
    // Stable sort keeps the solver's order among exact ties.
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut values = DVector::zeros(dim);
    let mut vectors = DMatrix::zeros(dim, dim);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let mut col = eig.eigenvectors.column(src).into_owned();
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
        let mut lead = 0;
        for i in 1..dim {
            if col[i].abs() > col[lead].abs() {
                lead = i;
            }
        }
        if col[lead] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    Ok(EigenDecomposition { values, vectors })
}

/// Returns `(W, W_inv)` with `W = (Σ + ridge·I)^{-1/2}` and
/// `W_inv = (Σ + ridge·I)^{1/2}`.
pub fn whitening_transform(sigma: &SymMatrix, ridge: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(ridge >= 0.0) {
        return Err(Error::InvalidConfig(format!("ridge must be >= 0, got {ridge}")));
    }
    let dim = sigma.dim();
    let shifted = SymMatrix(sigma.as_matrix() + DMatrix::identity(dim, dim) * ridge);
    let eig = sym_eigen(&shifted)?;
    let max = eig.values[0].max(0.0);
    let min = eig.values[dim - 1];
    if min <= f64::EPSILON * max * dim as f64 || min <= 0.0 {
        return Err(Error::SingularCovariance { min_eigenvalue: min });
    }
    let v = &eig.vectors;
    let inv_sqrt = DMatrix::from_diagonal(&eig.values.map(|l| 1.0 / l.sqrt()));
    let sqrt = DMatrix::from_diagonal(&eig.values.map(f64::sqrt));
    let w = SymMatrix::from_matrix(v * inv_sqrt * v.transpose())?.into_inner();
    let w_inv = SymMatrix::from_matrix(v * sqrt * v.transpose())?.into_inner();
    Ok((w, w_inv))
}

/// Solves `(A + ridge·I) x = b` by LU with partial pivoting.
pub fn solve_linear_system(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    let q = a.nrows();
    if a.ncols() != q {
        return Err(Error::DimensionMismatch {
            context: "solve_linear_system",
            expected: q,
            found: a.ncols(),
        });
    }
    if b.len() != q {
        return Err(Error::DimensionMismatch {
            context: "solve_linear_system",
            expected: q,
            found: b.len(),
        });
    }
    if q == 0 {
        return Err(Error::EmptyData("solve_linear_system"));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("solve_linear_system"));
    }
    let shifted = a + DMatrix::identity(q, q) * ridge;
    let lu = shifted.clone().lu();
    let u = lu.u();
    let diag_max = u.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diag_min = u.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if diag_max == 0.0 || diag_min <= 1e-14 * diag_max {
        return Err(Error::SingularSystem { ridge });
    }
    let x = lu.solve(b).ok_or(Error::SingularSystem { ridge })?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem { ridge });
    }
    let residual = (&shifted * &x - b).norm();
    if residual > 1e-8 * (shifted.norm() * x.norm() + b.norm()) {
        return Err(Error::SingularSystem { ridge });
    }
    Ok(x)
}
