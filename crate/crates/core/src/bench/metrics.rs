//! Subspace distance and distance correlation.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Orthogonal projector `A (AᵀA)⁻¹ Aᵀ` onto the column span of `a`.
pub fn projector(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::EmptyData("projector"));
    }
    if a.ncols() > a.nrows() || !a.iter().all(|v| v.is_finite()) {
        return Err(Error::RankDeficient("projector"));
    }
    // Thin QR; a column is dependent when its R diagonal is negligible
    // against the largest column norm.
    let qr = a.clone().qr();
    let r = qr.r();
    let scale = a.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 || r.diagonal().iter().any(|d| d.abs() <= 1e-12 * scale) {
        return Err(Error::RankDeficient("projector"));
    }
    let q = qr.q();
    Ok(&q * q.transpose())
}

/// `‖P₁ − P₂‖_F` for the projectors onto the spans of `v1` and `v2`.
pub fn projection_distance(v1: &DMatrix<f64>, v2: &DMatrix<f64>) -> Result<f64> {
    if v1.nrows() != v2.nrows() {
        return Err(Error::DimensionMismatch { context: "projection_distance", expected: v1.nrows(), found: v2.nrows() });
    }
    Ok((projector(v1)? - projector(v2)?).norm())
}

/// Double-centered pairwise Euclidean distance matrix of the rows of `z`.
fn centered_distances(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (z.row(i) - z.row(j)).norm();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    let row_means: Vec<f64> = (0..n).map(|i| d.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            d[(i, j)] += grand - row_means[i] - row_means[j];
        }
    }
    d
}

/// Sample distance correlation between `y` and the rows of `z`, using the
/// biased V-statistic (double-centered distance matrices).
pub fn distance_correlation(y: &[f64], z: &DMatrix<f64>) -> Result<f64> {
    let n = y.len();
    if n < 2 {
        return Err(Error::EmptyData("distance_correlation"));
    }
    if z.nrows() != n {
        return Err(Error::DimensionMismatch { context: "distance_correlation", expected: n, found: z.nrows() });
    }
    if !y.iter().all(|v| v.is_finite()) || !z.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("distance_correlation input"));
    }
    let a = centered_distances(&DMatrix::from_column_slice(n, 1, y));
    let b = centered_distances(z);
    let dcov_xy = a.dot(&b);
    let dvar_x = a.dot(&a);
    let dvar_y = b.dot(&b);
    if dvar_x <= 0.0 {
        return Err(Error::ZeroDistanceVariance("y"));
    }
    if dvar_y <= 0.0 {
        return Err(Error::ZeroDistanceVariance("z"));
    }
    Ok((dcov_xy / (dvar_x * dvar_y).sqrt()).max(0.0).sqrt())
}
