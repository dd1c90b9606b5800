use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::ArrayView2;

use crate::error::{PldgError, Result};

/// Ridge added to both covariance estimates.
pub const COV_RIDGE: f64 = 1e-6;

fn moments(x: ArrayView2<f64>, what: &str) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(PldgError::Argument(format!(
            "{what} needs at least 2 rows for a covariance, got {n}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(PldgError::Data(format!("{what} contains non-finite features")));
    }
    let mean = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
    let mut cov = DMatrix::zeros(d, d);
    for row in x.rows() {
        let c = DVector::from_fn(d, |j, _| row[j] - mean[j]);
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    for j in 0..d {
        cov[(j, j)] += COV_RIDGE;
    }
    Ok((mean, cov))
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Gaussian Frechet distance between two feature sets:
/// `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2 (Σ_a Σ_b)^{1/2})`.
///
/// The trace of the cross term is taken as `Tr((Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2})`,
/// which has the same eigenvalues but stays symmetric.
pub fn frechet_distance(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(PldgError::Argument(format!(
            "feature widths differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (mu_a, cov_a) = moments(a, "first feature set")?;
    let (mu_b, cov_b) = moments(b, "second feature set")?;
    Ok(gaussian_frechet(&mu_a, &cov_a, &mu_b, &cov_b))
}

/// Frechet distance between two Gaussians given their moments.
pub fn gaussian_frechet(
    mu_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mu_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> f64 {
    let root_a = sqrt_psd(cov_a);
    let inner = &root_a * cov_b * &root_a;
    let sym = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    let diff = mu_a - mu_b;
    let value = diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    value.max(0.0)
}
