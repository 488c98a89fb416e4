//! Gaussian moment fitting and the Fréchet distance between Gaussians.
//!
//! Everything here runs in `f64` regardless of the input precision.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensorio::TensorSet;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

/// Mean and unbiased covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Two-pass moment fit: column means first, then centered cross products.
///
/// Each covariance entry is a single left-to-right sum over rows, so the
/// result does not depend on how the entries are spread across threads.
pub fn fit_gaussian(features: &TensorSet) -> Result<GaussianStats> {
    let n = features.rows();
    let d = features.cols();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "covariance needs at least 2 rows, got {n}"
        )));
    }

    let mut sums = vec![0.0f64; d];
    for i in 0..n {
        for (s, &v) in sums.iter_mut().zip(features.row(i)) {
            *s += f64::from(v);
        }
    }
    let mean: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();

    // centered, feature-major so each feature column is contiguous
    let mut centered = vec![0.0f64; d * n];
    for i in 0..n {
        for (j, &v) in features.row(i).iter().enumerate() {
            centered[j * n + i] = f64::from(v) - mean[j];
        }
    }

    let denom = (n - 1) as f64;
    let upper: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|a| {
            let col_a = &centered[a * n..(a + 1) * n];
            (a..d)
                .map(|b| {
                    let col_b = &centered[b * n..(b + 1) * n];
                    let mut acc = 0.0f64;
                    for (x, y) in col_a.iter().zip(col_b) {
                        acc += x * y;
                    }
                    acc / denom
                })
                .collect()
        })
        .collect();

    let mut cov = DMatrix::<f64>::zeros(d, d);
    for (a, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            cov[(a, a + off)] = v;
            cov[(a + off, a)] = v;
        }
    }
    Ok(GaussianStats { mean: DVector::from_vec(mean), cov, n })
}

fn symmetry_error(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Symmetric eigendecomposition with one jittered retry.
fn eigen(a: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if let Some(e) = SymmetricEigen::try_new(a.clone(), EIGEN_EPS, EIGEN_MAX_ITER) {
        return Ok(e);
    }
    let d = a.nrows();
    let jitter = 1e-10 * a.trace().abs().max(f64::MIN_POSITIVE) / d as f64;
    let jittered = a + DMatrix::<f64>::identity(d, d) * jitter;
    SymmetricEigen::try_new(jittered, EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::Numerical("symmetric eigendecomposition did not converge".into()))
}

/// Eigenvalues clamped at zero, warning when the clamp hides more than
/// roundoff.
fn clamp_eigenvalues(values: &DVector<f64>) -> DVector<f64> {
    let max = values.iter().copied().fold(0.0f64, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-6 * max {
        warn!("matrix is not positive semi-definite: eigenvalue {min:e} against max {max:e}");
    }
    values.map(|v| v.max(0.0))
}

fn check_square(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: a.ncols() });
    }
    let scale = a.amax().max(1.0);
    if symmetry_error(a) > 1e-10 * scale {
        return Err(Error::InvalidArgument("matrix is not symmetric".into()));
    }
    Ok(())
}

/// Principal square root of a symmetric positive semi-definite matrix.
pub fn sqrtm_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(a)?;
    let e = eigen(&symmetrize(a))?;
    let roots = clamp_eigenvalues(&e.eigenvalues).map(f64::sqrt);
    let v = &e.eigenvectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * roots[j]);
    Ok(symmetrize(&(scaled * v.transpose())))
}

/// `‖μ1 − μ2‖² + tr(Σ1 + Σ2 − 2 (Σ1^{1/2} Σ2 Σ1^{1/2})^{1/2})`, clamped at 0.
pub fn frechet_distance(g1: &GaussianStats, g2: &GaussianStats) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::DimensionMismatch { expected: g1.dim(), got: g2.dim() });
    }
    let mean_term = (&g1.mean - &g2.mean).norm_squared();
    let root1 = sqrtm_spd(&g1.cov)?;
    let inner = symmetrize(&(&root1 * &g2.cov * &root1));
    let e = eigen(&inner)?;
    let tr_covmean: f64 = clamp_eigenvalues(&e.eigenvalues).iter().map(|v| v.sqrt()).sum();
    let value = mean_term + g1.cov.trace() + g2.cov.trace() - 2.0 * tr_covmean;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("Fréchet distance is {value}")));
    }
    Ok(value.max(0.0))
}

/// Fréchet distance between Gaussian fits of two feature sets.
pub fn fid(features_a: &TensorSet, features_b: &TensorSet) -> Result<f64> {
    if features_a.cols() != features_b.cols() {
        return Err(Error::DimensionMismatch { expected: features_a.cols(), got: features_b.cols() });
    }
    frechet_distance(&fit_gaussian(features_a)?, &fit_gaussian(features_b)?)
}
