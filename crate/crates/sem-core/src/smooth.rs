//! Least-squares B-spline fits of pointwise key estimates and cross-cohort
//! centering.

use crate::bspline::{BasisError, BsplineBasis};
use crate::inversion::KeyPointEstimates;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SmoothError {
    #[error("underdetermined fit: {points} sample points for {basis} basis functions")]
    Underdetermined { points: usize, basis: usize },
    #[error("normal equations remained singular even with the ridge term")]
    Singular,
    #[error("need at least 2 cohorts to center, got {0}")]
    TooFewCohorts(usize),
    #[error("coefficient length {got} does not match basis size {expected}")]
    CoeffLength { got: usize, expected: usize },
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Result of a least-squares coefficient fit.
#[derive(Debug, Clone)]
pub struct CoeffFit {
    pub coeffs: DVector<f64>,
    /// True when the normal equations were numerically singular and a ridge
    /// term of `1e-10 * trace` had to be added.
    pub ridge_applied: bool,
}

/// Ordinary least squares of `values` sampled at `ages` onto the basis.
pub fn fit_coeffs(ages: &[f64], values: &[f64], basis: &BsplineBasis) -> Result<CoeffFit, SmoothError> {
    assert_eq!(ages.len(), values.len());
    let l = basis.len();
    if ages.len() < l {
        return Err(SmoothError::Underdetermined { points: ages.len(), basis: l });
    }
    let design = basis.design_matrix(ages)?;
    let y = DVector::from_column_slice(values);
    let normal = design.transpose() * &design;
    let rhs = design.transpose() * y;
    if let Some(chol) = normal.clone().cholesky() {
        return Ok(CoeffFit { coeffs: chol.solve(&rhs), ridge_applied: false });
    }
    let ridge = 1e-10 * normal.trace();
    let ridged = normal + DMatrix::identity(l, l) * ridge;
    match ridged.cholesky() {
        Some(chol) => Ok(CoeffFit { coeffs: chol.solve(&rhs), ridge_applied: true }),
        None => Err(SmoothError::Singular),
    }
}

/// Fits a cohort's pointwise key estimates.
pub fn fit_key_coeffs(kp: &KeyPointEstimates, basis: &BsplineBasis) -> Result<CoeffFit, SmoothError> {
    let ages: Vec<f64> = kp.ages.iter().map(|&a| a as f64).collect();
    fit_coeffs(&ages, &kp.values, basis)
}

/// Per-cohort coefficients with their cross-cohort mean and centered rows.
#[derive(Debug, Clone)]
pub struct FunctionalDataSet {
    pub basis: BsplineBasis,
    pub cohorts: Vec<i32>,
    /// `m x L` fitted coefficients, one row per cohort.
    pub coeffs: DMatrix<f64>,
    /// Column means of `coeffs`.
    pub mean_coeffs: DVector<f64>,
    /// `coeffs` minus the mean row; rows sum to zero column-wise.
    pub centered: DMatrix<f64>,
}

/// Centers per-cohort coefficient vectors around their arithmetic mean.
pub fn center(
    basis: BsplineBasis,
    cohorts: Vec<i32>,
    coeff_rows: &[DVector<f64>],
) -> Result<FunctionalDataSet, SmoothError> {
    let m = coeff_rows.len();
    if m < 2 {
        return Err(SmoothError::TooFewCohorts(m));
    }
    assert_eq!(cohorts.len(), m);
    let l = basis.len();
    for row in coeff_rows {
        if row.len() != l {
            return Err(SmoothError::CoeffLength { got: row.len(), expected: l });
        }
    }
    let coeffs = DMatrix::from_fn(m, l, |c, j| coeff_rows[c][j]);
    let mean_coeffs = DVector::from_fn(l, |j, _| coeffs.column(j).sum() / m as f64);
    let centered = DMatrix::from_fn(m, l, |c, j| coeffs[(c, j)] - mean_coeffs[j]);
    Ok(FunctionalDataSet { basis, cohorts, coeffs, mean_coeffs, centered })
}

impl FunctionalDataSet {
    pub fn n_cohorts(&self) -> usize {
        self.cohorts.len()
    }

    /// Fitted curve of cohort row `c` at age `t`.
    pub fn eval_cohort(&self, c: usize, t: f64) -> Result<f64, BasisError> {
        self.basis.eval(&self.coeffs.row(c).transpose(), t)
    }

    /// Mean curve at age `t`.
    pub fn eval_mean(&self, t: f64) -> Result<f64, BasisError> {
        self.basis.eval(&self.mean_coeffs, t)
    }

    /// Centered curve of cohort row `c` at age `t`.
    pub fn eval_centered(&self, c: usize, t: f64) -> Result<f64, BasisError> {
        self.basis.eval(&self.centered.row(c).transpose(), t)
    }

    /// Writes the coefficient dump (`cohort\tl\talpha`).
    pub fn write_coeffs<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "cohort\tl\talpha")?;
        for (c, &cohort) in self.cohorts.iter().enumerate() {
            for j in 0..self.basis.len() {
                writeln!(out, "{}\t{}\t{}", cohort, j + 1, self.coeffs[(c, j)])?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::make_basis;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn sample_ages() -> Vec<f64> {
        (20..=110).map(|t| t as f64).collect()
    }

    #[test]
    fn recovers_exact_spline_samples() {
        let basis = make_basis(20.0, 110.0, 12, 4).unwrap();
        let truth = DVector::from_fn(12, |i, _| (i as f64 * 0.9).cos() * 3.0);
        let ages = sample_ages();
        let values: Vec<f64> = ages.iter().map(|&t| basis.eval(&truth, t).unwrap()).collect();
        let fit = fit_coeffs(&ages, &values, &basis).unwrap();
        assert!(!fit.ridge_applied);
        for (a, b) in truth.iter().zip(fit.coeffs.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn constant_values_fit_exactly() {
        let basis = make_basis(20.0, 110.0, 20, 4).unwrap();
        let ages = sample_ages();
        let values = vec![42.5; ages.len()];
        let fit = fit_coeffs(&ages, &values, &basis).unwrap();
        for &t in &[20.0, 57.3, 110.0] {
            assert_abs_diff_eq!(basis.eval(&fit.coeffs, t).unwrap(), 42.5, epsilon = 1e-10);
        }
    }

    #[test]
    fn noisy_smooth_curve_is_recovered_in_sup_norm() {
        let basis = make_basis(20.0, 110.0, 20, 4).unwrap();
        let x = 1000.0;
        let truth = |t: f64| x * (0.02 * t).exp() / (0.02f64 * 110.0).exp();
        let mut rng = StdRng::seed_from_u64(42);
        let ages = sample_ages();
        let values: Vec<f64> = ages
            .iter()
            .map(|&t| truth(t) + 1e-3 * x * (rng.gen::<f64>() * 2.0 - 1.0))
            .collect();
        let fit = fit_coeffs(&ages, &values, &basis).unwrap();
        let mut sup: f64 = 0.0;
        for i in 0..=900 {
            let t = 20.0 + i as f64 * 0.1;
            sup = sup.max((basis.eval(&fit.coeffs, t).unwrap() - truth(t)).abs());
        }
        assert!(sup < 5e-3 * x, "sup error {sup}");
    }

    #[test]
    fn underdetermined_fit_is_an_error() {
        let basis = make_basis(20.0, 110.0, 20, 4).unwrap();
        let ages: Vec<f64> = (0..10).map(|i| 20.0 + i as f64).collect();
        let values = vec![1.0; 10];
        assert!(matches!(
            fit_coeffs(&ages, &values, &basis),
            Err(SmoothError::Underdetermined { points: 10, basis: 20 })
        ));
    }

    #[test]
    fn refit_is_idempotent() {
        let basis = make_basis(20.0, 110.0, 16, 4).unwrap();
        let ages = sample_ages();
        let mut rng = StdRng::seed_from_u64(7);
        let values: Vec<f64> = ages.iter().map(|_| rng.gen::<f64>() * 10.0).collect();
        let fit1 = fit_coeffs(&ages, &values, &basis).unwrap();
        let refit_samples: Vec<f64> = ages.iter().map(|&t| basis.eval(&fit1.coeffs, t).unwrap()).collect();
        let fit2 = fit_coeffs(&ages, &refit_samples, &basis).unwrap();
        for (a, b) in fit1.coeffs.iter().zip(fit2.coeffs.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn centering_arithmetic() {
        let basis = make_basis(20.0, 110.0, 4, 4).unwrap();
        let v = DVector::from_column_slice(&[1.0, -2.0, 3.0, 0.5]);
        let fds = center(basis, vec![1781, 1782], &[v.clone(), -v.clone()]).unwrap();
        for j in 0..4 {
            assert_abs_diff_eq!(fds.mean_coeffs[j], 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(fds.centered[(0, j)], v[j], epsilon = 1e-15);
            assert_abs_diff_eq!(fds.centered[(1, j)], -v[j], epsilon = 1e-15);
        }
    }

    #[test]
    fn identical_cohorts_center_to_zero() {
        let basis = make_basis(20.0, 110.0, 4, 4).unwrap();
        let v = DVector::from_column_slice(&[5.0, 1.0, -1.0, 2.0]);
        let fds = center(basis, vec![1, 2, 3], &[v.clone(), v.clone(), v]).unwrap();
        assert!(fds.centered.iter().all(|&x| x.abs() < 1e-15));
    }

    #[test]
    fn centered_columns_sum_to_zero() {
        let basis = make_basis(20.0, 110.0, 8, 4).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        let rows: Vec<DVector<f64>> =
            (0..50).map(|_| DVector::from_fn(8, |_, _| rng.gen::<f64>() * 100.0 - 50.0)).collect();
        let cohorts: Vec<i32> = (0..50).collect();
        let fds = center(basis, cohorts, &rows).unwrap();
        for j in 0..8 {
            assert!(fds.centered.column(j).sum().abs() < 1e-10);
        }
    }

    #[test]
    fn reconstruction_identity() {
        let basis = make_basis(20.0, 110.0, 8, 4).unwrap();
        let mut rng = StdRng::seed_from_u64(13);
        let rows: Vec<DVector<f64>> =
            (0..5).map(|_| DVector::from_fn(8, |_, _| rng.gen::<f64>() * 10.0)).collect();
        let fds = center(basis, (0..5).collect(), &rows).unwrap();
        for c in 0..5 {
            for &t in &[20.0, 44.4, 87.2, 110.0] {
                let full = fds.eval_cohort(c, t).unwrap();
                let sum = fds.eval_mean(t).unwrap() + fds.eval_centered(c, t).unwrap();
                assert_abs_diff_eq!(full, sum, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn fewer_than_two_cohorts_is_an_error() {
        let basis = make_basis(20.0, 110.0, 4, 4).unwrap();
        let v = DVector::from_element(4, 1.0);
        assert!(matches!(center(basis, vec![1781], &[v]), Err(SmoothError::TooFewCohorts(1))));
    }
}
