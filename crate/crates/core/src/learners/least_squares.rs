use nalgebra::{DMatrix, DVector};

use super::{check_xy, Family, FittedLearner, LearnerKind, LearnerSpec, Model, TermExpansion};
use crate::error::{Error, Result};
use crate::linalg;

fn is_intercept_column(x: &DMatrix<f64>, j: usize) -> bool {
    x.column(j).iter().all(|&v| v == 1.0)
}

/// Least squares on the design `x` as given.
///
/// `ridge_lambda == 0` gives the minimum-norm least-squares solution;
/// rank deficiency is recorded by `converged == false`. A positive penalty
/// shrinks every column except all-ones intercept columns.
pub fn fit_least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    ridge_lambda: f64,
) -> Result<FittedLearner> {
    check_xy(x, y)?;
    if !(ridge_lambda >= 0.0) || !ridge_lambda.is_finite() {
        return Err(Error::SpecError(format!(
            "ridge penalty {ridge_lambda} must be >= 0"
        )));
    }
    let (coef, converged) = if ridge_lambda == 0.0 {
        let sol = linalg::lstsq(x, y);
        let full = sol.full_rank();
        (sol.coef, full)
    } else {
        let mut gram = x.tr_mul(x);
        for j in 0..x.ncols() {
            if !is_intercept_column(x, j) {
                gram[(j, j)] += ridge_lambda;
            }
        }
        let rhs = x.tr_mul(y);
        match linalg::solve_spd_checked(&gram, &rhs) {
            Some(c) => (c, true),
            None => {
                let sol = linalg::pinv_solve(&gram, &rhs);
                let full = sol.rank == x.ncols();
                (sol.x, full)
            }
        }
    };
    let kind = if ridge_lambda == 0.0 {
        LearnerKind::LeastSquares
    } else {
        LearnerKind::Ridge {
            lambda: ridge_lambda,
        }
    };
    let spec = LearnerSpec {
        kind,
        family: Family::Continuous,
        expansion: TermExpansion::MainTerms,
    };
    Ok(FittedLearner::raw(
        spec,
        Model::Linear {
            coef,
            logistic: false,
        },
        x,
        converged,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_interpolation() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 3.0]);
        let f = fit_least_squares(&x, &y, 0.0).unwrap();
        let c = f.coefficients().unwrap();
        assert_relative_eq!(c[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(c[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_fit() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let y = DVector::from_vec(vec![4.0, 4.0, 4.0]);
        let f = fit_least_squares(&x, &y, 0.0).unwrap();
        assert_relative_eq!(f.coefficients().unwrap()[0], 4.0, epsilon = 1e-12);
        let resid = &y - f.predict(&x).unwrap();
        assert!(resid.amax() < 1e-12);
    }

    fn random_problem(seed: u64, n: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 3, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() * 2.0 - 1.0 });
        let y = DVector::from_fn(n, |i, _| 0.5 - 1.5 * x[(i, 1)] + 2.0 * x[(i, 2)] + rng.random::<f64>() - 0.5);
        (x, y)
    }

    /// Explicit 3x3 inverse by cofactors.
    fn inverse3(m: &DMatrix<f64>) -> DMatrix<f64> {
        let c = |r: usize, s: usize| m[(r, s)];
        let det = c(0, 0) * (c(1, 1) * c(2, 2) - c(1, 2) * c(2, 1))
            - c(0, 1) * (c(1, 0) * c(2, 2) - c(1, 2) * c(2, 0))
            + c(0, 2) * (c(1, 0) * c(2, 1) - c(1, 1) * c(2, 0));
        let mut inv = DMatrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                let rows: Vec<usize> = (0..3).filter(|&r| r != j).collect();
                let cols: Vec<usize> = (0..3).filter(|&s| s != i).collect();
                let minor = c(rows[0], cols[0]) * c(rows[1], cols[1]) - c(rows[0], cols[1]) * c(rows[1], cols[0]);
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                inv[(i, j)] = sign * minor / det;
            }
        }
        inv
    }

    #[test]
    fn matches_normal_equations_oracle() {
        let (x, y) = random_problem(11, 50);
        let oracle = inverse3(&x.tr_mul(&x)) * x.tr_mul(&y);
        let f = fit_least_squares(&x, &y, 0.0).unwrap();
        let c = f.coefficients().unwrap();
        for j in 0..3 {
            assert_relative_eq!(c[j], oracle[j], epsilon = 1e-10);
        }
        assert!(f.converged);
    }

    #[test]
    fn residuals_orthogonal_to_columns() {
        let (x, y) = random_problem(3, 80);
        let f = fit_least_squares(&x, &y, 0.0).unwrap();
        let r = &y - f.predict(&x).unwrap();
        let score = x.tr_mul(&r);
        let scale = x.tr_mul(&y).amax();
        assert!(score.amax() <= 1e-8 * scale);
    }

    #[test]
    fn ridge_shrinks_monotonically_towards_least_squares() {
        let (x, y) = random_problem(5, 40);
        let ls = fit_least_squares(&x, &y, 0.0).unwrap();
        let slope_norm = |f: &FittedLearner| f.coefficients().unwrap().rows(1, 2).norm();
        let mut prev = slope_norm(&ls);
        for lambda in [1e-8, 0.1, 1.0, 10.0, 100.0] {
            let r = fit_least_squares(&x, &y, lambda).unwrap();
            let norm = slope_norm(&r);
            assert!(norm <= prev + 1e-12, "lambda {lambda}: {norm} > {prev}");
            prev = norm;
        }
        let tiny = fit_least_squares(&x, &y, 1e-10).unwrap();
        assert!((tiny.coefficients().unwrap() - ls.coefficients().unwrap()).amax() < 1e-8);
    }

    #[test]
    fn rank_deficiency_is_flagged() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let f = fit_least_squares(&x, &y, 0.0).unwrap();
        assert!(!f.converged);
        let c = f.coefficients().unwrap();
        // minimum norm: c ∝ (1, 2) with c·(1,2) = 2
        assert_relative_eq!(c[0], 0.4, epsilon = 1e-10);
        assert_relative_eq!(c[1], 0.8, epsilon = 1e-10);
    }
}
