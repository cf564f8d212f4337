use nalgebra::{DMatrix, DVector};

use super::{check_xy, Family, FittedLearner, LearnerKind, LearnerSpec, Model, TermExpansion};
use crate::error::{Error, Result};
use crate::linalg;

/// Linear-interpolation sample quantile (R type 7) of sorted data.
fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Knots at the `l / (K + 1)` empirical quantiles of each column. Knots at
/// or beyond the column range and duplicates are dropped.
fn place_knots(x: &DMatrix<f64>, per_covariate: usize) -> Vec<(usize, f64)> {
    let mut knots = Vec::new();
    for j in 0..x.ncols() {
        let mut col: Vec<f64> = x.column(j).iter().copied().collect();
        if col.iter().all(|&v| v == 0.0 || v == 1.0) {
            continue;
        }
        col.sort_by(f64::total_cmp);
        let (min, max) = (col[0], col[col.len() - 1]);
        let mut last = f64::NAN;
        for l in 1..=per_covariate {
            let k = quantile_sorted(&col, l as f64 / (per_covariate + 1) as f64);
            if k > min && k < max && k != last {
                knots.push((j, k));
                last = k;
            }
        }
    }
    knots
}

pub(crate) fn basis(x: &DMatrix<f64>, knots: &[(usize, f64)]) -> DMatrix<f64> {
    let n = x.nrows();
    let p = x.ncols();
    DMatrix::from_fn(n, 1 + p + knots.len(), |i, c| {
        if c == 0 {
            1.0
        } else if c <= p {
            x[(i, c - 1)]
        } else {
            let (j, k) = knots[c - 1 - p];
            (x[(i, j)] - k).max(0.0)
        }
    })
}

/// Additive truncated-power (linear hinge) spline regression.
///
/// Basis: `1, x_j, (x_j - k_jl)_+` for every column `j` and knot `l`, fitted
/// by least squares.
pub fn fit_spline_basis(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    knots_per_covariate: usize,
) -> Result<FittedLearner> {
    check_xy(x, y)?;
    if knots_per_covariate == 0 {
        return Err(Error::SpecError("spline basis needs at least one knot".into()));
    }
    let knots = place_knots(x, knots_per_covariate);
    let b = basis(x, &knots);
    let sol = linalg::lstsq(&b, y);
    let converged = sol.full_rank();
    let spec = LearnerSpec {
        kind: LearnerKind::SplineBasis {
            knots_per_covariate,
        },
        family: Family::Continuous,
        expansion: TermExpansion::MainTerms,
    };
    Ok(FittedLearner::raw(
        spec,
        Model::Spline {
            knots,
            coef: sol.coef,
        },
        x,
        converged,
    ))
}
