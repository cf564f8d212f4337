use nalgebra::{DMatrix, DVector};

use super::{check_xy, Family, FittedLearner, LearnerKind, LearnerSpec, Model, TermExpansion};
use crate::error::{Error, Result};
use crate::linalg;

/// Coefficients are clamped to `[-bound, bound]`; hitting the bound marks the
/// fit as not converged (separation).
pub const LOGISTIC_COEF_BOUND: f64 = 15.0;

pub(crate) struct IrlsFit {
    pub coef: DVector<f64>,
    pub converged: bool,
    pub loglik: f64,
}

/// Log-likelihood and fitted probabilities from one exponential per row.
fn evaluate(eta: &DVector<f64>, y: &DVector<f64>) -> (f64, DVector<f64>) {
    let mut prob = DVector::zeros(eta.len());
    let mut ll = 0.0;
    for (i, (&e, &yi)) in eta.iter().zip(y.iter()).enumerate() {
        let t = (-e.abs()).exp();
        ll += yi * e - (e.max(0.0) + t.ln_1p());
        prob[i] = if e > 0.0 { 1.0 / (1.0 + t) } else { t / (1.0 + t) };
    }
    (ll, prob)
}

/// Newton-Raphson / IRLS with step halving, starting from `start`.
pub(crate) fn irls(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    start: DVector<f64>,
    max_iter: usize,
    tol: f64,
) -> IrlsFit {
    let p = x.ncols();
    let mut coef = start;
    let (mut ll, mut prob) = evaluate(&(x * &coef), y);
    let mut converged = false;
    let mut clamped;
    let mut wx = x.clone();
    for _ in 0..max_iter {
        let weights = prob.map(|q| (q * (1.0 - q)).max(1e-12));
        let grad = x.tr_mul(&(y - &prob));
        for j in 0..p {
            wx.column_mut(j).copy_from(&x.column(j).component_mul(&weights));
        }
        let hess = x.tr_mul(&wx);
        let step = linalg::solve_spd_checked(&hess, &grad)
            .unwrap_or_else(|| linalg::pinv_solve(&hess, &grad).x);

        let mut scale = 1.0;
        let mut next;
        let mut next_ll;
        let mut next_prob;
        loop {
            next = &coef + &step * scale;
            clamped = false;
            for v in next.iter_mut() {
                if v.abs() > LOGISTIC_COEF_BOUND {
                    *v = v.signum() * LOGISTIC_COEF_BOUND;
                    clamped = true;
                }
            }
            (next_ll, next_prob) = evaluate(&(x * &next), y);
            if next_ll >= ll - 1e-12 * ll.abs().max(1.0) || scale < 1e-4 {
                break;
            }
            scale *= 0.5;
        }
        let change = (0..p)
            .map(|j| (next[j] - coef[j]).abs())
            .fold(0.0_f64, f64::max);
        coef = next;
        prob = next_prob;
        ll = next_ll;
        if change < tol {
            converged = !clamped;
            break;
        }
    }
    IrlsFit {
        coef,
        converged,
        loglik: ll,
    }
}

/// Maximum-likelihood logistic regression on the design `x` as given.
///
/// Never aborts: complete separation ends with clamped coefficients and
/// `converged == false`.
pub fn fit_logistic(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<FittedLearner> {
    check_xy(x, y)?;
    if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::SpecError(format!(
            "logistic target must be 0/1; row {} has {}",
            i + 1,
            y[i]
        )));
    }
    let fit = irls(x, y, DVector::zeros(x.ncols()), max_iter, tol);
    let spec = LearnerSpec {
        kind: LearnerKind::Logistic,
        family: Family::Binary,
        expansion: TermExpansion::MainTerms,
    };
    Ok(FittedLearner::raw(
        spec,
        Model::Linear {
            coef: fit.coef,
            logistic: true,
        },
        x,
        fit.converged,
    ))
}
