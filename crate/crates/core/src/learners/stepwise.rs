use nalgebra::{DMatrix, DVector};

use super::logistic::irls;
use super::{
    check_xy, with_intercept, Family, FittedLearner, LearnerKind, LearnerSpec, Model, TermExpansion,
    DEFAULT_LOGISTIC_MAX_ITER, DEFAULT_LOGISTIC_TOL,
};
use crate::error::Result;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepwiseCriterion {
    Aic,
}

struct Candidate {
    aic: f64,
    selected: Vec<usize>,
    coef: DVector<f64>,
    converged: bool,
}

struct Evaluator<'a> {
    design: DMatrix<f64>,
    y: &'a DVector<f64>,
    family: Family,
    rss_floor: f64,
}

impl Evaluator<'_> {
    fn columns(&self, selected: &[usize]) -> DMatrix<f64> {
        let mut cols = Vec::with_capacity(selected.len() + 1);
        cols.push(0);
        cols.extend(selected.iter().map(|j| j + 1));
        self.design.select_columns(&cols)
    }

    fn eval(&self, selected: Vec<usize>, start: Option<DVector<f64>>) -> Candidate {
        let sub = self.columns(&selected);
        let n = self.y.len() as f64;
        let k = (selected.len() + 1) as f64;
        match self.family {
            Family::Continuous => {
                let sol = linalg::lstsq(&sub, self.y);
                let rss = (self.y - &sub * &sol.coef).norm_squared();
                let aic = n * (rss.max(self.rss_floor) / n).ln() + 2.0 * k;
                Candidate {
                    aic,
                    selected,
                    converged: sol.full_rank(),
                    coef: sol.coef,
                }
            }
            Family::Binary => {
                let start = start.unwrap_or_else(|| DVector::zeros(sub.ncols()));
                let fit = irls(&sub, self.y, start, DEFAULT_LOGISTIC_MAX_ITER, DEFAULT_LOGISTIC_TOL);
                Candidate {
                    aic: -2.0 * fit.loglik + 2.0 * k,
                    selected,
                    coef: fit.coef,
                    converged: fit.converged,
                }
            }
        }
    }
}

/// Coefficients of `current` re-laid out for `next`, new columns at zero.
fn warm_start(current: &Candidate, next: &[usize]) -> DVector<f64> {
    let mut out = DVector::zeros(next.len() + 1);
    out[0] = current.coef[0];
    for (k, j) in next.iter().enumerate() {
        if let Some(pos) = current.selected.iter().position(|s| s == j) {
            out[k + 1] = current.coef[pos + 1];
        }
    }
    out
}

/// Forward-backward AIC selection over the candidate columns of `x`,
/// starting from the intercept-only model.
///
/// Each step applies the single add or drop move with the lowest AIC, if it
/// lowers the current AIC; ties go to the lowest column index.
pub fn fit_stepwise(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    family: Family,
    criterion: StepwiseCriterion,
) -> Result<FittedLearner> {
    let StepwiseCriterion::Aic = criterion;
    check_xy(x, y)?;
    let m = x.ncols();
    let ybar = y.mean();
    let tss = y.iter().map(|v| (v - ybar) * (v - ybar)).sum::<f64>();
    let eval = Evaluator {
        design: with_intercept(x),
        y,
        family,
        // Exact fits would otherwise send log(RSS) to -inf and reward noise.
        rss_floor: 1e-12 * tss + f64::MIN_POSITIVE,
    };
    let mut current = eval.eval(Vec::new(), None);
    for _ in 0..(4 * m + 4) {
        let mut best: Option<Candidate> = None;
        for j in 0..m {
            let mut next = current.selected.clone();
            if let Some(pos) = next.iter().position(|&s| s == j) {
                next.remove(pos);
            } else {
                next.push(j);
                next.sort_unstable();
            }
            let start = (family == Family::Binary).then(|| warm_start(&current, &next));
            let cand = eval.eval(next, start);
            if best.as_ref().map_or(true, |b| cand.aic < b.aic) {
                best = Some(cand);
            }
        }
        match best {
            Some(b) if b.aic < current.aic - 1e-9 => current = b,
            _ => break,
        }
    }
    let spec = LearnerSpec {
        kind: LearnerKind::Stepwise,
        family,
        expansion: TermExpansion::MainTerms,
    };
    Ok(FittedLearner::raw(
        spec,
        Model::Stepwise {
            selected: current.selected,
            coef: current.coef,
            logistic: family == Family::Binary,
        },
        x,
        current.converged,
    ))
}
