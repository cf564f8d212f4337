use nalgebra::{DMatrix, DVector};

use crate::data::{design_matrix, Dataset, ModelSpec, Term};
use crate::error::Result;
use crate::linalg;

/// First-stage F statistics below this flag a weak instrument.
pub const WEAK_INSTRUMENT_F: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct TslsFit {
    pub psi: [f64; 2],
    /// Second-stage coefficients: intercept, `W` main terms, fitted `A`,
    /// fitted `A*V`.
    pub coef: DVector<f64>,
    /// Sandwich covariance of `(psi_c, psi_v)`.
    pub cov: DMatrix<f64>,
    /// First-stage F statistics for the excluded instruments in the `A` and
    /// `A*V` equations.
    pub first_stage_f: [f64; 2],
    pub weak_instrument: bool,
    pub rank_deficient: bool,
}

fn rss(x: &DMatrix<f64>, y: &DVector<f64>) -> (f64, usize) {
    let sol = linalg::lstsq(x, y);
    ((y - x * &sol.coef).norm_squared(), sol.rank)
}

/// F statistic for the excluded instruments (`Z`, `Z*V`) in one
/// first-stage equation. Returns `(F, number of identified instruments)`.
fn first_stage_f(full: &DMatrix<f64>, restricted: &DMatrix<f64>, target: &DVector<f64>) -> (f64, usize) {
    let n = full.nrows();
    let (rss_f, rank_f) = rss(full, target);
    let (rss_r, rank_r) = rss(restricted, target);
    let q = rank_f.saturating_sub(rank_r);
    if q == 0 {
        return (0.0, 0);
    }
    let df = n.saturating_sub(rank_f);
    if df == 0 || rss_f <= 1e-14 * rss_r.max(f64::MIN_POSITIVE) {
        return (f64::INFINITY, q);
    }
    (((rss_r - rss_f) / q as f64) / (rss_f / df as f64), q)
}

/// Two-stage least squares with the two-equation first stage.
///
/// Stage one regresses `A` and `A*V` separately on the intercept, `Z`, `Z*V`
/// and the `W` main terms. Stage two regresses `Y` on the intercept, the `W`
/// main terms and the two fitted exposures. The covariance is the
/// heteroskedasticity-robust TSLS sandwich built from structural residuals
/// `Y - X b` evaluated at the observed exposures.
pub fn fit_tsls(ds: &Dataset) -> Result<TslsFit> {
    let n = ds.n();
    let p = ds.p();
    let first_spec = ModelSpec::tsls_first_stage(ds);
    first_spec.check_tsls_first_stage(ds, &ModelSpec::effect(ds))?;
    let f = design_matrix(ds, &first_spec, None)?;
    let a = ds.a();
    let av = DVector::from_fn(n, |i, _| a[i] * ds.v(i));
    let y = ds.y();

    let a_hat = &f * linalg::lstsq(&f, &a).coef;
    let av_hat = &f * linalg::lstsq(&f, &av).coef;

    let exogenous: Vec<usize> = first_spec
        .terms
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.involves_z())
        .map(|(k, _)| k)
        .collect();
    let restricted = f.select_columns(&exogenous);
    let (f_a, q_a) = first_stage_f(&f, &restricted, &a);
    let (f_av, q_av) = first_stage_f(&f, &restricted, &av);
    let weak_instrument = q_a.max(q_av) < 2 || f_a.min(f_av) < WEAK_INSTRUMENT_F;

    // Second stage: [1, W, A_hat, AV_hat] and the structural counterpart.
    let exo_spec = ModelSpec::outcome_my_main(ds);
    debug_assert!(matches!(exo_spec.terms[0], Term::Intercept));
    let exo = design_matrix(ds, &exo_spec, None)?;
    let k = p + 3;
    let mut x_hat = DMatrix::zeros(n, k);
    x_hat.view_mut((0, 0), (n, p + 1)).copy_from(&exo);
    x_hat.set_column(p + 1, &a_hat);
    x_hat.set_column(p + 2, &av_hat);
    let mut x = x_hat.clone();
    x.set_column(p + 1, &a);
    x.set_column(p + 2, &av);

    let sol = linalg::lstsq(&x_hat, &y);
    let coef = sol.coef;
    let resid = &y - &x * &coef;

    let bread = linalg::pinv(&x_hat.tr_mul(&x_hat));
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..n {
        let xi = x_hat.row(i).transpose();
        meat += &xi * xi.transpose() * (resid[i] * resid[i]);
    }
    let full_cov = &bread * meat * &bread;
    let cov = full_cov.view((p + 1, p + 1), (2, 2)).into_owned();

    Ok(TslsFit {
        psi: [coef[p + 1], coef[p + 2]],
        coef,
        cov,
        first_stage_f: [f_a, f_av],
        weak_instrument,
        rank_deficient: sol.rank < k,
    })
}
