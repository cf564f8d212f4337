use nalgebra::{DMatrix, DVector};

use super::nuisance::NuisancePredictions;
use crate::data::{design_matrix, Dataset, ModelSpec};
use crate::error::{Error, Result};
use crate::inference::{InfluenceKind, InfluenceMatrix};
use crate::linalg;

/// Null-space components below this (relative) size count as zero when
/// deciding whether `psi_c` is identified in a rank-deficient system.
const ESTIMABLE_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct IvgFit {
    pub psi: [f64; 2],
    /// Coefficients of the main-terms `m_y` model (intercept first).
    pub beta: DVector<f64>,
    /// `mean(A K (1, V)(1, V)')` on the fitting sample.
    pub m_bar: DMatrix<f64>,
    /// The stacked system was singular but `psi_c` was still identified;
    /// the minimum-norm solution is reported.
    pub rank_deficient: bool,
}

/// Solves the locally efficient IV-g estimating equations
///
/// ```text
/// sum_i X_i        (Y_i - X_i b - A_i (1, V_i) psi) = 0
/// sum_i (1, V_i) K_i (Y_i - X_i b - A_i (1, V_i) psi) = 0
/// ```
///
/// jointly in `(b, psi)`, where `X` holds the `m_y` main terms and
/// `K = m_a(Z, W) - E_g[m_a | W]`. The system is linear and solved directly.
pub fn fit_iv_g(ds: &Dataset, preds: &NuisancePredictions) -> Result<IvgFit> {
    let n = ds.n();
    let xy = design_matrix(ds, &ModelSpec::outcome_my_main(ds), None)?;
    let q = xy.ncols();
    let k = preds.k(ds);
    let a = ds.a();
    let y = ds.y();

    // Columns of the psi block: A (1, V); index rows: K (1, V).
    let d = DMatrix::from_fn(n, 2, |i, j| a[i] * if j == 0 { 1.0 } else { ds.v(i) });
    let e = DMatrix::from_fn(n, 2, |i, j| k[i] * if j == 0 { 1.0 } else { ds.v(i) });

    let dim = q + 2;
    let mut g = DMatrix::zeros(dim, dim);
    g.view_mut((0, 0), (q, q)).copy_from(&xy.tr_mul(&xy));
    g.view_mut((0, q), (q, 2)).copy_from(&xy.tr_mul(&d));
    g.view_mut((q, 0), (2, q)).copy_from(&e.tr_mul(&xy));
    g.view_mut((q, q), (2, 2)).copy_from(&e.tr_mul(&d));
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, q).copy_from(&xy.tr_mul(&y));
    rhs.rows_mut(q, 2).copy_from(&e.tr_mul(&y));

    let sol = linalg::pinv_solve(&g, &rhs);
    let rank_deficient = sol.rank < dim;
    if rank_deficient {
        let identified = sol
            .null_space
            .iter()
            .all(|v| v[q].abs() <= ESTIMABLE_TOL * v.amax());
        if !identified {
            return Err(Error::DegenerateDesign(format!(
                "IV-g estimating equations are singular (rank {} of {dim}) and psi_c is not identified",
                sol.rank
            )));
        }
    }
    let theta = sol.x;
    let mut m_bar = DMatrix::zeros(2, 2);
    for i in 0..n {
        let v = ds.v(i);
        let w = a[i] * k[i] / n as f64;
        m_bar[(0, 0)] += w;
        m_bar[(0, 1)] += w * v;
        m_bar[(1, 1)] += w * v * v;
    }
    m_bar[(1, 0)] = m_bar[(0, 1)];
    Ok(IvgFit {
        psi: [theta[q], theta[q + 1]],
        beta: theta.rows(0, q).into_owned(),
        m_bar,
        rank_deficient,
    })
}

impl IvgFit {
    /// Stacked estimating-equation residuals at the solution (length
    /// `p + 3`); the `m_y` rows come first.
    pub fn estimating_equation(&self, ds: &Dataset, preds: &NuisancePredictions) -> Result<DVector<f64>> {
        let xy = design_matrix(ds, &ModelSpec::outcome_my_main(ds), None)?;
        let r = self.residuals(ds, &xy);
        let k = preds.k(ds);
        let q = xy.ncols();
        let mut out = DVector::zeros(q + 2);
        out.rows_mut(0, q).copy_from(&xy.tr_mul(&r));
        for i in 0..ds.n() {
            out[q] += k[i] * r[i];
            out[q + 1] += k[i] * ds.v(i) * r[i];
        }
        Ok(out)
    }

    fn residuals(&self, ds: &Dataset, xy: &DMatrix<f64>) -> DVector<f64> {
        let my = xy * &self.beta;
        DVector::from_fn(ds.n(), |i, _| {
            let r = &ds.rows()[i];
            r.y - my[i] - f64::from(r.a) * (self.psi[0] + self.psi[1] * ds.v(i))
        })
    }

    /// Influence values `M^-1 K (1, V) (Y - m_y(W) - A m(W; psi))` on the
    /// rows of `ds`, with `M` taken from the fitting sample.
    pub fn influence_on(&self, ds: &Dataset, preds: &NuisancePredictions) -> Result<InfluenceMatrix> {
        let svd = self.m_bar.clone().svd(false, false);
        let smax = svd.singular_values.max();
        if !(svd.singular_values.min() > 1e-12 * smax) {
            return Err(Error::DegenerateDesign(
                "mean of A K (1, V)(1, V)' is singular".into(),
            ));
        }
        let m_inv = self
            .m_bar
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::DegenerateDesign("mean of A K (1, V)(1, V)' is singular".into()))?;
        let xy = design_matrix(ds, &ModelSpec::outcome_my_main(ds), None)?;
        let r = self.residuals(ds, &xy);
        let k = preds.k(ds);
        let mut values = DMatrix::zeros(ds.n(), 2);
        for i in 0..ds.n() {
            let s = k[i] * r[i];
            let u = nalgebra::Vector2::new(s, s * ds.v(i));
            let d = m_inv.fixed_view::<2, 2>(0, 0) * u;
            values[(i, 0)] = d[0];
            values[(i, 1)] = d[1];
        }
        Ok(InfluenceMatrix {
            values,
            kind: InfluenceKind::IvG,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;

    fn wald_fixture() -> Dataset {
        let data = [
            (0, 1, 4.0),
            (0, 0, 2.0),
            (0, 0, 3.0),
            (0, 0, 3.0),
            (1, 1, 8.0),
            (1, 1, 7.0),
            (1, 1, 6.0),
            (1, 0, 7.0),
        ];
        let rows = data
            .iter()
            .map(|&(z, a, y)| Observation { w: vec![0.0], z, a, y })
            .collect();
        Dataset::new(rows, vec!["v".into()], 0).unwrap()
    }

    /// RCT nuisances: constant g = 1/2 and m_a saturated in Z.
    fn rct_preds(n: usize) -> NuisancePredictions {
        NuisancePredictions {
            ma1: DVector::from_element(n, 0.75),
            ma0: DVector::from_element(n, 0.25),
            g: DVector::from_element(n, 0.5),
            mu1: None,
            mu0: None,
        }
    }

    /// Squared norm of the two reduced estimating equations in
    /// `(b0, psi_c)` on the Wald fixture.
    fn ee_norm(ds: &Dataset, b0: f64, psi: f64) -> f64 {
        let mut u0 = 0.0;
        let mut u1 = 0.0;
        for r in ds.rows() {
            let k = if r.z == 1 { 0.25 } else { -0.25 };
            let res = r.y - b0 - f64::from(r.a) * psi;
            u0 += res;
            u1 += k * res;
        }
        u0 * u0 + u1 * u1
    }

    /// Coarse-to-fine 2-D grid search for the root.
    fn grid_root(ds: &Dataset) -> (f64, f64) {
        let (mut cb, mut cp, mut half) = (0.0, 0.0, 20.0);
        for _ in 0..12 {
            let step = half / 50.0;
            let mut best = (f64::INFINITY, cb, cp);
            for i in -50..=50 {
                for j in -50..=50 {
                    let b = cb + i as f64 * step;
                    let p = cp + j as f64 * step;
                    let v = ee_norm(ds, b, p);
                    if v < best.0 {
                        best = (v, b, p);
                    }
                }
            }
            cb = best.1;
            cp = best.2;
            half = 2.0 * step;
        }
        (cb, cp)
    }

    #[test]
    fn wald_ratio_is_the_root() {
        let ds = wald_fixture();
        let fit = fit_iv_g(&ds, &rct_preds(8)).unwrap();
        assert!(fit.rank_deficient);
        assert!((fit.psi[0] - 8.0).abs() < 1e-10);
        let (_, grid_psi) = grid_root(&ds);
        assert!((fit.psi[0] - grid_psi).abs() < 1e-6, "{} vs {grid_psi}", fit.psi[0]);
    }

    #[test]
    fn unidentified_effect_is_degenerate() {
        let ds = wald_fixture();
        // K is identically zero: no instrument strength at all.
        let mut p = rct_preds(8);
        p.ma1 = p.ma0.clone();
        assert!(matches!(fit_iv_g(&ds, &p), Err(Error::DegenerateDesign(_))));
    }
}
