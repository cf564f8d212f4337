use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use super::nuisance::NuisancePredictions;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::{InfluenceKind, InfluenceMatrix};
use crate::linalg;

/// Absolute floor on `m_a(1, W) - m_a(0, W)` in the initial effect ratio.
pub const M_DENOMINATOR_FLOOR: f64 = 0.01;
/// Floor on the instrument-strength term in the clever covariate.
pub const ZETA2_FLOOR: f64 = 0.025;

/// Empirical moments of the modifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModifierMoments {
    pub mean: f64,
    pub mean_sq: f64,
    pub var: f64,
}

impl ModifierMoments {
    pub fn from_values(v: &[f64]) -> Result<Self> {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let mean_sq = v.iter().map(|x| x * x).sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        if !(var > 1e-12 * mean_sq.max(f64::MIN_POSITIVE)) {
            return Err(Error::DegenerateModifier);
        }
        Ok(ModifierMoments { mean, mean_sq, var })
    }

    /// `c(V) = E[(1, V)(1, V)']^-1 (1, V)`.
    pub fn c(&self, v: f64) -> [f64; 2] {
        [(self.mean_sq - self.mean * v) / self.var, (v - self.mean) / self.var]
    }
}

/// Initial effect `[mu(1,W) - mu(0,W)] / [m_a(1,W) - m_a(0,W)]`; the
/// denominator is floored at 0.01 in absolute value, keeping its sign. The
/// flag reports whether the floor was applied.
pub fn initial_m_hat(mu1: f64, mu0: f64, ma1: f64, ma0: f64) -> (f64, bool) {
    let num = mu1 - mu0;
    let den = ma1 - ma0;
    if num == 0.0 {
        return (0.0, den.abs() < M_DENOMINATOR_FLOOR);
    }
    if den.abs() < M_DENOMINATOR_FLOOR {
        let signed = if den < 0.0 { -M_DENOMINATOR_FLOOR } else { M_DENOMINATOR_FLOOR };
        (num / signed, true)
    } else {
        (num / den, false)
    }
}

/// `m_y(W) = mu(0, W) - m(W) m_a(0, W)`.
pub fn initial_m_y(mu0: f64, ma0: f64, m: f64) -> f64 {
    mu0 - m * ma0
}

/// Instrument strength `Var_g(m_a(Z, W) | W) = (m_a(1,W) - m_a(0,W))^2 g (1 - g)`
/// floored at 0.025. Returns `(value, floored)`.
pub fn zeta2(ma1: f64, ma0: f64, g: f64) -> (f64, bool) {
    let d = ma1 - ma0;
    let raw = d * d * g * (1.0 - g);
    if raw < ZETA2_FLOOR {
        (ZETA2_FLOOR, true)
    } else {
        (raw, false)
    }
}

/// Clever covariate `h(W) = c(V) / zeta^2(W)`; the flag reports a floored
/// `zeta^2`.
pub fn clever_covariate(moments: &ModifierMoments, v: f64, ma1: f64, ma0: f64, g: f64) -> ([f64; 2], bool) {
    let (z2, floored) = zeta2(ma1, ma0, g);
    let c = moments.c(v);
    ([c[0] / z2, c[1] / z2], floored)
}

/// Solves `sum h K A h' eps = sum h K (Y - A m - m_y)` for the fluctuation
/// parameter.
pub fn solve_epsilon(h: &[[f64; 2]], k: &[f64], a: &[f64], resid: &[f64]) -> Result<[f64; 2]> {
    let mut lhs = Matrix2::zeros();
    let mut rhs = Vector2::zeros();
    for i in 0..h.len() {
        let hv = Vector2::new(h[i][0], h[i][1]);
        lhs += hv * hv.transpose() * (k[i] * a[i]);
        rhs += hv * (k[i] * resid[i]);
    }
    let scale = lhs.abs().max();
    let det = lhs.determinant();
    if !(scale > 0.0) || !(det.abs() > 1e-12 * scale * scale) {
        return Err(Error::TmleDegenerate(
            "the fluctuation system for epsilon is singular".into(),
        ));
    }
    let eps = lhs
        .try_inverse()
        .map(|inv| inv * rhs)
        .ok_or_else(|| Error::TmleDegenerate("the fluctuation system for epsilon is singular".into()))?;
    Ok([eps[0], eps[1]])
}

#[derive(Debug, Clone)]
pub struct TmleFit {
    pub psi: [f64; 2],
    pub epsilon: [f64; 2],
    pub moments: ModifierMoments,
    pub m_hat: DVector<f64>,
    pub m_star: DVector<f64>,
    pub m_y: DVector<f64>,
    pub zeta_floor_count: usize,
    pub m_floor_count: usize,
}

/// Per-row pieces shared by the fit and by out-of-sample influence values.
struct Pieces {
    m_hat: DVector<f64>,
    m_y: DVector<f64>,
    h: Vec<[f64; 2]>,
    k: DVector<f64>,
    zeta_floors: usize,
    m_floors: usize,
}

fn pieces(ds: &Dataset, preds: &NuisancePredictions, moments: &ModifierMoments) -> Result<Pieces> {
    let (Some(mu1), Some(mu0)) = (&preds.mu1, &preds.mu0) else {
        return Err(Error::SpecError("TMLE needs an outcome regression".into()));
    };
    let n = ds.n();
    let mut m_hat = DVector::zeros(n);
    let mut m_y = DVector::zeros(n);
    let mut h = Vec::with_capacity(n);
    let mut zeta_floors = 0;
    let mut m_floors = 0;
    for i in 0..n {
        let (m, mf) = initial_m_hat(mu1[i], mu0[i], preds.ma1[i], preds.ma0[i]);
        m_hat[i] = m;
        m_y[i] = initial_m_y(mu0[i], preds.ma0[i], m);
        let (hi, zf) = clever_covariate(moments, ds.v(i), preds.ma1[i], preds.ma0[i], preds.g[i]);
        h.push(hi);
        m_floors += usize::from(mf);
        zeta_floors += usize::from(zf);
    }
    Ok(Pieces {
        m_hat,
        m_y,
        h,
        k: preds.k(ds),
        zeta_floors,
        m_floors,
    })
}

/// Linear-fluctuation TMLE of the projection of `m(W)` onto `(1, V)`.
pub fn fit_tmle(ds: &Dataset, preds: &NuisancePredictions) -> Result<TmleFit> {
    let moments = ModifierMoments::from_values(&ds.modifier())?;
    let p = pieces(ds, preds, &moments)?;
    let a: Vec<f64> = ds.a().iter().copied().collect();
    let resid: Vec<f64> = (0..ds.n())
        .map(|i| ds.rows()[i].y - a[i] * p.m_hat[i] - p.m_y[i])
        .collect();
    let k: Vec<f64> = p.k.iter().copied().collect();
    let epsilon = solve_epsilon(&p.h, &k, &a, &resid)?;
    let m_star = DVector::from_fn(ds.n(), |i, _| {
        p.m_hat[i] + p.h[i][0] * epsilon[0] + p.h[i][1] * epsilon[1]
    });
    let x = DMatrix::from_fn(ds.n(), 2, |i, j| if j == 0 { 1.0 } else { ds.v(i) });
    let proj = linalg::lstsq(&x, &m_star).coef;
    Ok(TmleFit {
        psi: [proj[0], proj[1]],
        epsilon,
        moments,
        m_hat: p.m_hat,
        m_star,
        m_y: p.m_y,
        zeta_floor_count: p.zeta_floors,
        m_floor_count: p.m_floors,
    })
}

impl TmleFit {
    /// Efficient influence values on the rows of `ds`:
    /// `h K (Y - A m* - m_y) + c (m* - psi_c - psi_v V)`, using the
    /// fluctuation and modifier moments of this fit.
    pub fn eif_on(&self, ds: &Dataset, preds: &NuisancePredictions) -> Result<InfluenceMatrix> {
        let p = pieces(ds, preds, &self.moments)?;
        let mut values = DMatrix::zeros(ds.n(), 2);
        for i in 0..ds.n() {
            let r = &ds.rows()[i];
            let v = ds.v(i);
            let m_star = p.m_hat[i] + p.h[i][0] * self.epsilon[0] + p.h[i][1] * self.epsilon[1];
            let outcome = p.k[i] * (r.y - f64::from(r.a) * m_star - p.m_y[i]);
            let proj = m_star - self.psi[0] - self.psi[1] * v;
            let c = self.moments.c(v);
            for j in 0..2 {
                values[(i, j)] = p.h[i][j] * outcome + c[j] * proj;
            }
        }
        Ok(InfluenceMatrix {
            values,
            kind: InfluenceKind::TmleEif,
        })
    }
}
