//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff used for numerical rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Outcome of a least-squares solve.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub coef: DVector<f64>,
    pub rank: usize,
}

impl LstsqSolution {
    pub fn full_rank(&self) -> bool {
        self.rank == self.coef.len()
    }
}

/// Minimum-norm least-squares solution of `x * b = y`.
///
/// Well-conditioned problems go through a Cholesky factorisation of the Gram
/// matrix; anything else falls back to a thin SVD of `x`.
pub fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> LstsqSolution {
    let p = x.ncols();
    if p == 0 {
        return LstsqSolution {
            coef: DVector::zeros(0),
            rank: 0,
        };
    }
    let gram = x.tr_mul(x);
    let rhs = x.tr_mul(y);
    if let Some(coef) = solve_spd_checked(&gram, &rhs) {
        return LstsqSolution { coef, rank: p };
    }
    lstsq_svd(x, y)
}

/// Least squares through the SVD of `x`; always returns the minimum-norm solution.
pub fn lstsq_svd(x: &DMatrix<f64>, y: &DVector<f64>) -> LstsqSolution {
    let p = x.ncols();
    if x.nrows() == 0 {
        return LstsqSolution {
            coef: DVector::zeros(p),
            rank: 0,
        };
    }
    // nalgebra's SVD wants at least as many rows as columns for the thin form.
    let svd = if x.nrows() >= p {
        x.clone().svd(true, true)
    } else {
        let mut padded = DMatrix::zeros(p, p);
        padded.view_mut((0, 0), (x.nrows(), p)).copy_from(x);
        let mut ypad = DVector::zeros(p);
        ypad.rows_mut(0, y.len()).copy_from(y);
        return lstsq_svd(&padded, &ypad);
    };
    let smax = svd.singular_values.max();
    let cutoff = smax * RANK_TOL.max(f64::EPSILON * x.nrows().max(p) as f64);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let uty = u.tr_mul(y);
    let mut coef = DVector::zeros(p);
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            let scale = uty[k] / s;
            coef += v_t.row(k).transpose() * scale;
        }
    }
    LstsqSolution { coef, rank }
}

/// Cholesky solve of a symmetric positive-definite system, refusing
/// badly conditioned matrices.
pub fn solve_spd_checked(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Some(DVector::zeros(0));
    }
    let max_diag = a.diagonal().iter().cloned().fold(0.0_f64, f64::max);
    if !(max_diag > 0.0) || !max_diag.is_finite() {
        return None;
    }
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    // Pivot ratio is a cheap proxy for the reciprocal condition number.
    if min_pivot / max_diag < 1e-11 {
        return None;
    }
    let sol = chol.solve(b);
    if sol.iter().all(|v| v.is_finite()) {
        Some(sol)
    } else {
        None
    }
}

/// Minimum-norm solution of a square (possibly singular) system together
/// with its numerical rank and an orthonormal basis of the null space.
pub struct PinvSolution {
    pub x: DVector<f64>,
    pub rank: usize,
    pub null_space: Vec<DVector<f64>>,
}

pub fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> PinvSolution {
    let n = a.ncols();
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = smax * RANK_TOL;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let utb = u.tr_mul(b);
    let mut x = DVector::zeros(n);
    let mut rank = 0;
    let mut null_space = Vec::new();
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            x += v_t.row(k).transpose() * (utb[k] / s);
        } else {
            null_space.push(v_t.row(k).transpose());
        }
    }
    PinvSolution { x, rank, null_space }
}

/// Moore-Penrose inverse of a small square matrix.
pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.pseudo_inverse(smax * RANK_TOL)
        .unwrap_or_else(|_| DMatrix::zeros(a.ncols(), a.nrows()))
}

/// Sample covariance (divisor n - 1) of the rows of `x`.
pub fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let p = x.ncols();
    if n < 2 {
        return DMatrix::zeros(p, p);
    }
    let means = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    centered.tr_mul(&centered) / (n as f64 - 1.0)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (divisor n - 1).
pub fn sd(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
}
