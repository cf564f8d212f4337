//! Cross-validated convex stacking of a learner library.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::learners::{clip_probability, Family, FittedLearner, LearnerKind, LearnerSpec};
use crate::linalg;

pub const DEFAULT_FOLDS: usize = 10;

#[derive(Debug, Clone)]
pub struct SuperLearnerConfig {
    pub library: Vec<LearnerSpec>,
    pub folds: usize,
    pub seed: u64,
}

impl SuperLearnerConfig {
    pub fn new(library: Vec<LearnerSpec>, folds: usize, seed: u64) -> Result<Self> {
        if library.is_empty() {
            return Err(Error::ConfigError("Super Learner library is empty".into()));
        }
        if folds < 2 {
            return Err(Error::ConfigError(format!(
                "Super Learner needs at least 2 folds, got {folds}"
            )));
        }
        Ok(SuperLearnerConfig {
            library,
            folds,
            seed,
        })
    }

    fn check_family(&self, family: Family) -> Result<()> {
        if family == Family::Binary {
            if let Some(s) = self.library.iter().find(|s| s.family != Family::Binary) {
                return Err(Error::ConfigError(format!(
                    "library member {} is not binary-family but the target is binary",
                    s.name()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvRisk {
    pub members: Vec<f64>,
    pub ensemble: f64,
}

#[derive(Debug, Clone)]
pub struct SuperLearnerFit {
    pub member_fits: Vec<FittedLearner>,
    pub weights: DVector<f64>,
    pub cv_risk: CvRisk,
    pub fold_assignment: Vec<usize>,
    pub family: Family,
}

impl SuperLearnerFit {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(x.nrows());
        for (fit, &w) in self.member_fits.iter().zip(self.weights.iter()) {
            if w != 0.0 {
                out += fit.predict(x)? * w;
            }
        }
        if self.family == Family::Binary {
            out.apply(|p| *p = clip_probability(*p));
        }
        Ok(out)
    }
}

/// Random partition of `0..n` into `v` folds whose sizes differ by at most
/// one. Rows are shuffled with the seed and dealt round-robin.
pub fn make_folds(n: usize, v: usize, seed: u64) -> Result<Vec<usize>> {
    if v < 2 || v > n {
        return Err(Error::ConfigError(format!(
            "cannot split {n} rows into {v} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        folds[row] = pos % v;
    }
    Ok(folds)
}

/// Nearest-neighbour members cannot use more neighbours than training rows.
fn fit_member(spec: &LearnerSpec, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<FittedLearner> {
    match spec.kind {
        LearnerKind::NearestNeighbor { k } if k > x.nrows() => {
            let capped = LearnerSpec {
                kind: LearnerKind::NearestNeighbor { k: x.nrows() },
                ..*spec
            };
            capped.fit(x, y)
        }
        _ => spec.fit(x, y),
    }
}

/// Out-of-fold predictions: entry `(i, l)` comes from member `l` trained on
/// every fold except `folds[i]`.
pub fn cv_prediction_matrix(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    library: &[LearnerSpec],
    folds: &[usize],
) -> Result<DMatrix<f64>> {
    if folds.len() != x.nrows() || y.len() != x.nrows() {
        return Err(Error::ConfigError(
            "fold assignment, features and target differ in length".into(),
        ));
    }
    let v = folds.iter().copied().max().map_or(0, |m| m + 1);
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..v)
        .map(|k| {
            let (valid, train): (Vec<usize>, Vec<usize>) =
                (0..folds.len()).partition(|&i| folds[i] == k);
            (train, valid)
        })
        .collect();
    if let Some(k) = splits.iter().position(|(t, v)| t.is_empty() || v.is_empty()) {
        return Err(Error::ConfigError(format!("fold {k} is empty or covers every row")));
    }
    let tasks: Vec<(usize, usize)> = (0..library.len())
        .flat_map(|l| (0..v).map(move |k| (l, k)))
        .collect();
    let blocks: Vec<Result<DVector<f64>>> = tasks
        .par_iter()
        .map(|&(l, k)| {
            let (train, valid) = &splits[k];
            let xt = x.select_rows(train);
            let yt = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
            let fit = fit_member(&library[l], &xt, &yt)?;
            fit.predict(&x.select_rows(valid))
        })
        .collect();
    let mut p = DMatrix::zeros(x.nrows(), library.len());
    for (&(l, k), block) in tasks.iter().zip(blocks) {
        let block = block?;
        for (r, &i) in splits[k].1.iter().enumerate() {
            p[(i, l)] = block[r];
        }
    }
    Ok(p)
}

fn mse(p: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> f64 {
    (y - p * w).norm_squared() / y.len() as f64
}

/// Minimiser of `|y - P w|^2 / n` over the probability simplex.
///
/// Solved exactly by a primal active-set method on the quadratic program,
/// started from the best single member, so the returned weights never do
/// worse than the best column. Non-finite intermediate results fall back to
/// that single member.
pub fn solve_simplex_weights(p: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let l = p.ncols();
    let n = y.len() as f64;
    let member_risk: Vec<f64> = (0..l)
        .map(|j| (y - p.column(j)).norm_squared() / n)
        .collect();
    let best = (0..l)
        .min_by(|&a, &b| member_risk[a].total_cmp(&member_risk[b]))
        .unwrap_or(0);
    let mut fallback = DVector::zeros(l);
    fallback[best] = 1.0;
    if l == 1 {
        return fallback;
    }

    let q = p.tr_mul(p) / n;
    let b = p.tr_mul(y) / n;
    let scale = q.diagonal().amax().max(f64::MIN_POSITIVE);
    let tol = 1e-13 * scale;

    let mut w = fallback.clone();
    let mut passive = vec![false; l];
    passive[best] = true;

    // Equality-constrained minimiser over the passive set.
    let solve_passive = |passive: &[bool]| -> (DVector<f64>, f64) {
        let idx: Vec<usize> = (0..l).filter(|&j| passive[j]).collect();
        let m = idx.len();
        let mut kkt = DMatrix::zeros(m + 1, m + 1);
        let mut rhs = DVector::zeros(m + 1);
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                kkt[(r, c)] = q[(i, j)];
            }
            kkt[(r, m)] = 1.0;
            kkt[(m, r)] = 1.0;
            rhs[r] = b[i];
        }
        rhs[m] = 1.0;
        let sol = linalg::pinv_solve(&kkt, &rhs).x;
        let mut z = DVector::zeros(l);
        for (r, &i) in idx.iter().enumerate() {
            z[i] = sol[r];
        }
        (z, sol[m])
    };

    for _ in 0..(10 * l + 10) {
        // KKT check: the multiplier of the sum constraint is `lambda` and a
        // free coordinate `j` would lower the objective if its reduced
        // gradient is negative.
        let grad = &q * &w - &b;
        let lambda = -(0..l)
            .filter(|&j| passive[j])
            .map(|j| grad[j])
            .sum::<f64>()
            / passive.iter().filter(|&&s| s).count() as f64;
        let entering = (0..l)
            .filter(|&j| !passive[j])
            .map(|j| (j, grad[j] + lambda))
            .filter(|&(_, r)| r < -tol)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((j, _)) = entering else { break };
        passive[j] = true;

        for _ in 0..(2 * l + 2) {
            let (z, _) = solve_passive(&passive);
            if (0..l).filter(|&i| passive[i]).all(|i| z[i] > 0.0) {
                w = z;
                break;
            }
            let mut alpha = 1.0_f64;
            for i in (0..l).filter(|&i| passive[i] && z[i] <= 0.0) {
                let denom = w[i] - z[i];
                if denom > 0.0 {
                    alpha = alpha.min(w[i] / denom);
                }
            }
            w = &w + (z - &w) * alpha;
            for i in 0..l {
                if passive[i] && w[i] <= 1e-15 {
                    passive[i] = false;
                    w[i] = 0.0;
                }
            }
            if !passive.iter().any(|&s| s) {
                break;
            }
        }
    }

    if w.iter().any(|v| !v.is_finite()) || !passive.iter().any(|&s| s) {
        return fallback;
    }
    w.apply(|v| *v = v.max(0.0));
    let total = w.sum();
    if !(total > 0.0) {
        return fallback;
    }
    w /= total;
    if mse(p, y, &w) > member_risk[best] {
        return fallback;
    }
    w
}

/// Fits every member on the full data and stacks them with weights chosen
/// on the cross-validated predictions.
pub fn fit_super_learner(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    family: Family,
    config: &SuperLearnerConfig,
) -> Result<SuperLearnerFit> {
    config.check_family(family)?;
    let folds = make_folds(x.nrows(), config.folds, config.seed)?;
    let p = cv_prediction_matrix(x, y, &config.library, &folds)?;
    let weights = solve_simplex_weights(&p, y);
    let n = y.len() as f64;
    let members = (0..p.ncols())
        .map(|j| (y - p.column(j)).norm_squared() / n)
        .collect();
    let cv_risk = CvRisk {
        members,
        ensemble: mse(&p, y, &weights),
    };
    let member_fits = config
        .library
        .par_iter()
        .map(|spec| fit_member(spec, x, y))
        .collect::<Result<Vec<_>>>()?;
    Ok(SuperLearnerFit {
        member_fits,
        weights,
        cv_risk,
        fold_assignment: folds,
        family,
    })
}
